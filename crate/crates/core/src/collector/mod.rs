//! The logging API embedded in the application tier.
//!
//! A host application calls [`Collector::handle_request_begin`] in the head
//! of every request and [`Collector::handle_request_end`] just before the
//! response is sent. The collector fuses HTTP, network, application and
//! GeoIP data, keeps the `open_sessions` table current and writes one
//! `log_session` row per visit and one `log_page` row per request.
//!
//! Session expiry is lazy: an idle session is closed when its token is next
//! seen, or by an explicit [`Collector::sweep_expired`] pass. A gap equal to
//! the timeout keeps the session alive; only a strictly longer gap ends it.

pub mod referrer;
pub mod replay;

use std::net::Ipv4Addr;
use std::sync::Arc;

use parking_lot::Mutex;
use url::Url;

use crate::enrichment::{primary_language, GeoIpTable, UaRegistry};
use crate::model::{EndReason, Gender, HttpMethod, ParamMap, ReferralClass, Timestamp, UserType};
use crate::storage::{
    serialize_map, AppPageResult, LogStore, OpenSession, PageRecord, SessionRecord, StorageError, Transaction,
};

pub use referrer::{classify_referrer, SearchEngineRegistry, SiteHosts};
pub use replay::{read_replay, write_replay, ReplayError, ReplayRecord, ReplayRequest};

pub const DEFAULT_TIMEOUT_SECS: i64 = 1800;

/// One HTTP request as seen by the application tier.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRequestEvent {
    pub client_ip: Ipv4Addr,
    pub timestamp: Timestamp,
    pub method: HttpMethod,
    pub url: String,
    pub referrer: Option<String>,
    pub user_agent: String,
    /// Raw `Accept-Language` header value.
    pub accept_language: Option<String>,
    pub session_token: String,
    /// Username of the authenticated application user, if any.
    pub auth_user: Option<String>,
    pub app_service: String,
    pub module: String,
    pub get_params: ParamMap,
    pub post_params: ParamMap,
    pub cookies: ParamMap,
    pub server_id: u16,
}

/// Keys of the rows written for one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PageHandle {
    pub opn_id: u64,
    pub page_log_id: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CollectError {
    #[error("collection of request from {} failed: {source}", event.client_ip)]
    Storage {
        event: Box<RawRequestEvent>,
        #[source]
        source: StorageError,
    },
    #[error("rejected request event: {reason}")]
    InvalidEvent { event: Box<RawRequestEvent>, reason: String },
    #[error("page log row {0} not found")]
    PageNotFound(u64),
    #[error(transparent)]
    Store(StorageError),
}

impl CollectError {
    /// The request that could not be logged, for callers that retry.
    pub fn event(&self) -> Option<&RawRequestEvent> {
        match self {
            CollectError::Storage { event, .. } | CollectError::InvalidEvent { event, .. } => Some(event),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CollectorConfig {
    /// Idle seconds after which a session ends (strictly longer gaps only).
    pub timeout_secs: i64,
    pub site_hosts: SiteHosts,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        CollectorConfig { timeout_secs: DEFAULT_TIMEOUT_SECS, site_hosts: SiteHosts::new(["www.server.com"]) }
    }
}

pub struct Collector {
    store: Arc<LogStore>,
    config: CollectorConfig,
    ua: UaRegistry,
    engines: SearchEngineRegistry,
    errors: Mutex<Vec<CollectError>>,
}

impl Collector {
    pub fn new(store: Arc<LogStore>, config: CollectorConfig) -> Self {
        Self::with_registries(store, config, UaRegistry::builtin().clone(), SearchEngineRegistry::builtin().clone())
    }

    pub fn with_registries(
        store: Arc<LogStore>,
        config: CollectorConfig,
        ua: UaRegistry,
        engines: SearchEngineRegistry,
    ) -> Self {
        Collector { store, config, ua, engines, errors: Mutex::new(Vec::new()) }
    }

    pub fn store(&self) -> &Arc<LogStore> {
        &self.store
    }

    pub fn config(&self) -> &CollectorConfig {
        &self.config
    }

    /// Resolves (or opens) the session for `event` and inserts its page row.
    pub fn handle_request_begin(&self, event: &RawRequestEvent, now: Timestamp) -> Result<PageHandle, CollectError> {
        if event.session_token.is_empty() {
            return Err(CollectError::InvalidEvent {
                event: Box::new(event.clone()),
                reason: "empty session token".into(),
            });
        }
        let timeout = self.config.timeout_secs;
        self.store
            .transaction(|tx| {
                let mut opn_id = None;
                if let Some(open) = tx.open_session(&event.session_token) {
                    if (now - open.last_activity).num_seconds() > timeout {
                        let token = open.session_token.clone();
                        end_open(tx, &token, EndReason::Timeout, None)?;
                    } else {
                        opn_id = Some(open.opn_id);
                    }
                }
                let user = event.auth_user.as_deref().and_then(|name| tx.user_by_name(name)).cloned();
                let opn_id = match opn_id {
                    Some(id) => {
                        tx.touch_open_session(&event.session_token, now)?;
                        id
                    }
                    None => {
                        let record = self.new_session_record(event, user.as_ref(), &tx.geoip());
                        let id = tx.insert_session(record)?;
                        tx.put_open_session(OpenSession {
                            session_token: event.session_token.clone(),
                            opn_id: id,
                            user_id: user.as_ref().map(|u| u.user_id),
                            started_at: now.min(event.timestamp),
                            last_activity: now,
                        })?;
                        id
                    }
                };
                let page = self.page_record(event, opn_id, user.as_ref().map(|u| u.user_id));
                let page_log_id = tx.insert_page(page)?;
                Ok(PageHandle { opn_id, page_log_id })
            })
            .map_err(|source| CollectError::Storage { event: Box::new(event.clone()), source })
    }

    /// Writes the application's end-of-request data onto the page row.
    pub fn handle_request_end(&self, page_log_id: u64, result: &AppPageResult) -> Result<(), CollectError> {
        self.store.transaction(|tx| tx.update_page_result(page_log_id, result)).map_err(|e| match e {
            StorageError::NotFound { .. } => CollectError::PageNotFound(page_log_id),
            other => CollectError::Store(other),
        })
    }

    /// Removes the open session for `token`, stamping the persisted session
    /// with `at` and `reason`. Returns false when no such session is open.
    pub fn end_session(&self, token: &str, reason: EndReason, at: Timestamp) -> bool {
        self.store
            .transaction(|tx| {
                if tx.open_session(token).is_none() {
                    return Ok(false);
                }
                end_open(tx, token, reason, Some(at)).map(|_| true)
            })
            .unwrap_or_else(|e| {
                self.errors.lock().push(CollectError::Store(e));
                false
            })
    }

    /// Ends every open session idle for strictly more than `timeout_secs`.
    pub fn sweep_expired(&self, now: Timestamp, timeout_secs: i64) -> usize {
        assert!(timeout_secs > 0, "timeout must be positive");
        self.store
            .transaction(|tx| {
                let tokens = tx.idle_open_sessions(now, timeout_secs);
                for token in &tokens {
                    end_open(tx, token, EndReason::Timeout, None)?;
                }
                Ok::<_, StorageError>(tokens.len())
            })
            .unwrap_or_else(|e| {
                self.errors.lock().push(CollectError::Store(e));
                0
            })
    }

    /// Non-failing front door for request handlers: collection problems are
    /// queued for [`Collector::take_errors`] instead of reaching the page.
    pub fn observe_begin(&self, event: &RawRequestEvent, now: Timestamp) -> Option<PageHandle> {
        match self.handle_request_begin(event, now) {
            Ok(handle) => Some(handle),
            Err(e) => {
                self.errors.lock().push(e);
                None
            }
        }
    }

    pub fn observe_end(&self, handle: Option<PageHandle>, result: &AppPageResult) {
        if let Some(h) = handle {
            if let Err(e) = self.handle_request_end(h.page_log_id, result) {
                self.errors.lock().push(e);
            }
        }
    }

    pub fn take_errors(&self) -> Vec<CollectError> {
        std::mem::take(&mut *self.errors.lock())
    }

    /// Feeds replay records in file order. Requests use their own timestamp
    /// as the clock; user rows go to `user_info`.
    pub fn replay<I>(&self, records: I) -> Result<ReplaySummary, CollectError>
    where
        I: IntoIterator<Item = ReplayRecord>,
    {
        let mut summary = ReplaySummary::default();
        for record in records {
            match record {
                ReplayRecord::User(user) => {
                    self.store.insert_user(user).map_err(CollectError::Store)?;
                    summary.users += 1;
                }
                ReplayRecord::Request(req) => {
                    let handle = self.handle_request_begin(&req.event, req.event.timestamp)?;
                    if let Some(result) = &req.result {
                        self.handle_request_end(handle.page_log_id, result)?;
                    }
                    summary.requests += 1;
                }
                ReplayRecord::Logout { token, timestamp } => {
                    if self.end_session(&token, EndReason::Logout, timestamp) {
                        summary.logouts += 1;
                    }
                }
            }
        }
        Ok(summary)
    }

    fn new_session_record(
        &self,
        event: &RawRequestEvent,
        user: Option<&crate::storage::UserInfo>,
        geoip: &GeoIpTable,
    ) -> SessionRecord {
        let mut record = SessionRecord::guest(event.client_ip, event.timestamp);
        match user {
            Some(u) => {
                record.user_id = Some(u.user_id);
                record.username = Some(u.username.clone());
                record.user_type = u.user_type;
                record.gender = u.gender;
            }
            None => {
                // Unknown account names are kept for auditing but the visit stays a guest one.
                record.username = event.auth_user.clone();
                record.user_type = UserType::Guest;
                record.gender = Gender::NotApplicable;
            }
        }
        record.user_agent = event.user_agent.clone();
        let language = event.accept_language.as_deref().and_then(primary_language);
        record.apply_profile(self.ua.parse_user_agent(&event.user_agent).with_language(language));
        record.country_code = geoip.lookup_country(event.client_ip);
        record.referrer_url = event.referrer.clone().filter(|r| !r.is_empty() && r != "-");
        record.referral_class = classify_referrer(event.referrer.as_deref(), &self.config.site_hosts, &self.engines);
        if let (ReferralClass::SearchEngine(name), Some(r)) = (&record.referral_class, record.referrer_url.as_deref()) {
            record.search_engine = Some(name.clone());
            record.search_keywords = self.engines.search_terms(r).and_then(|(_, terms)| terms);
        }
        record
    }

    fn page_record(&self, event: &RawRequestEvent, opn_id: u64, uid: Option<u64>) -> PageRecord {
        let malformed = Url::parse(&event.url).map(|u| !u.has_host()).unwrap_or(true);
        let mut session_vars = ParamMap::new();
        session_vars.insert("ses_id".into(), opn_id.to_string());
        session_vars.insert("ses_uid".into(), uid.map(|u| u.to_string()).unwrap_or_default());
        PageRecord {
            log_details_id: 0,
            log_opn_id: opn_id,
            log_uid: uid,
            log_username: uid.and(event.auth_user.clone()),
            log_datetime: event.timestamp,
            log_date: event.timestamp.date(),
            log_server: event.server_id,
            log_app_service: event.app_service.clone(),
            log_module: event.module.clone(),
            log_url: event.url.clone(),
            log_url_malformed: malformed,
            log_title: String::new(),
            log_web_message: String::new(),
            log_subtitle: String::new(),
            log_cookie_serialize: serialize_map(&event.cookies),
            log_session_serialize: serialize_map(&session_vars),
            log_post_serialize: serialize_map(&event.post_params),
            log_get_serialize: serialize_map(&event.get_params),
            log_page_load_time: 0.0,
            log_error: None,
        }
    }
}

/// Timeouts are stamped at the last activity; logouts at the given instant.
fn end_open(
    tx: &mut Transaction<'_>,
    token: &str,
    reason: EndReason,
    at: Option<Timestamp>,
) -> Result<(), StorageError> {
    let open = tx
        .remove_open_session(token)
        .ok_or_else(|| StorageError::NotFound { table: "open_sessions", id: token.to_string() })?;
    let ended_at = at.unwrap_or(open.last_activity).max(open.started_at);
    tx.close_session(open.opn_id, ended_at, reason)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub users: usize,
    pub requests: usize,
    pub logouts: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_timestamp;
    use crate::storage::{StoreOptions, UserInfo};

    fn ts(s: &str) -> Timestamp {
        parse_timestamp(s).unwrap()
    }

    fn event(token: &str, at: &str) -> RawRequestEvent {
        RawRequestEvent {
            client_ip: Ipv4Addr::new(193, 140, 253, 80),
            timestamp: ts(at),
            method: HttpMethod::Get,
            url: "http://www.server.com/index.php".into(),
            referrer: Some("http://www.server.com/".into()),
            user_agent: "Mozilla/5.0 (X11; Ubuntu; Linux x86_64; rv:15.0) Gecko/20100101 Firefox/15.0.1".into(),
            accept_language: Some("tr-TR,tr;q=0.9".into()),
            session_token: token.into(),
            auth_user: None,
            app_service: "gate".into(),
            module: "info".into(),
            get_params: ParamMap::new(),
            post_params: ParamMap::new(),
            cookies: ParamMap::new(),
            server_id: 16,
        }
    }

    fn collector() -> Collector {
        let store = Arc::new(LogStore::new());
        store.set_geoip(Arc::new(GeoIpTable::builtin().clone()));
        Collector::new(store, CollectorConfig::default())
    }

    fn begin(c: &Collector, e: &RawRequestEvent) -> PageHandle {
        c.handle_request_begin(e, e.timestamp).unwrap()
    }

    #[test]
    fn first_request_creates_session_and_page() {
        let c = collector();
        let h = begin(&c, &event("a", "2021-08-15 17:30:51"));
        assert_eq!(h, PageHandle { opn_id: 1, page_log_id: 1 });
        let r = c.store().read();
        assert_eq!(r.sessions().len(), 1);
        assert_eq!(r.pages().len(), 1);
        let s = &r.sessions()[0];
        assert_eq!(s.browser_name, "Firefox");
        assert_eq!(s.country_code.unwrap().as_str(), "TR");
        assert_eq!(s.referral_class, ReferralClass::Internal);
        assert_eq!(s.language.as_deref(), Some("tr-TR"));
    }

    #[test]
    fn continuation_reuses_session() {
        let c = collector();
        begin(&c, &event("a", "2021-08-15 17:30:51"));
        let h = begin(&c, &event("a", "2021-08-15 17:31:01"));
        assert_eq!(h, PageHandle { opn_id: 1, page_log_id: 2 });
        let r = c.store().read();
        assert_eq!(r.pages().iter().filter(|p| p.log_opn_id == 1).count(), 2);
    }

    #[test]
    fn same_ip_different_tokens_are_separate_sessions() {
        let c = collector();
        let a = begin(&c, &event("a", "2021-08-15 17:30:51"));
        let b = begin(&c, &event("b", "2021-08-15 17:30:51"));
        assert_ne!(a.opn_id, b.opn_id);
    }

    #[test]
    fn sessions_survive_midnight() {
        let c = collector();
        let a = begin(&c, &event("a", "2021-08-15 23:55:00"));
        let b = begin(&c, &event("a", "2021-08-16 00:10:00"));
        assert_eq!(a.opn_id, b.opn_id);
        let r = c.store().read();
        assert_ne!(r.pages()[0].log_date, r.pages()[1].log_date);
    }

    #[test]
    fn expiry_boundary_is_strict() {
        for (gap, same) in [(1799, true), (1800, true), (1801, false)] {
            let c = collector();
            let first = event("a", "2021-08-15 10:00:00");
            let mut second = event("a", "2021-08-15 10:00:00");
            second.timestamp = first.timestamp + chrono::Duration::seconds(gap);
            let a = begin(&c, &first);
            let b = begin(&c, &second);
            assert_eq!(a.opn_id == b.opn_id, same, "gap {gap}");
            if !same {
                let s = c.store().session(a.opn_id).unwrap();
                assert_eq!(s.end_reason, Some(EndReason::Timeout));
                assert_eq!(s.ended_at, Some(first.timestamp));
            }
        }
    }

    #[test]
    fn request_end_updates_in_place_and_is_idempotent() {
        let c = collector();
        let h = begin(&c, &event("a", "2021-08-15 17:30:51"));
        let result = AppPageResult {
            page_title: "WebGate".into(),
            web_message: "Welcome to WebGate".into(),
            subtitle: "Info :: You can review your access and security information here".into(),
            page_load_time: crate::storage::parse_decimal_seconds("0,0266").unwrap(),
            error_text: None,
        };
        c.handle_request_end(h.page_log_id, &result).unwrap();
        let once = c.store().page(1).unwrap();
        assert_eq!(once.log_page_load_time, 0.0266);
        c.handle_request_end(h.page_log_id, &result).unwrap();
        assert_eq!(c.store().page(1).unwrap(), once);
    }

    #[test]
    fn request_end_unknown_page() {
        let c = collector();
        let result = AppPageResult {
            page_title: String::new(),
            web_message: String::new(),
            subtitle: String::new(),
            page_load_time: 0.0,
            error_text: None,
        };
        assert!(matches!(c.handle_request_end(999, &result), Err(CollectError::PageNotFound(999))));
    }

    #[test]
    fn end_session_is_idempotent() {
        let c = collector();
        begin(&c, &event("a", "2021-08-15 17:30:51"));
        assert_eq!(c.store().read().open_sessions().len(), 1);
        assert!(c.end_session("a", EndReason::Logout, ts("2021-08-15 17:35:00")));
        assert_eq!(c.store().read().open_sessions().len(), 0);
        assert!(!c.end_session("a", EndReason::Logout, ts("2021-08-15 17:36:00")));
        assert!(!c.end_session("nope", EndReason::Logout, ts("2021-08-15 17:36:00")));
        let s = c.store().session(1).unwrap();
        assert_eq!(s.end_reason, Some(EndReason::Logout));
        assert_eq!(s.ended_at, Some(ts("2021-08-15 17:35:00")));
    }

    #[test]
    fn logout_then_same_token_opens_new_session() {
        let c = collector();
        begin(&c, &event("a", "2021-08-15 17:30:51"));
        c.end_session("a", EndReason::Logout, ts("2021-08-15 17:31:00"));
        assert_eq!(begin(&c, &event("a", "2021-08-15 17:32:00")).opn_id, 2);
    }

    #[test]
    fn sweep_counts_only_strictly_idle() {
        let c = collector();
        begin(&c, &event("recent", "2021-08-15 10:33:10"));
        begin(&c, &event("stale", "2021-08-15 10:00:00"));
        begin(&c, &event("edge", "2021-08-15 10:03:20"));
        let now = ts("2021-08-15 10:33:20");
        // recent: 10 s idle, stale: 2000 s, edge: exactly 1800 s.
        assert_eq!(c.sweep_expired(now, 1800), 1);
        assert_eq!(c.sweep_expired(now, 1800), 0);
        assert_eq!(c.store().read().open_sessions().len(), 2);
        assert_eq!(collector().sweep_expired(now, 1800), 0);
    }

    #[test]
    fn malformed_url_is_logged_with_flag() {
        let c = collector();
        let mut e = event("a", "2021-08-15 17:30:51");
        e.url = "::not a url".into();
        begin(&c, &e);
        let p = c.store().page(1).unwrap();
        assert!(p.log_url_malformed);
        assert_eq!(p.log_url, "::not a url");
    }

    #[test]
    fn storage_failure_carries_event_and_does_not_panic() {
        let store = Arc::new(LogStore::with_options(StoreOptions { max_pages: Some(1), ..Default::default() }));
        let c = Collector::new(store, CollectorConfig::default());
        let e = event("a", "2021-08-15 17:30:51");
        assert!(c.observe_begin(&e, e.timestamp).is_some());
        let second = event("b", "2021-08-15 17:30:52");
        assert!(c.observe_begin(&second, second.timestamp).is_none());
        let errors = c.take_errors();
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].event().unwrap().session_token, "b");
        // The failed request's session insert was rolled back with it.
        assert_eq!(c.store().read().sessions().len(), 1);
        assert!(c.store().read().open_sessions().iter().all(|o| o.session_token == "a"));
    }

    #[test]
    fn logged_in_user_fields_come_from_the_directory() {
        let c = collector();
        c.store()
            .insert_user(UserInfo {
                user_id: 166553,
                username: "user9".into(),
                user_type: UserType::Student,
                gender: Gender::Female,
            })
            .unwrap();
        let mut e = event("a", "2021-09-02 10:12:18");
        e.auth_user = Some("user9".into());
        begin(&c, &e);
        let s = c.store().session(1).unwrap();
        assert_eq!((s.user_id, s.user_type, s.gender), (Some(166553), UserType::Student, Gender::Female));
        let p = c.store().page(1).unwrap();
        assert_eq!(p.log_uid, Some(166553));
        assert_eq!(p.log_username.as_deref(), Some("user9"));
        assert_eq!(p.log_session_serialize, r#"{"ses_id":"1","ses_uid":"166553"}"#);
    }

    #[test]
    fn search_referrer_records_engine_and_keywords() {
        let c = collector();
        let mut e = event("a", "2021-09-02 10:12:18");
        e.referrer = Some("http://www.google.com/search?q=Campus".into());
        begin(&c, &e);
        let s = c.store().session(1).unwrap();
        assert_eq!(s.search_engine.as_deref(), Some("google"));
        assert_eq!(s.search_keywords.as_deref(), Some("campus"));
    }

    #[test]
    fn empty_token_is_rejected() {
        let c = collector();
        let e = event("", "2021-09-02 10:12:18");
        assert!(matches!(c.handle_request_begin(&e, e.timestamp), Err(CollectError::InvalidEvent { .. })));
    }
}
