//! Embedded relational log store.
//!
//! Five tables: `user_info`, `open_sessions`, `log_geoip`, `log_session` and
//! `log_page`. Every `log_page` row references a `log_session` row through
//! `log_opn_id`. Keys are issued by the store in increasing order.
//!
//! Writers go through [`LogStore::transaction`]: the closure runs under the
//! write lock and every mutation is journaled, so an error rolls the whole
//! transaction back. Readers take a [`StoreReader`] and see committed state
//! only.

mod csv_io;
mod records;
mod serialize;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::{RwLock, RwLockReadGuard};

use crate::enrichment::GeoIpTable;
use crate::model::{EndReason, Timestamp};

pub use csv_io::{LOG_PAGE_COLUMNS, LOG_SESSION_COLUMNS, OPEN_SESSIONS_COLUMNS, TABLE_FILES, USER_INFO_COLUMNS};
pub use records::{parse_decimal_seconds, AppPageResult, OpenSession, PageRecord, SessionRecord, UserInfo};
pub use serialize::{deserialize_map, serialize_map, MapParseError};

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("foreign key log_opn_id={opn_id} references no log_session row")]
    ForeignKey { opn_id: u64 },
    #[error("{table} row {id} not found")]
    NotFound { table: &'static str, id: String },
    #[error("duplicate key in {table}: {key}")]
    Duplicate { table: &'static str, key: String },
    #[error("{table} is full ({limit} rows)")]
    CapacityExceeded { table: &'static str, limit: usize },
    #[error("{path}: {message}")]
    Import { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Limits for a store instance. A bounded store rejects writes past the limit
/// instead of growing without end.
#[derive(Debug, Clone, Default)]
pub struct StoreOptions {
    pub max_sessions: Option<usize>,
    pub max_pages: Option<usize>,
    /// Key issued to the first `log_session` row (defaults to 1).
    pub first_opn_id: Option<u64>,
    /// Key issued to the first `log_page` row (defaults to 1).
    pub first_page_id: Option<u64>,
}

#[derive(Debug, Default)]
pub(crate) struct Tables {
    users: BTreeMap<u64, UserInfo>,
    usernames: HashMap<String, u64>,
    open_sessions: HashMap<String, OpenSession>,
    sessions: Vec<SessionRecord>,
    pages: Vec<PageRecord>,
    geoip: Arc<GeoIpTable>,
    next_opn_id: u64,
    next_page_id: u64,
}

impl Tables {
    fn session_index(&self, opn_id: u64) -> Option<usize> {
        self.sessions.binary_search_by_key(&opn_id, |s| s.opn_id).ok()
    }

    fn page_index(&self, id: u64) -> Option<usize> {
        self.pages.binary_search_by_key(&id, |p| p.log_details_id).ok()
    }
}

enum Undo {
    User(u64),
    Session,
    Page,
    Open { token: String, previous: Option<OpenSession> },
    SessionEnd { index: usize, ended_at: Option<Timestamp>, reason: Option<EndReason> },
    PageBody { index: usize, previous: Box<PageRecord> },
    Counters { next_opn_id: u64, next_page_id: u64 },
}

#[derive(Debug)]
pub struct LogStore {
    tables: RwLock<Tables>,
    options: StoreOptions,
}

impl Default for LogStore {
    fn default() -> Self {
        Self::new()
    }
}

impl LogStore {
    pub fn new() -> Self {
        Self::with_options(StoreOptions::default())
    }

    pub fn with_options(options: StoreOptions) -> Self {
        let tables = Tables {
            next_opn_id: options.first_opn_id.unwrap_or(1).max(1),
            next_page_id: options.first_page_id.unwrap_or(1).max(1),
            ..Tables::default()
        };
        LogStore { tables: RwLock::new(tables), options }
    }

    /// Runs `work` atomically: on `Err` every mutation it made is undone.
    pub fn transaction<T, E>(&self, work: impl FnOnce(&mut Transaction<'_>) -> Result<T, E>) -> Result<T, E> {
        let mut guard = self.tables.write();
        let mut tx = Transaction { tables: &mut guard, options: &self.options, journal: Vec::new() };
        let counters = Undo::Counters { next_opn_id: tx.tables.next_opn_id, next_page_id: tx.tables.next_page_id };
        tx.journal.push(counters);
        match work(&mut tx) {
            Ok(value) => Ok(value),
            Err(e) => {
                tx.rollback();
                Err(e)
            }
        }
    }

    pub fn read(&self) -> StoreReader<'_> {
        StoreReader { tables: self.tables.read() }
    }

    pub fn set_geoip(&self, table: Arc<GeoIpTable>) {
        self.tables.write().geoip = table;
    }

    pub fn geoip(&self) -> Arc<GeoIpTable> {
        self.tables.read().geoip.clone()
    }

    pub fn insert_user(&self, user: UserInfo) -> Result<(), StorageError> {
        self.transaction(|tx| tx.insert_user(user))
    }

    pub fn insert_session(&self, record: SessionRecord) -> Result<u64, StorageError> {
        self.transaction(|tx| tx.insert_session(record))
    }

    pub fn insert_page(&self, record: PageRecord) -> Result<u64, StorageError> {
        self.transaction(|tx| tx.insert_page(record))
    }

    pub fn session(&self, opn_id: u64) -> Option<SessionRecord> {
        self.read().session(opn_id).cloned()
    }

    pub fn page(&self, id: u64) -> Option<PageRecord> {
        self.read().page(id).cloned()
    }

    pub fn user_by_name(&self, username: &str) -> Option<UserInfo> {
        self.read().user_by_name(username).cloned()
    }
}

/// Mutable view handed to [`LogStore::transaction`] closures.
pub struct Transaction<'a> {
    tables: &'a mut Tables,
    options: &'a StoreOptions,
    journal: Vec<Undo>,
}

impl Transaction<'_> {
    fn rollback(&mut self) {
        while let Some(step) = self.journal.pop() {
            let t = &mut *self.tables;
            match step {
                Undo::User(id) => {
                    if let Some(user) = t.users.remove(&id) {
                        t.usernames.remove(&user.username);
                    }
                }
                Undo::Session => {
                    t.sessions.pop();
                }
                Undo::Page => {
                    t.pages.pop();
                }
                Undo::Open { token, previous } => match previous {
                    Some(open) => {
                        t.open_sessions.insert(token, open);
                    }
                    None => {
                        t.open_sessions.remove(&token);
                    }
                },
                Undo::SessionEnd { index, ended_at, reason } => {
                    t.sessions[index].ended_at = ended_at;
                    t.sessions[index].end_reason = reason;
                }
                Undo::PageBody { index, previous } => t.pages[index] = *previous,
                Undo::Counters { next_opn_id, next_page_id } => {
                    t.next_opn_id = next_opn_id;
                    t.next_page_id = next_page_id;
                }
            }
        }
    }

    pub fn insert_user(&mut self, user: UserInfo) -> Result<(), StorageError> {
        if self.tables.users.contains_key(&user.user_id) {
            return Err(StorageError::Duplicate { table: "user_info", key: user.user_id.to_string() });
        }
        if self.tables.usernames.contains_key(&user.username) {
            return Err(StorageError::Duplicate { table: "user_info", key: user.username });
        }
        if user.user_type == crate::model::UserType::Guest {
            return Err(StorageError::Constraint("user_info rows cannot be guests".into()));
        }
        if user.user_type.is_genderless() && user.gender != crate::model::Gender::NotApplicable {
            return Err(StorageError::Constraint(format!(
                "user_info {}: {} accounts carry gender not_applicable",
                user.username, user.user_type
            )));
        }
        self.tables.usernames.insert(user.username.clone(), user.user_id);
        self.journal.push(Undo::User(user.user_id));
        self.tables.users.insert(user.user_id, user);
        Ok(())
    }

    pub fn user_by_name(&self, username: &str) -> Option<&UserInfo> {
        let id = self.tables.usernames.get(username)?;
        self.tables.users.get(id)
    }

    pub fn geoip(&self) -> Arc<GeoIpTable> {
        self.tables.geoip.clone()
    }

    pub fn insert_session(&mut self, mut record: SessionRecord) -> Result<u64, StorageError> {
        record.validate()?;
        if let Some(limit) = self.options.max_sessions {
            if self.tables.sessions.len() >= limit {
                return Err(StorageError::CapacityExceeded { table: "log_session", limit });
            }
        }
        let id = self.tables.next_opn_id;
        record.opn_id = id;
        self.tables.next_opn_id += 1;
        self.tables.sessions.push(record);
        self.journal.push(Undo::Session);
        Ok(id)
    }

    pub fn insert_page(&mut self, mut record: PageRecord) -> Result<u64, StorageError> {
        record.validate()?;
        if self.tables.session_index(record.log_opn_id).is_none() {
            return Err(StorageError::ForeignKey { opn_id: record.log_opn_id });
        }
        if let Some(limit) = self.options.max_pages {
            if self.tables.pages.len() >= limit {
                return Err(StorageError::CapacityExceeded { table: "log_page", limit });
            }
        }
        let id = self.tables.next_page_id;
        record.log_details_id = id;
        self.tables.next_page_id += 1;
        self.tables.pages.push(record);
        self.journal.push(Undo::Page);
        Ok(id)
    }

    /// Writes end-of-request application data onto an existing page row.
    pub fn update_page_result(&mut self, id: u64, result: &AppPageResult) -> Result<(), StorageError> {
        result.validate()?;
        let index = self
            .tables
            .page_index(id)
            .ok_or_else(|| StorageError::NotFound { table: "log_page", id: id.to_string() })?;
        let page = &mut self.tables.pages[index];
        let previous = Box::new(page.clone());
        page.log_title = result.page_title.clone();
        page.log_web_message = result.web_message.clone();
        page.log_subtitle = result.subtitle.clone();
        page.log_page_load_time = result.page_load_time;
        page.log_error = result.error_text.clone();
        self.journal.push(Undo::PageBody { index, previous });
        Ok(())
    }

    pub fn close_session(&mut self, opn_id: u64, ended_at: Timestamp, reason: EndReason) -> Result<(), StorageError> {
        let index = self
            .tables
            .session_index(opn_id)
            .ok_or_else(|| StorageError::NotFound { table: "log_session", id: opn_id.to_string() })?;
        let session = &mut self.tables.sessions[index];
        if ended_at < session.started_at {
            return Err(StorageError::Constraint(format!("log_session {opn_id}: end precedes start")));
        }
        self.journal.push(Undo::SessionEnd { index, ended_at: session.ended_at, reason: session.end_reason });
        session.ended_at = Some(ended_at);
        session.end_reason = Some(reason);
        Ok(())
    }

    pub fn open_session(&self, token: &str) -> Option<&OpenSession> {
        self.tables.open_sessions.get(token)
    }

    pub fn put_open_session(&mut self, open: OpenSession) -> Result<(), StorageError> {
        if open.last_activity < open.started_at {
            return Err(StorageError::Constraint(format!(
                "open_sessions {}: last_activity precedes started_at",
                open.session_token
            )));
        }
        if self.tables.session_index(open.opn_id).is_none() {
            return Err(StorageError::ForeignKey { opn_id: open.opn_id });
        }
        let token = open.session_token.clone();
        let previous = self.tables.open_sessions.insert(token.clone(), open);
        self.journal.push(Undo::Open { token, previous });
        Ok(())
    }

    /// Refreshes `last_activity` of an open session.
    pub fn touch_open_session(&mut self, token: &str, now: Timestamp) -> Result<(), StorageError> {
        let open = self
            .tables
            .open_sessions
            .get_mut(token)
            .ok_or_else(|| StorageError::NotFound { table: "open_sessions", id: token.to_string() })?;
        let previous = Some(open.clone());
        open.last_activity = open.last_activity.max(now);
        self.journal.push(Undo::Open { token: token.to_string(), previous });
        Ok(())
    }

    pub fn remove_open_session(&mut self, token: &str) -> Option<OpenSession> {
        let removed = self.tables.open_sessions.remove(token)?;
        self.journal.push(Undo::Open { token: token.to_string(), previous: Some(removed.clone()) });
        Some(removed)
    }

    /// Tokens of open sessions idle for strictly more than `timeout_secs`.
    pub fn idle_open_sessions(&self, now: Timestamp, timeout_secs: i64) -> Vec<String> {
        let mut tokens: Vec<(u64, String)> = self
            .tables
            .open_sessions
            .values()
            .filter(|o| (now - o.last_activity).num_seconds() > timeout_secs)
            .map(|o| (o.opn_id, o.session_token.clone()))
            .collect();
        tokens.sort();
        tokens.into_iter().map(|(_, t)| t).collect()
    }
}

/// Read-only view of committed state.
pub struct StoreReader<'a> {
    tables: RwLockReadGuard<'a, Tables>,
}

impl StoreReader<'_> {
    pub fn sessions(&self) -> &[SessionRecord] {
        &self.tables.sessions
    }

    pub fn pages(&self) -> &[PageRecord] {
        &self.tables.pages
    }

    pub fn users(&self) -> impl Iterator<Item = &UserInfo> {
        self.tables.users.values()
    }

    /// Open sessions ordered by `opn_id`.
    pub fn open_sessions(&self) -> Vec<&OpenSession> {
        let mut open: Vec<&OpenSession> = self.tables.open_sessions.values().collect();
        open.sort_by_key(|o| o.opn_id);
        open
    }

    pub fn geoip(&self) -> &GeoIpTable {
        &self.tables.geoip
    }

    pub fn session(&self, opn_id: u64) -> Option<&SessionRecord> {
        self.tables.session_index(opn_id).map(|i| &self.tables.sessions[i])
    }

    pub fn page(&self, id: u64) -> Option<&PageRecord> {
        self.tables.page_index(id).map(|i| &self.tables.pages[i])
    }

    pub fn user_by_name(&self, username: &str) -> Option<&UserInfo> {
        let id = self.tables.usernames.get(username)?;
        self.tables.users.get(id)
    }

    /// Inner join `log_session ⋈ log_page` on `opn_id = log_opn_id`, in page order.
    pub fn join_sessions_pages(&self) -> impl Iterator<Item = (&SessionRecord, &PageRecord)> {
        self.tables.pages.iter().filter_map(move |p| self.session(p.log_opn_id).map(|s| (s, p)))
    }

    /// Average CSV-encoded row sizes, for capacity planning.
    pub fn stats(&self) -> StoreStats {
        let session_bytes: usize = self.tables.sessions.iter().map(csv_io::session_row_bytes).sum();
        let page_bytes: usize = self.tables.pages.iter().map(csv_io::page_row_bytes).sum();
        let avg = |total: usize, n: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
        StoreStats {
            users: self.tables.users.len(),
            open_sessions: self.tables.open_sessions.len(),
            sessions: self.tables.sessions.len(),
            pages: self.tables.pages.len(),
            avg_session_row_bytes: avg(session_bytes, self.tables.sessions.len()),
            avg_page_row_bytes: avg(page_bytes, self.tables.pages.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreStats {
    pub users: usize,
    pub open_sessions: usize,
    pub sessions: usize,
    pub pages: usize,
    pub avg_session_row_bytes: f64,
    pub avg_page_row_bytes: f64,
}
