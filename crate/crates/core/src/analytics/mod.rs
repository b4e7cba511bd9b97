//! Usage reports over a log store snapshot.
//!
//! Session dwell time is the sum of gaps between consecutive page requests;
//! the last page of a session has no successor and contributes nothing.
//! Pageviews per session is total pageviews over session count. Rendered
//! figures round half up: two decimals for ratios, whole minutes, tenths of
//! hours.

mod render;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::net::Ipv4Addr;

use chrono::Timelike;

pub use render::Report;

use crate::model::{Gender, ReferralClass, Timestamp, UserType};
use crate::storage::{PageRecord, SessionRecord, StoreReader};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("page times must be non-decreasing (index {index} goes back)")]
    Decreasing { index: usize },
    #[error("dwell time needs at least one page")]
    NoPages,
    #[error("pageviews per session is undefined for zero sessions")]
    NoSessions,
    #[error("top-n needs n >= 1")]
    ZeroN,
}

/// Seconds spent in a session given its page request times.
pub fn dwell_time(page_times: &[Timestamp]) -> Result<i64, AnalyticsError> {
    if page_times.is_empty() {
        return Err(AnalyticsError::NoPages);
    }
    let mut total = 0;
    for (i, w) in page_times.windows(2).enumerate() {
        let d = (w[1] - w[0]).num_seconds();
        if d < 0 {
            return Err(AnalyticsError::Decreasing { index: i + 1 });
        }
        total += d;
    }
    Ok(total)
}

/// Exact ratio, displayed to two decimals (round half up).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageviewsPerSession {
    pub pageviews: u64,
    pub sessions: u64,
}

impl PageviewsPerSession {
    pub fn value(&self) -> f64 {
        self.pageviews as f64 / self.sessions as f64
    }

    pub fn hundredths(&self) -> u64 {
        round_half_up(self.pageviews * 100, self.sessions)
    }
}

impl fmt::Display for PageviewsPerSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = self.hundredths();
        write!(f, "{}.{:02}", h / 100, h % 100)
    }
}

pub fn pageviews_per_session(pageviews: u64, sessions: u64) -> Result<PageviewsPerSession, AnalyticsError> {
    if sessions == 0 {
        return Err(AnalyticsError::NoSessions);
    }
    Ok(PageviewsPerSession { pageviews, sessions })
}

/// `round(num / den)` with halves going up, in integers.
fn round_half_up(num: u64, den: u64) -> u64 {
    (2 * num + den) / (2 * den)
}

pub fn seconds_to_minutes(secs: u64) -> u64 {
    round_half_up(secs, 60)
}

/// Hours in tenths, e.g. 778495 s -> 2162 (216.2 h).
pub fn seconds_to_tenth_hours(secs: u64) -> u64 {
    round_half_up(secs, 360)
}

pub fn format_tenths(t: u64) -> String {
    format!("{}.{}", t / 10, t % 10)
}

/// One session with at least one page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSummary {
    pub opn_id: u64,
    pub user_id: Option<u64>,
    pub username: Option<String>,
    pub user_type: UserType,
    pub gender: Gender,
    pub ip: Ipv4Addr,
    pub user_agent: String,
    pub pageview_count: u64,
    pub dwell_time: i64,
    pub start_hour: u32,
}

impl SessionSummary {
    pub fn is_guest(&self) -> bool {
        self.user_id.is_none()
    }
}

/// Read-only view over sessions and pages with per-session page times
/// computed once.
pub struct Analytics<'a> {
    sessions: &'a [SessionRecord],
    pages: &'a [PageRecord],
    /// Sorted page times per session, parallel to `sessions`.
    times: Vec<Vec<Timestamp>>,
}

impl<'a> Analytics<'a> {
    pub fn new(sessions: &'a [SessionRecord], pages: &'a [PageRecord]) -> Self {
        let index: HashMap<u64, usize> = sessions.iter().enumerate().map(|(i, s)| (s.opn_id, i)).collect();
        let mut times = vec![Vec::new(); sessions.len()];
        for p in pages {
            if let Some(&i) = index.get(&p.log_opn_id) {
                times[i].push(p.log_datetime);
            }
        }
        for t in &mut times {
            t.sort();
        }
        Analytics { sessions, pages, times }
    }

    pub fn from_reader(reader: &'a StoreReader<'a>) -> Self {
        Self::new(reader.sessions(), reader.pages())
    }

    pub fn summaries(&self) -> Vec<SessionSummary> {
        self.sessions
            .iter()
            .zip(&self.times)
            .filter(|(_, t)| !t.is_empty())
            .map(|(s, t)| SessionSummary {
                opn_id: s.opn_id,
                user_id: s.user_id,
                username: s.username.clone(),
                user_type: s.user_type,
                gender: s.gender,
                ip: s.ip,
                user_agent: s.user_agent.clone(),
                pageview_count: t.len() as u64,
                dwell_time: dwell_time(t).expect("sorted, non-empty"),
                start_hour: t[0].hour(),
            })
            .collect()
    }

    pub fn usage_buckets(&self) -> UsageBucketReport {
        usage_buckets(&self.summaries())
    }

    pub fn user_type_gender_report(&self) -> UserTypeGenderReport {
        let summaries = self.summaries();
        let mut acc: BTreeMap<(usize, usize), GroupTotals> = BTreeMap::new();
        for s in &summaries {
            let key = (type_index(s.user_type), gender_index(s.gender));
            let e = acc.entry(key).or_default();
            // Guests have no account; distinct (address, agent) pairs stand in for them.
            e.0.insert(match s.user_id {
                Some(id) => id.to_string(),
                None => format!("{}|{}", s.ip, s.user_agent),
            });
            e.1 += 1;
            e.2 += s.pageview_count;
            e.3 += s.dwell_time as u64;
        }
        let mut keys: Vec<(usize, usize)> = canonical_rows();
        for k in acc.keys() {
            if !keys.contains(k) {
                keys.push(*k);
            }
        }
        keys.sort();
        let rows: Vec<UserTypeGenderRow> = keys
            .into_iter()
            .map(|(t, g)| {
                let user_type = UserType::ALL[t];
                let (users, sessions, pageviews, secs) =
                    acc.get(&(t, g)).map(|e| (e.0.len() as u64, e.1, e.2, e.3)).unwrap_or_default();
                UserTypeGenderRow {
                    user_type: Some(user_type),
                    gender: Some(Gender::ALL[g]),
                    users,
                    sessions,
                    pageviews,
                    duration_secs: (user_type != UserType::Guest).then_some(secs),
                }
            })
            .collect();
        let total = UserTypeGenderRow::total_of(&rows);
        UserTypeGenderReport { rows, total }
    }

    pub fn hourly_cube(&self) -> HourlyCube {
        let types: HashMap<u64, UserType> = self.sessions.iter().map(|s| (s.opn_id, s.user_type)).collect();
        let mut cells = [[0u64; 9]; 24];
        for p in self.pages {
            if let Some(t) = types.get(&p.log_opn_id) {
                cells[p.log_datetime.hour() as usize][type_index(*t)] += 1;
            }
        }
        HourlyCube { cells }
    }

    pub fn distribution(&self, kind: DistributionKind) -> DistributionReport {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for (s, _) in self.sessions.iter().zip(&self.times).filter(|(_, t)| !t.is_empty()) {
            *counts.entry(kind.category(s)).or_default() += 1;
        }
        let total: u64 = counts.values().sum();
        let mut rows: Vec<DistributionRow> = counts
            .into_iter()
            .map(|(category, sessions)| DistributionRow { ratio: sessions as f64 / total as f64, category, sessions })
            .collect();
        rows.sort_by(|a, b| b.sessions.cmp(&a.sessions).then_with(|| a.category.cmp(&b.category)));
        DistributionReport { kind, total, rows }
    }

    pub fn top_ips(&self, n: usize) -> Result<TopIpReport, AnalyticsError> {
        if n == 0 {
            return Err(AnalyticsError::ZeroN);
        }
        let mut by_ip: HashMap<Ipv4Addr, (u64, u64)> = HashMap::new();
        for s in self.summaries() {
            let e = by_ip.entry(s.ip).or_default();
            e.0 += 1;
            e.1 += s.pageview_count;
        }
        let mut rows: Vec<TopIpRow> =
            by_ip.into_iter().map(|(ip, (sessions, pageviews))| TopIpRow { ip, sessions, pageviews }).collect();
        rows.sort_by(|a, b| b.sessions.cmp(&a.sessions).then(b.pageviews.cmp(&a.pageviews)).then(a.ip.cmp(&b.ip)));
        rows.truncate(n);
        Ok(TopIpReport { rows })
    }

    pub fn search_report(&self) -> SearchReport {
        let mut engines: HashMap<String, u64> = HashMap::new();
        let mut keywords: HashMap<String, u64> = HashMap::new();
        for (s, _) in self.sessions.iter().zip(&self.times).filter(|(_, t)| !t.is_empty()) {
            if let ReferralClass::SearchEngine(name) = &s.referral_class {
                *engines.entry(name.clone()).or_default() += 1;
                if let Some(k) = &s.search_keywords {
                    *keywords.entry(k.clone()).or_default() += 1;
                }
            }
        }
        SearchReport { engines: ranked(engines), keywords: ranked(keywords) }
    }

    pub fn top_users(&self, n: usize) -> Result<TopUsersReport, AnalyticsError> {
        if n == 0 {
            return Err(AnalyticsError::ZeroN);
        }
        let mut by_user: HashMap<u64, TopUserRow> = HashMap::new();
        for s in self.summaries() {
            let Some(uid) = s.user_id else { continue };
            let row = by_user.entry(uid).or_insert_with(|| TopUserRow {
                user_id: uid,
                username: s.username.clone().unwrap_or_default(),
                pageviews: 0,
                sessions: 0,
            });
            row.pageviews += s.pageview_count;
            row.sessions += 1;
        }
        let mut rows: Vec<TopUserRow> = by_user.into_values().collect();
        rows.sort_by(|a, b| {
            b.pageviews.cmp(&a.pageviews).then_with(|| a.username.cmp(&b.username)).then(a.user_id.cmp(&b.user_id))
        });
        rows.truncate(n);
        Ok(TopUsersReport { rows })
    }
}

/// Distinct users, sessions, pageviews and dwell seconds of one row.
type GroupTotals = (HashSet<String>, u64, u64, u64);

fn ranked(counts: HashMap<String, u64>) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

fn type_index(t: UserType) -> usize {
    UserType::ALL.iter().position(|&x| x == t).expect("listed")
}

fn gender_index(g: Gender) -> usize {
    Gender::ALL.iter().position(|&x| x == g).expect("listed")
}

/// The fixed row layout: genderless types get one N/A row, the others male and female.
fn canonical_rows() -> Vec<(usize, usize)> {
    let mut keys = Vec::new();
    for (ti, t) in UserType::ALL.iter().enumerate() {
        if t.is_genderless() {
            keys.push((ti, gender_index(Gender::NotApplicable)));
        } else {
            keys.push((ti, gender_index(Gender::Male)));
            keys.push((ti, gender_index(Gender::Female)));
        }
    }
    keys
}

pub const BUCKETS: [(u64, Option<u64>, &str); 5] = [
    (1, Some(3), "1-3"),
    (4, Some(10), "4-10"),
    (11, Some(30), "11-30"),
    (31, Some(100), "31-100"),
    (101, None, "101+"),
];

pub fn bucket_label(pageviews: u64) -> &'static str {
    BUCKETS
        .iter()
        .find(|(lo, hi, _)| pageviews >= *lo && hi.is_none_or(|h| pageviews <= h))
        .map(|b| b.2)
        .unwrap_or("1-3")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageBucketReport {
    /// Index 0 = guests, 1 = logged-in users; columns follow [`BUCKETS`].
    pub frequencies: [[u64; 5]; 2],
}

impl UsageBucketReport {
    pub fn total(&self) -> u64 {
        self.frequencies.iter().flatten().sum()
    }
}

pub fn usage_buckets(sessions: &[SessionSummary]) -> UsageBucketReport {
    let mut frequencies = [[0u64; 5]; 2];
    for s in sessions {
        let b = BUCKETS.iter().position(|b| b.2 == bucket_label(s.pageview_count)).expect("bucket");
        frequencies[usize::from(!s.is_guest())][b] += 1;
    }
    UsageBucketReport { frequencies }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserTypeGenderRow {
    /// `None` on the total row.
    pub user_type: Option<UserType>,
    pub gender: Option<Gender>,
    pub users: u64,
    pub sessions: u64,
    pub pageviews: u64,
    /// Summed dwell time; `None` for guests, whose visits have no duration column.
    pub duration_secs: Option<u64>,
}

impl UserTypeGenderRow {
    pub fn pageviews_per_session(&self) -> Option<PageviewsPerSession> {
        pageviews_per_session(self.pageviews, self.sessions).ok()
    }

    pub fn duration_minutes(&self) -> Option<u64> {
        self.duration_secs.map(seconds_to_minutes)
    }

    pub fn duration_tenth_hours(&self) -> Option<u64> {
        self.duration_secs.map(seconds_to_tenth_hours)
    }

    /// Column sums; the ratio is recomputed from the summed columns.
    pub fn total_of(rows: &[UserTypeGenderRow]) -> UserTypeGenderRow {
        UserTypeGenderRow {
            user_type: None,
            gender: None,
            users: rows.iter().map(|r| r.users).sum(),
            sessions: rows.iter().map(|r| r.sessions).sum(),
            pageviews: rows.iter().map(|r| r.pageviews).sum(),
            duration_secs: Some(rows.iter().filter_map(|r| r.duration_secs).sum()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserTypeGenderReport {
    pub rows: Vec<UserTypeGenderRow>,
    pub total: UserTypeGenderRow,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HourlyCube {
    /// `cells[hour][user type index]`, user types in [`UserType::ALL`] order.
    pub cells: [[u64; 9]; 24],
}

impl HourlyCube {
    pub fn get(&self, hour: usize, user_type: UserType) -> u64 {
        self.cells[hour][type_index(user_type)]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistributionKind {
    Device,
    Os,
    Browser,
    Country,
    Language,
}

impl DistributionKind {
    pub const ALL: [DistributionKind; 5] = [
        DistributionKind::Device,
        DistributionKind::Os,
        DistributionKind::Browser,
        DistributionKind::Country,
        DistributionKind::Language,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistributionKind::Device => "device",
            DistributionKind::Os => "os",
            DistributionKind::Browser => "browser",
            DistributionKind::Country => "country",
            DistributionKind::Language => "language",
        }
    }

    fn category(self, s: &SessionRecord) -> String {
        let known = |v: &Option<String>| v.clone().filter(|x| !x.is_empty()).unwrap_or_else(|| "unknown".into());
        match self {
            DistributionKind::Device => s.device_type.to_string(),
            DistributionKind::Os => known(&Some(s.os_name.clone())),
            DistributionKind::Browser => known(&Some(s.browser_name.clone())),
            DistributionKind::Country => s.country_code.map(|c| c.to_string()).unwrap_or_else(|| "unknown".into()),
            DistributionKind::Language => known(&s.language),
        }
    }
}

impl std::str::FromStr for DistributionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DistributionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown distribution `{s}` (device, os, browser, country, language)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionRow {
    pub category: String,
    pub sessions: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionReport {
    pub kind: DistributionKind,
    pub total: u64,
    /// By session count descending, then category.
    pub rows: Vec<DistributionRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopIpRow {
    pub ip: Ipv4Addr,
    pub sessions: u64,
    pub pageviews: u64,
}

impl TopIpRow {
    pub fn pageviews_per_session(&self) -> PageviewsPerSession {
        PageviewsPerSession { pageviews: self.pageviews, sessions: self.sessions }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopIpReport {
    pub rows: Vec<TopIpRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchReport {
    /// (engine, sessions), most frequent first.
    pub engines: Vec<(String, u64)>,
    pub keywords: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopUserRow {
    pub user_id: u64,
    pub username: String,
    pub pageviews: u64,
    pub sessions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopUsersReport {
    pub rows: Vec<TopUserRow>,
}
