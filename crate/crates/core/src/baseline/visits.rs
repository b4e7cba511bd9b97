//! User identification, time-gap sessionization and path completion.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::net::Ipv4Addr;

use chrono::{DateTime, FixedOffset};
use url::Url;

use super::filter::CleanedEntry;
use crate::collector::SiteHosts;

pub const DEFAULT_PAGE_GAP_SECS: i64 = 600;
pub const DEFAULT_SESSION_GAP_SECS: i64 = 1800;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitEvent {
    pub time: DateTime<FixedOffset>,
    pub ip: Ipv4Addr,
    pub user_agent: Option<String>,
    pub resource: String,
    pub referrer: Option<String>,
    /// Added by path completion, never seen in the log.
    pub inferred: bool,
}

impl VisitEvent {
    pub fn from_entry(e: CleanedEntry) -> Self {
        VisitEvent {
            time: e.timestamp,
            ip: e.ip,
            user_agent: e.user_agent,
            resource: e.resource,
            referrer: e.referrer,
            inferred: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UserKey {
    IpAgent(Ipv4Addr, Option<String>),
    Cookie(String),
}

impl fmt::Display for UserKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserKey::IpAgent(ip, agent) => write!(f, "{ip}|{}", agent.as_deref().unwrap_or("-")),
            UserKey::Cookie(v) => write!(f, "cookie:{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum UserKeyStrategy {
    /// Group by (ip, user agent).
    #[default]
    IpAgent,
    /// Group by the value of the named cookie; entries without it fall back
    /// to (ip, user agent).
    Cookie(String),
}

fn cookie_value<'a>(header: &'a str, name: &str) -> Option<&'a str> {
    header
        .split(';')
        .filter_map(|kv| kv.trim().split_once('='))
        .find(|(k, v)| *k == name && !v.is_empty())
        .map(|(_, v)| v)
}

impl UserKeyStrategy {
    pub fn key_for(&self, e: &CleanedEntry) -> UserKey {
        if let UserKeyStrategy::Cookie(name) = self {
            if let Some(v) = e.cookies.as_deref().and_then(|c| cookie_value(c, name)) {
                return UserKey::Cookie(v.to_string());
            }
        }
        UserKey::IpAgent(e.ip, e.user_agent.clone())
    }
}

/// One identified user's events, not yet split into sessions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visit {
    pub user_key: UserKey,
    pub events: Vec<VisitEvent>,
}

/// Users come out in order of first appearance; each user's events are
/// stably sorted by instant.
pub fn identify_users<I>(cleaned: I, strategy: &UserKeyStrategy) -> Vec<Visit>
where
    I: IntoIterator<Item = CleanedEntry>,
{
    let mut index: HashMap<UserKey, usize> = HashMap::new();
    let mut visits: Vec<Visit> = Vec::new();
    for entry in cleaned {
        let key = strategy.key_for(&entry);
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            visits.push(Visit { user_key: key, events: Vec::new() });
            visits.len() - 1
        });
        visits[slot].events.push(VisitEvent::from_entry(entry));
    }
    for v in &mut visits {
        v.events.sort_by_key(|e| e.time);
    }
    visits
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// New session when the gap to the previous event exceeds the page gap.
    PageGap,
    /// New session when the time since the session's first event exceeds the session gap.
    SessionDuration,
    #[default]
    Both,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "page_gap" | "page-gap" => Ok(SplitMode::PageGap),
            "session_duration" | "session-duration" => Ok(SplitMode::SessionDuration),
            "both" => Ok(SplitMode::Both),
            other => Err(format!("unknown sessionize mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Thresholds {
    pub page_gap_secs: i64,
    pub session_gap_secs: i64,
    pub mode: SplitMode,
    /// Also cut at every change of calendar date. Off by default; provided to
    /// reproduce tools that close sessions at midnight.
    pub split_at_midnight: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            page_gap_secs: DEFAULT_PAGE_GAP_SECS,
            session_gap_secs: DEFAULT_SESSION_GAP_SECS,
            mode: SplitMode::Both,
            split_at_midnight: false,
        }
    }
}

/// Splits an ordered event list into maximal runs. Comparisons are strict:
/// a gap of exactly the threshold stays in the session.
pub fn sessionize<'a>(events: &'a [VisitEvent], th: &Thresholds) -> Vec<&'a [VisitEvent]> {
    let page = matches!(th.mode, SplitMode::PageGap | SplitMode::Both);
    let duration = matches!(th.mode, SplitMode::SessionDuration | SplitMode::Both);
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..events.len() {
        let t = events[i].time;
        let prev = events[i - 1].time;
        let cut = (page && (t - prev).num_seconds() > th.page_gap_secs)
            || (duration && (t - events[start].time).num_seconds() > th.session_gap_secs)
            || (th.split_at_midnight && t.date_naive() != prev.date_naive());
        if cut {
            out.push(&events[start..i]);
            start = i;
        }
    }
    if !events.is_empty() {
        out.push(&events[start..]);
    }
    out
}

/// Known links between pages, `from -> {to}`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiteGraph {
    links: HashMap<String, HashSet<String>>,
}

impl SiteGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_link(&mut self, from: &str, to: &str) {
        self.links.entry(from.to_string()).or_default().insert(to.to_string());
    }

    pub fn has_link(&self, from: &str, to: &str) -> bool {
        self.links.get(from).is_some_and(|s| s.contains(to))
    }

    /// `from<TAB>to` per line; blank lines and `#` comments skipped.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut g = SiteGraph::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (from, to) =
                line.split_once('\t').ok_or_else(|| format!("site graph line {}: expected from<TAB>to", i + 1))?;
            g.add_link(from.trim(), to.trim());
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PathStats {
    pub inferred: usize,
    /// On-site referrers that could not be matched to an earlier page.
    pub incomplete: usize,
}

/// Resource part of an on-site referrer, e.g. `http://www.server.com/a?b=1` → `/a?b=1`.
pub fn onsite_resource(referrer: &str, site: &SiteHosts) -> Option<String> {
    if referrer.starts_with('/') {
        return Some(referrer.to_string());
    }
    let url = Url::parse(referrer).ok()?;
    if !site.contains(url.host_str()?) {
        return None;
    }
    Some(match url.query() {
        Some(q) => format!("{}?{q}", url.path()),
        None => url.path().to_string(),
    })
}

/// Back-button inference. When an event's on-site referrer is not the page
/// just before it, walk back to the latest earlier occurrence of the
/// referrer and insert cached revisits of every page passed on the way,
/// ending with the referrer itself. Inferred events reuse the time of the
/// last logged page.
pub fn complete_paths(
    events: &[VisitEvent],
    site: &SiteHosts,
    graph: Option<&SiteGraph>,
) -> (Vec<VisitEvent>, PathStats) {
    let mut out: Vec<VisitEvent> = Vec::with_capacity(events.len());
    let mut stats = PathStats::default();
    for ev in events {
        let target = ev.referrer.as_deref().and_then(|r| onsite_resource(r, site));
        if let (Some(target), Some(last)) = (target, out.last()) {
            if last.resource != target {
                let found = out[..out.len() - 1].iter().rposition(|e| e.resource == target);
                let linked = graph.is_none_or(|g| g.has_link(&target, &ev.resource));
                match found {
                    Some(j) if linked => {
                        let time = last.time;
                        let chain: Vec<VisitEvent> = out[j..out.len() - 1]
                            .iter()
                            .rev()
                            .map(|p| VisitEvent {
                                time,
                                ip: ev.ip,
                                user_agent: ev.user_agent.clone(),
                                resource: p.resource.clone(),
                                referrer: None,
                                inferred: true,
                            })
                            .collect();
                        stats.inferred += chain.len();
                        out.extend(chain);
                    }
                    _ => stats.incomplete += 1,
                }
            }
        }
        out.push(ev.clone());
    }
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn at(mins: i64) -> DateTime<FixedOffset> {
        FixedOffset::east_opt(3 * 3600).unwrap().with_ymd_and_hms(2021, 8, 15, 10, 0, 0).unwrap()
            + chrono::Duration::minutes(mins)
    }

    fn ev(mins: i64, resource: &str, referrer: Option<&str>) -> VisitEvent {
        VisitEvent {
            time: at(mins),
            ip: Ipv4Addr::new(10, 0, 0, 1),
            user_agent: Some("ua".into()),
            resource: resource.into(),
            referrer: referrer.map(str::to_string),
            inferred: false,
        }
    }

    fn sizes(events: &[VisitEvent], mode: SplitMode) -> Vec<usize> {
        let th = Thresholds { mode, ..Thresholds::default() };
        sessionize(events, &th).iter().map(|s| s.len()).collect()
    }

    #[test]
    fn hand_traced_gaps() {
        let a: Vec<_> = [0, 5, 36, 38].iter().map(|&m| ev(m, "/", None)).collect();
        assert_eq!(sizes(&a, SplitMode::Both), vec![2, 2]);
        let b: Vec<_> = [0, 9, 18, 27, 36].iter().map(|&m| ev(m, "/", None)).collect();
        assert_eq!(sizes(&b, SplitMode::PageGap), vec![5]);
        assert_eq!(sizes(&b, SplitMode::SessionDuration), vec![4, 1]);
        assert_eq!(sizes(&[ev(0, "/", None)], SplitMode::Both), vec![1]);
        assert!(sessionize(&[], &Thresholds::default()).is_empty());
    }

    #[test]
    fn threshold_is_strict() {
        let a = vec![ev(0, "/", None), ev(10, "/", None), ev(21, "/", None)];
        assert_eq!(sizes(&a, SplitMode::PageGap), vec![2, 1]);
    }

    #[test]
    fn midnight_split_is_opt_in() {
        let tz = FixedOffset::east_opt(0).unwrap();
        let mut a = ev(0, "/", None);
        a.time = tz.with_ymd_and_hms(2021, 8, 15, 23, 58, 0).unwrap();
        let mut b = a.clone();
        b.time = tz.with_ymd_and_hms(2021, 8, 16, 0, 3, 0).unwrap();
        let events = vec![a, b];
        assert_eq!(sessionize(&events, &Thresholds::default()).len(), 1);
        let th = Thresholds { split_at_midnight: true, ..Thresholds::default() };
        assert_eq!(sessionize(&events, &th).len(), 2);
    }

    #[test]
    fn users_by_ip_and_agent() {
        let mk = |ip: [u8; 4], ua: &str, mins: i64| CleanedEntry {
            ip: Ipv4Addr::from(ip),
            timestamp: at(mins),
            resource: "/".into(),
            referrer: None,
            user_agent: Some(ua.into()),
            cookies: None,
        };
        let visits = identify_users(
            vec![
                mk([1, 1, 1, 1], "a", 5),
                mk([2, 2, 2, 2], "a", 1),
                mk([1, 1, 1, 1], "b", 2),
                mk([1, 1, 1, 1], "a", 0),
            ],
            &UserKeyStrategy::IpAgent,
        );
        assert_eq!(visits.len(), 3);
        assert_eq!(visits[0].events.len(), 2);
        assert!(visits[0].events[0].time < visits[0].events[1].time);
        assert_eq!(visits[0].user_key.to_string(), "1.1.1.1|a");
    }

    #[test]
    fn cookie_strategy_falls_back() {
        let mut e = CleanedEntry {
            ip: Ipv4Addr::new(1, 1, 1, 1),
            timestamp: at(0),
            resource: "/".into(),
            referrer: None,
            user_agent: None,
            cookies: Some("lang=tr; sid=abc".into()),
        };
        let s = UserKeyStrategy::Cookie("sid".into());
        assert_eq!(s.key_for(&e), UserKey::Cookie("abc".into()));
        e.cookies = None;
        assert_eq!(s.key_for(&e), UserKey::IpAgent(Ipv4Addr::new(1, 1, 1, 1), None));
    }

    #[test]
    fn back_button_chain_is_inferred() {
        let site = SiteHosts::new(["www.server.com"]);
        let events = vec![
            ev(0, "/A", None),
            ev(1, "/B", Some("http://www.server.com/A")),
            ev(2, "/C", Some("http://www.server.com/B")),
            ev(3, "/D", Some("http://www.server.com/A")),
        ];
        let (out, stats) = complete_paths(&events, &site, None);
        let path: Vec<_> = out.iter().map(|e| (e.resource.as_str(), e.inferred)).collect();
        assert_eq!(path, vec![("/A", false), ("/B", false), ("/C", false), ("/B", true), ("/A", true), ("/D", false)]);
        assert_eq!(stats, PathStats { inferred: 2, incomplete: 0 });
        assert_eq!(out[3].time, at(2));
    }

    #[test]
    fn consistent_or_external_referrers_are_untouched() {
        let site = SiteHosts::new(["www.server.com"]);
        let events = vec![
            ev(0, "/A", Some("https://www.google.com/search?q=x")),
            ev(1, "/B", Some("http://www.server.com/A")),
            ev(2, "/C", Some("https://example.org/B")),
        ];
        let (out, stats) = complete_paths(&events, &site, None);
        assert_eq!(out, events);
        assert_eq!(stats, PathStats::default());

        let missing = vec![ev(0, "/A", None), ev(1, "/B", Some("http://www.server.com/Z"))];
        let (out, stats) = complete_paths(&missing, &site, None);
        assert_eq!(out, missing);
        assert_eq!(stats.incomplete, 1);
    }

    #[test]
    fn site_graph_vetoes_unlinked_backtrack() {
        let site = SiteHosts::new(["www.server.com"]);
        let events = vec![ev(0, "/A", None), ev(1, "/B", None), ev(2, "/C", Some("/A"))];
        let mut g = SiteGraph::parse("/A\t/B\n").unwrap();
        let (out, stats) = complete_paths(&events, &site, Some(&g));
        assert_eq!(out.len(), 3);
        assert_eq!(stats.incomplete, 1);
        g.add_link("/A", "/C");
        let (out, _) = complete_paths(&events, &site, Some(&g));
        assert_eq!(out.len(), 4);
    }
}
