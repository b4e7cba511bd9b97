//! Ground-truth labels and the glue that maps each pipeline's output onto them.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{Read, Write};
use std::net::Ipv4Addr;

use crate::baseline::{EventId, Label, Labeling, SessionRow};
use crate::model::{format_timestamp, parse_timestamp, DeviceType, Gender, Timestamp, UserType};
use crate::storage::PageRecord;

pub const TRUTH_COLUMNS: [&str; 11] = [
    "event_id",
    "timestamp",
    "ip",
    "user_agent",
    "resource",
    "cached",
    "user_id",
    "session_id",
    "user_type",
    "gender",
    "device",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthEvent {
    pub event_id: EventId,
    pub timestamp: Timestamp,
    pub ip: Ipv4Addr,
    pub user_agent: String,
    pub resource: String,
    /// Served from the browser cache: in the request stream, not in the access log.
    pub cached: bool,
    pub user_id: u64,
    pub session_id: u64,
    pub user_type: UserType,
    pub gender: Gender,
    pub device: DeviceType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthSession {
    pub session_id: u64,
    pub user_id: u64,
    pub user_type: UserType,
    pub gender: Gender,
    pub device: DeviceType,
    pub pageviews: u64,
    pub start: Timestamp,
    pub end: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    /// In event-id order, which is request-stream order.
    pub events: Vec<TruthEvent>,
}

#[derive(Debug, thiserror::Error)]
pub enum TruthError {
    #[error("truth csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("truth csv row {row}: {message}")]
    Row { row: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatchError {
    #[error("store has {pages} page rows but truth has {events} events")]
    Count { pages: usize, events: usize },
    #[error("page row {page_id} does not correspond to truth event {event_id}")]
    Mismatch { page_id: u64, event_id: EventId },
    #[error("sessions row for {resource} at {time} from {ip} has no matching truth event")]
    Unmatched { ip: Ipv4Addr, time: String, resource: String },
}

fn truth_label(e: &TruthEvent) -> Label {
    Label::new(e.user_id.to_string(), e.session_id.to_string())
}

impl GroundTruth {
    pub fn sessions(&self) -> Vec<TruthSession> {
        let mut by_id: BTreeMap<u64, TruthSession> = BTreeMap::new();
        for e in &self.events {
            by_id
                .entry(e.session_id)
                .and_modify(|s| {
                    s.pageviews += 1;
                    s.start = s.start.min(e.timestamp);
                    s.end = s.end.max(e.timestamp);
                })
                .or_insert(TruthSession {
                    session_id: e.session_id,
                    user_id: e.user_id,
                    user_type: e.user_type,
                    gender: e.gender,
                    device: e.device,
                    pageviews: 1,
                    start: e.timestamp,
                    end: e.timestamp,
                });
        }
        by_id.into_values().collect()
    }

    pub fn session_count(&self) -> usize {
        self.sessions().len()
    }

    /// Labels for every event (the request stream the collector sees).
    pub fn labels(&self) -> Labeling {
        self.events.iter().map(|e| (e.event_id, truth_label(e))).collect()
    }

    /// Labels restricted to events that reached the access log.
    pub fn logged_labels(&self) -> Labeling {
        self.events.iter().filter(|e| !e.cached).map(|e| (e.event_id, truth_label(e))).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRUTH_COLUMNS)?;
        for e in &self.events {
            w.write_record([
                e.event_id.to_string(),
                format_timestamp(&e.timestamp),
                e.ip.to_string(),
                e.user_agent.clone(),
                e.resource.clone(),
                (e.cached as u8).to_string(),
                e.user_id.to_string(),
                e.session_id.to_string(),
                e.user_type.to_string(),
                e.gender.to_string(),
                e.device.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, TruthError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != TRUTH_COLUMNS {
            return Err(TruthError::Row { row: 1, message: format!("unexpected header {header:?}") });
        }
        let mut events = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let bad =
                |what: &str| TruthError::Row { row, message: format!("bad {what} `{}`", rec.get(0).unwrap_or("")) };
            events.push(TruthEvent {
                event_id: rec[0].parse().map_err(|_| bad("event_id"))?,
                timestamp: parse_timestamp(&rec[1]).map_err(|_| bad("timestamp"))?,
                ip: rec[2].parse().map_err(|_| bad("ip"))?,
                user_agent: rec[3].to_string(),
                resource: rec[4].to_string(),
                cached: match &rec[5] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("cached flag")),
                },
                user_id: rec[6].parse().map_err(|_| bad("user_id"))?,
                session_id: rec[7].parse().map_err(|_| bad("session_id"))?,
                user_type: rec[8].parse().map_err(|_| bad("user_type"))?,
                gender: rec[9].parse().map_err(|_| bad("gender"))?,
                device: rec[10].parse().map_err(|_| bad("device"))?,
            });
        }
        Ok(GroundTruth { events })
    }
}

/// The collector writes one page row per request, in stream order, so the
/// i-th page row is the i-th event. Each pairing is checked on time and URL.
/// Users are keyed by account id, or by the session for guests.
pub fn label_collector(pages: &[PageRecord], truth: &GroundTruth) -> Result<Labeling, MatchError> {
    if pages.len() != truth.events.len() {
        return Err(MatchError::Count { pages: pages.len(), events: truth.events.len() });
    }
    let mut labels = HashMap::with_capacity(pages.len());
    for (p, e) in pages.iter().zip(&truth.events) {
        if p.log_datetime != e.timestamp || !p.log_url.ends_with(&e.resource) {
            return Err(MatchError::Mismatch { page_id: p.log_details_id, event_id: e.event_id });
        }
        let user = match p.log_uid {
            Some(uid) => format!("user:{uid}"),
            None => format!("guest:{}", p.log_opn_id),
        };
        labels.insert(e.event_id, Label::new(user, p.log_opn_id.to_string()));
    }
    Ok(labels)
}

/// Maps non-inferred session rows onto logged truth events by
/// (address, local time, resource, agent); duplicates resolve first-come.
pub fn label_baseline(rows: &[SessionRow], truth: &GroundTruth) -> Result<Labeling, MatchError> {
    type Key = (Ipv4Addr, Timestamp, String, String);
    let mut pending: HashMap<Key, VecDeque<EventId>> = HashMap::new();
    for e in truth.events.iter().filter(|e| !e.cached) {
        pending.entry((e.ip, e.timestamp, e.resource.clone(), e.user_agent.clone())).or_default().push_back(e.event_id);
    }
    let mut labels = HashMap::new();
    for r in rows.iter().filter(|r| !r.inferred) {
        let key = (r.ip, r.time.naive_local(), r.resource.clone(), r.user_agent.clone().unwrap_or_default());
        let id = pending.get_mut(&key).and_then(VecDeque::pop_front).ok_or_else(|| MatchError::Unmatched {
            ip: r.ip,
            time: r.time.to_rfc3339(),
            resource: r.resource.clone(),
        })?;
        labels.insert(id, Label::new(r.user_key.clone(), format!("{}#{}", r.user_key, r.session_id)));
    }
    Ok(labels)
}
