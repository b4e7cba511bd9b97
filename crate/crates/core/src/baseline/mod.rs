//! Access-log preprocessing: parse, filter, identify users, sessionize and
//! complete paths, then score the result against known truth.

pub mod eclf;
pub mod filter;
pub mod score;
pub mod visits;

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, FixedOffset};

pub use eclf::{parse_log_line, render_log_line, EclfEntry, LineParseError, LogFormat};
pub use filter::{CleanedEntry, FilterConfig, FilterStats};
pub use score::{score_against_truth, AccuracyReport, EventId, Label, Labeling, ScoreError};
pub use visits::{
    complete_paths, identify_users, sessionize, PathStats, SiteGraph, SplitMode, Thresholds, UserKey, UserKeyStrategy,
    Visit, VisitEvent,
};

use crate::collector::SiteHosts;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub format: LogFormat,
    pub filter: FilterConfig,
    pub user_keys: UserKeyStrategy,
    pub thresholds: Thresholds,
    pub site_hosts: SiteHosts,
    pub complete_paths: bool,
    pub site_graph: Option<SiteGraph>,
    /// Threads used for the per-user stages; output does not depend on it.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            format: LogFormat::Auto,
            filter: FilterConfig::default(),
            user_keys: UserKeyStrategy::IpAgent,
            thresholds: Thresholds::default(),
            site_hosts: SiteHosts::new(["www.server.com"]),
            complete_paths: true,
            site_graph: None,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconstructedSession {
    pub user_key: String,
    /// 1-based within the user.
    pub session_id: usize,
    pub events: Vec<VisitEvent>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutput {
    pub sessions: Vec<ReconstructedSession>,
    pub lines: usize,
    pub parse_errors: usize,
    /// First few malformed lines as (line number, message).
    pub error_samples: Vec<(usize, String)>,
    pub filter: FilterStats,
    pub paths: PathStats,
    pub users: usize,
}

const ERROR_SAMPLES: usize = 10;

/// Opens a plain or gzip-compressed log, sniffing the gzip magic bytes.
pub fn open_log(path: &Path) -> io::Result<Box<dyn BufRead>> {
    let mut reader = BufReader::new(File::open(path)?);
    let gz = reader.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    Ok(if gz { Box::new(BufReader::new(flate2::bufread::MultiGzDecoder::new(reader))) } else { Box::new(reader) })
}

fn process_visit(visit: &Visit, config: &PipelineConfig) -> (Vec<ReconstructedSession>, PathStats) {
    let key = visit.user_key.to_string();
    let mut stats = PathStats::default();
    let sessions = sessionize(&visit.events, &config.thresholds)
        .into_iter()
        .enumerate()
        .map(|(i, events)| {
            let events = if config.complete_paths {
                let (done, s) = complete_paths(events, &config.site_hosts, config.site_graph.as_ref());
                stats.inferred += s.inferred;
                stats.incomplete += s.incomplete;
                done
            } else {
                events.to_vec()
            };
            ReconstructedSession { user_key: key.clone(), session_id: i + 1, events }
        })
        .collect();
    (sessions, stats)
}

/// Per-user stages over `visits`, optionally split across threads in
/// contiguous chunks; results are joined back in visit order.
pub fn sessionize_visits(visits: &[Visit], config: &PipelineConfig) -> (Vec<ReconstructedSession>, PathStats) {
    let workers = config.workers.max(1).min(visits.len().max(1));
    let parts: Vec<(Vec<ReconstructedSession>, PathStats)> = if workers == 1 {
        vec![visits.iter().map(|v| process_visit(v, config)).fold(
            (Vec::new(), PathStats::default()),
            |mut acc, (s, st)| {
                acc.0.extend(s);
                acc.1.inferred += st.inferred;
                acc.1.incomplete += st.incomplete;
                acc
            },
        )]
    } else {
        let chunk = visits.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = visits
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || sessionize_visits(part, &PipelineConfig { workers: 1, ..config.clone() }))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    };
    let mut sessions = Vec::new();
    let mut stats = PathStats::default();
    for (s, st) in parts {
        sessions.extend(s);
        stats.inferred += st.inferred;
        stats.incomplete += st.incomplete;
    }
    (sessions, stats)
}

/// Runs the whole pipeline. Malformed lines are counted and skipped; only
/// read failures abort.
pub fn run_pipeline<R: BufRead>(input: R, config: &PipelineConfig) -> io::Result<PipelineOutput> {
    let mut out = PipelineOutput::default();
    let mut entries = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.lines += 1;
        match parse_log_line(&line, config.format) {
            Ok(e) => entries.push(e),
            Err(err) => {
                out.parse_errors += 1;
                if out.error_samples.len() < ERROR_SAMPLES {
                    out.error_samples.push((idx + 1, err.0));
                }
            }
        }
    }
    let (cleaned, filter_stats) = config.filter.filter_entries(entries);
    out.filter = filter_stats;
    let visits = identify_users(cleaned, &config.user_keys);
    out.users = visits.len();
    let (sessions, paths) = sessionize_visits(&visits, config);
    out.sessions = sessions;
    out.paths = paths;
    Ok(out)
}

pub const SESSION_CSV_COLUMNS: [&str; 8] =
    ["user_key", "session_id", "seq", "time", "ip", "user_agent", "resource", "inferred"];

/// One row of the sessions CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRow {
    pub user_key: String,
    pub session_id: usize,
    /// 1-based position within the session.
    pub seq: usize,
    pub time: DateTime<FixedOffset>,
    pub ip: std::net::Ipv4Addr,
    pub user_agent: Option<String>,
    pub resource: String,
    pub inferred: bool,
}

pub fn session_rows(sessions: &[ReconstructedSession]) -> impl Iterator<Item = SessionRow> + '_ {
    sessions.iter().flat_map(|s| {
        s.events.iter().enumerate().map(move |(i, e)| SessionRow {
            user_key: s.user_key.clone(),
            session_id: s.session_id,
            seq: i + 1,
            time: e.time,
            ip: e.ip,
            user_agent: e.user_agent.clone(),
            resource: e.resource.clone(),
            inferred: e.inferred,
        })
    })
}

pub fn write_sessions_csv<W: Write>(out: W, sessions: &[ReconstructedSession]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SESSION_CSV_COLUMNS)?;
    for r in session_rows(sessions) {
        w.write_record([
            r.user_key,
            r.session_id.to_string(),
            r.seq.to_string(),
            r.time.to_rfc3339(),
            r.ip.to_string(),
            r.user_agent.unwrap_or_default(),
            r.resource,
            (r.inferred as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum SessionCsvError {
    #[error("sessions csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("sessions csv row {row}: {message}")]
    Row { row: usize, message: String },
}

pub fn read_sessions_csv<R: Read>(input: R) -> Result<Vec<SessionRow>, SessionCsvError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SESSION_CSV_COLUMNS {
        return Err(SessionCsvError::Row { row: 1, message: format!("unexpected header {header:?}") });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |what: &str| SessionCsvError::Row { row, message: format!("bad {what}") };
        let num = |idx: usize, what: &str| rec[idx].parse::<usize>().map_err(|_| bad(what));
        rows.push(SessionRow {
            user_key: rec[0].to_string(),
            session_id: num(1, "session_id")?,
            seq: num(2, "seq")?,
            time: DateTime::parse_from_rfc3339(&rec[3]).map_err(|_| bad("time"))?,
            ip: rec[4].parse().map_err(|_| bad("ip"))?,
            user_agent: (!rec[5].is_empty()).then(|| rec[5].to_string()),
            resource: rec[6].to_string(),
            inferred: match &rec[7] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("inferred flag")),
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const UA: &str = "Mozilla/5.0 (X11; Linux x86_64; rv:99.0) Gecko/20100101 Firefox/99.0";

    fn log_line(ip: &str, hms: &str, req: &str, status: u16, referrer: &str, ua: &str) -> String {
        format!("{ip} - - [15/Aug/2021:{hms} +0300] \"GET {req} HTTP/1.1\" {status} 10 \"{referrer}\" \"{ua}\"\n")
    }

    fn sample_log() -> String {
        let mut s = String::new();
        s += &log_line("10.0.0.1", "10:00:00", "/A", 200, "-", UA);
        s += &log_line("10.0.0.1", "10:00:01", "/logo.png", 200, "-", UA);
        s += &log_line("10.0.0.1", "10:01:00", "/B", 200, "http://www.server.com/A", UA);
        s += "garbage\n";
        s += &log_line("10.0.0.2", "10:02:00", "/A", 404, "-", UA);
        s += &log_line("10.0.0.1", "10:03:00", "/C", 200, "http://www.server.com/A", UA);
        s += &log_line("10.0.0.1", "10:30:00", "/A", 200, "-", UA);
        s += &log_line("10.0.0.3", "10:30:00", "/A", 200, "-", "Googlebot/2.1");
        s
    }

    #[test]
    fn end_to_end() {
        let out = run_pipeline(Cursor::new(sample_log()), &PipelineConfig::default()).unwrap();
        assert_eq!(out.lines, 8);
        assert_eq!(out.parse_errors, 1);
        assert_eq!(out.error_samples[0].0, 4);
        assert_eq!(out.filter.kept, 4);
        assert_eq!((out.filter.dropped_static, out.filter.dropped_status, out.filter.dropped_bot), (1, 1, 1));
        assert_eq!(out.users, 1);
        assert_eq!(out.sessions.len(), 2);
        let first: Vec<_> = out.sessions[0].events.iter().map(|e| (e.resource.as_str(), e.inferred)).collect();
        assert_eq!(first, vec![("/A", false), ("/B", false), ("/A", true), ("/C", false)]);
        assert_eq!(out.paths.inferred, 1);
        assert_eq!(out.sessions[1].session_id, 2);
    }

    #[test]
    fn workers_do_not_change_output() {
        let mut log = String::new();
        for u in 0..40 {
            for p in 0..6 {
                let m = p * 7 + u % 5;
                log += &log_line(
                    &format!("10.0.1.{u}"),
                    &format!("1{}:{:02}:00", p % 3, m),
                    &format!("/p{p}"),
                    200,
                    "-",
                    UA,
                );
            }
        }
        let seq = run_pipeline(Cursor::new(log.clone()), &PipelineConfig::default()).unwrap();
        let par = run_pipeline(Cursor::new(log), &PipelineConfig { workers: 4, ..PipelineConfig::default() }).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn gzip_input_is_detected() {
        use flate2::{write::GzEncoder, Compression};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("access.log.gz");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), Compression::default());
        enc.write_all(sample_log().as_bytes()).unwrap();
        enc.finish().unwrap();
        let out = run_pipeline(open_log(&path).unwrap(), &PipelineConfig::default()).unwrap();
        assert_eq!(out.lines, 8);
        let plain = dir.path().join("access.log");
        std::fs::write(&plain, sample_log()).unwrap();
        assert_eq!(run_pipeline(open_log(&plain).unwrap(), &PipelineConfig::default()).unwrap(), out);
    }

    #[test]
    fn sessions_csv_round_trip() {
        let out = run_pipeline(Cursor::new(sample_log()), &PipelineConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_sessions_csv(&mut buf, &out.sessions).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("user_key,session_id,seq,time,ip,user_agent,resource,inferred\n"));
        let rows = read_sessions_csv(Cursor::new(buf)).unwrap();
        assert_eq!(rows, session_rows(&out.sessions).collect::<Vec<_>>());
        assert!(read_sessions_csv(Cursor::new("a,b\n")).is_err());
    }
}
