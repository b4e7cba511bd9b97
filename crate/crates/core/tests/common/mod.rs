//! Shared helpers for the integration suites.
//!
//! The report oracle below deliberately ignores the library's analytics code:
//! it reads the exported `log_session.csv` / `log_page.csv` by column name and
//! recomputes every report with plain loops, so agreement means the two
//! implementations agree, not that one was copied from the other.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::Ipv4Addr;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDateTime;
use sessionlog::analytics::{Analytics, DistributionKind, Report};
use sessionlog::collector::SiteHosts;
use sessionlog::enrichment::GeoIpTable;
use sessionlog::simulator::{generate, Workload, WorkloadConfig};
use sessionlog::{Collector, CollectorConfig, LogStore};

pub const TOP_N: usize = 15;

pub fn workload(cfg: &WorkloadConfig) -> Workload {
    generate(cfg).expect("valid workload config")
}

/// Replays a workload through a fresh collector, closing sessions idle at the end.
pub fn collect(w: &Workload) -> Arc<LogStore> {
    let store = Arc::new(LogStore::new());
    store.set_geoip(Arc::new(GeoIpTable::builtin().clone()));
    let collector = Collector::new(
        Arc::clone(&store),
        CollectorConfig {
            timeout_secs: w.config.timeout_secs,
            site_hosts: SiteHosts::new(std::slice::from_ref(&w.config.site_host)),
        },
    );
    let records = w.replay_records();
    let end = records.iter().filter_map(|r| r.timestamp()).max();
    collector.replay(records).expect("replay");
    if let Some(end) = end {
        collector.sweep_expired(end, w.config.timeout_secs);
    }
    assert!(collector.take_errors().is_empty(), "collector reported errors");
    store
}

/// Every report the library offers, rendered as CSV, keyed by name.
pub fn library_reports(store: &LogStore) -> BTreeMap<String, String> {
    let reader = store.read();
    let a = Analytics::from_reader(&reader);
    let mut out = BTreeMap::new();
    out.insert("usage-buckets".into(), a.usage_buckets().to_csv());
    out.insert("user-type-gender".into(), a.user_type_gender_report().to_csv());
    out.insert("hourly-cube".into(), a.hourly_cube().to_csv());
    for kind in DistributionKind::ALL {
        out.insert(format!("distribution-{}", kind.as_str()), a.distribution(kind).to_csv());
    }
    out.insert("top-ips".into(), a.top_ips(TOP_N).unwrap().to_csv());
    out.insert("search".into(), a.search_report().to_csv());
    out.insert("top-users".into(), a.top_users(TOP_N).unwrap().to_csv());
    out
}

type Row = HashMap<String, String>;

fn read_table(path: &Path) -> Vec<Row> {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            header.iter().cloned().zip(rec.iter().map(str::to_string)).collect()
        })
        .collect()
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).unwrap();
    for r in rows {
        w.write_record(r).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

const TYPES: [&str; 9] = [
    "guest",
    "academic_staff",
    "administrative_staff",
    "contracted_staff",
    "retired_staff",
    "lecturer_nonsigned",
    "student",
    "graduate",
    "unit_mission",
];
const GENDERS: [&str; 3] = ["male", "female", "not_applicable"];

fn time(s: &str) -> NaiveDateTime {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").unwrap()
}

/// Half-up rounding to two decimals via truncated thousandths.
fn two_decimals(num: u64, den: u64) -> String {
    let h = (num * 1000 / den + 5) / 10;
    format!("{}.{:02}", h / 100, h % 100)
}

/// Oracle rendering of every report from an exported store directory.
pub fn oracle_reports(dir: &Path) -> BTreeMap<String, String> {
    let sessions = read_table(&dir.join("log_session.csv"));
    let pages = read_table(&dir.join("log_page.csv"));

    // Page times per session id, in file order.
    let mut times: HashMap<&str, Vec<NaiveDateTime>> = HashMap::new();
    for p in &pages {
        times.entry(p["log_opn_id"].as_str()).or_default().push(time(&p["log_datetime"]));
    }
    let active: Vec<&Row> = sessions.iter().filter(|s| times.contains_key(s["opn_id"].as_str())).collect();
    let pv = |s: &Row| times[s["opn_id"].as_str()].len() as u64;
    let span = |s: &Row| {
        let t = &times[s["opn_id"].as_str()];
        (*t.iter().max().unwrap() - *t.iter().min().unwrap()).num_seconds() as u64
    };
    let is_guest = |s: &Row| s["user_id"].is_empty();
    let mut out = BTreeMap::new();

    // Usage buckets.
    let labels = ["1-3", "4-10", "11-30", "31-100", "101+"];
    let bucket = |n: u64| match n {
        1..=3 => 0,
        4..=10 => 1,
        11..=30 => 2,
        31..=100 => 3,
        _ => 4,
    };
    let mut freq = [[0u64; 5]; 2];
    for s in &active {
        freq[usize::from(!is_guest(s))][bucket(pv(s))] += 1;
    }
    let mut rows = Vec::new();
    for (v, name) in ["guest", "user"].iter().enumerate() {
        for (b, label) in labels.iter().enumerate() {
            rows.push(vec![name.to_string(), label.to_string(), freq[v][b].to_string()]);
        }
    }
    out.insert("usage-buckets".into(), csv_text(&["visitor_type", "pageviews", "frequency"], &rows));

    // User type × gender.
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for (t, name) in TYPES.iter().enumerate() {
        if matches!(*name, "guest" | "unit_mission") {
            keys.push((t, 2));
        } else {
            keys.push((t, 0));
            keys.push((t, 1));
        }
    }
    let key_of = |s: &Row| {
        (
            TYPES.iter().position(|t| *t == s["user_type"]).unwrap(),
            GENDERS.iter().position(|g| *g == s["gender"]).unwrap(),
        )
    };
    for s in &active {
        let k = key_of(s);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.sort();
    let mut rows = Vec::new();
    let (mut tu, mut ts, mut tp, mut td) = (0u64, 0u64, 0u64, 0u64);
    for (t, g) in keys {
        let group: Vec<&&Row> = active.iter().filter(|s| key_of(s) == (t, g)).collect();
        let users: BTreeSet<String> = group
            .iter()
            .map(|s| if is_guest(s) { format!("{}|{}", s["ip"], s["user_agent"]) } else { s["user_id"].clone() })
            .collect();
        let n = group.len() as u64;
        let p: u64 = group.iter().map(|s| pv(s)).sum();
        let d: u64 = group.iter().map(|s| span(s)).sum();
        let guest = TYPES[t] == "guest";
        tu += users.len() as u64;
        ts += n;
        tp += p;
        if !guest {
            td += d;
        }
        let dash = || "-".to_string();
        rows.push(vec![
            TYPES[t].to_string(),
            GENDERS[g].to_string(),
            users.len().to_string(),
            n.to_string(),
            p.to_string(),
            if n == 0 { dash() } else { two_decimals(p, n) },
            if guest { dash() } else { d.to_string() },
            if guest { dash() } else { ((d + 30) / 60).to_string() },
            if guest { dash() } else { tenths(d) },
        ]);
    }
    rows.push(vec![
        "total".into(),
        String::new(),
        tu.to_string(),
        ts.to_string(),
        tp.to_string(),
        if ts == 0 { "-".into() } else { two_decimals(tp, ts) },
        td.to_string(),
        ((td + 30) / 60).to_string(),
        tenths(td),
    ]);
    out.insert(
        "user-type-gender".into(),
        csv_text(
            &[
                "user_type",
                "gender",
                "users",
                "sessions",
                "pageviews",
                "pageviews_per_session",
                "duration_s",
                "duration_m",
                "duration_h",
            ],
            &rows,
        ),
    );

    // Hourly cube over every page row whose session exists.
    let type_of: HashMap<&str, usize> = sessions
        .iter()
        .map(|s| (s["opn_id"].as_str(), TYPES.iter().position(|t| *t == s["user_type"]).unwrap()))
        .collect();
    let mut cube = [[0u64; 9]; 24];
    for p in &pages {
        if let Some(&t) = type_of.get(p["log_opn_id"].as_str()) {
            let hour: usize = p["log_datetime"][11..13].parse().unwrap();
            cube[hour][t] += 1;
        }
    }
    let rows: Vec<Vec<String>> = cube
        .iter()
        .enumerate()
        .map(|(h, r)| std::iter::once(h.to_string()).chain(r.iter().map(|n| n.to_string())).collect())
        .collect();
    let mut header = vec!["hour"];
    header.extend(TYPES);
    out.insert("hourly-cube".into(), csv_text(&header, &rows));

    // Distributions.
    for (kind, column) in [
        ("device", "device_type"),
        ("os", "os_name"),
        ("browser", "browser_name"),
        ("country", "country_code"),
        ("language", "language"),
    ] {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for s in &active {
            let v = &s[column];
            *counts.entry(if v.is_empty() { "unknown".into() } else { v.clone() }).or_default() += 1;
        }
        let total = active.len() as f64;
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let rows: Vec<Vec<String>> =
            ranked.into_iter().map(|(c, n)| vec![c, n.to_string(), format!("{:.6}", n as f64 / total)]).collect();
        out.insert(format!("distribution-{kind}"), csv_text(&[kind, "sessions", "ratio"], &rows));
    }

    // Top IPs.
    let mut by_ip: HashMap<Ipv4Addr, (u64, u64)> = HashMap::new();
    for s in &active {
        let e = by_ip.entry(s["ip"].parse().unwrap()).or_default();
        e.0 += 1;
        e.1 += pv(s);
    }
    let mut ips: Vec<(Ipv4Addr, (u64, u64))> = by_ip.into_iter().collect();
    ips.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(b.1 .1.cmp(&a.1 .1)).then(a.0.cmp(&b.0)));
    let rows: Vec<Vec<String>> = ips
        .into_iter()
        .take(TOP_N)
        .map(|(ip, (n, p))| vec![ip.to_string(), n.to_string(), p.to_string(), two_decimals(p, n)])
        .collect();
    out.insert("top-ips".into(), csv_text(&["ip", "sessions", "pageviews", "pageviews_per_session"], &rows));

    // Search engines and keywords.
    let mut engines: BTreeMap<String, u64> = BTreeMap::new();
    let mut words: BTreeMap<String, u64> = BTreeMap::new();
    for s in active.iter().filter(|s| s["referral_class"] == "search_engine") {
        *engines.entry(s["search_engine"].clone()).or_default() += 1;
        if !s["search_keywords"].is_empty() {
            *words.entry(s["search_keywords"].clone()).or_default() += 1;
        }
    }
    let rank = |m: BTreeMap<String, u64>| {
        let mut v: Vec<(String, u64)> = m.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    };
    let mut rows = Vec::new();
    for (section, list) in [("engine", rank(engines)), ("keyword", rank(words))] {
        rows.extend(list.into_iter().map(|(n, c)| vec![section.to_string(), n, c.to_string()]));
    }
    out.insert("search".into(), csv_text(&["section", "name", "sessions"], &rows));

    // Top users.
    let mut by_user: HashMap<u64, (String, u64, u64)> = HashMap::new();
    for s in active.iter().filter(|s| !is_guest(s)) {
        let e = by_user.entry(s["user_id"].parse().unwrap()).or_insert_with(|| (s["username"].clone(), 0, 0));
        e.1 += pv(s);
        e.2 += 1;
    }
    let mut users: Vec<(u64, (String, u64, u64))> = by_user.into_iter().collect();
    users.sort_by(|a, b| b.1 .1.cmp(&a.1 .1).then(a.1 .0.cmp(&b.1 .0)).then(a.0.cmp(&b.0)));
    let rows: Vec<Vec<String>> = users
        .into_iter()
        .take(TOP_N)
        .map(|(id, (name, p, n))| vec![name, id.to_string(), p.to_string(), n.to_string()])
        .collect();
    out.insert("top-users".into(), csv_text(&["username", "user_id", "pageviews", "sessions"], &rows));

    out
}

fn tenths(secs: u64) -> String {
    let t = (secs * 10 + 1800) / 3600;
    format!("{}.{}", t / 10, t % 10)
}

/// Names of reports whose library and oracle renderings differ.
pub fn report_mismatches(store: &LogStore, dir: &Path) -> Vec<String> {
    store.export_dir(dir).expect("export");
    let lib = library_reports(store);
    let oracle = oracle_reports(dir);
    assert_eq!(lib.keys().collect::<Vec<_>>(), oracle.keys().collect::<Vec<_>>());
    lib.iter().filter(|(k, v)| oracle[*k] != **v).map(|(k, _)| k.clone()).collect()
}
