mod common;

use std::io::{Cursor, Write};

use chrono::{FixedOffset, TimeZone};
use flate2::write::GzEncoder;
use proptest::prelude::*;
use sessionlog::baseline::{
    open_log, read_sessions_csv, run_pipeline, score_against_truth, session_rows, sessionize, write_sessions_csv,
    PipelineConfig, SplitMode, Thresholds, UserKeyStrategy, VisitEvent,
};
use sessionlog::simulator::{label_baseline, NoiseConfig, Workload, WorkloadConfig};

fn log_of(w: &Workload) -> Vec<u8> {
    let mut buf = Vec::new();
    w.write_eclf(&mut buf).unwrap();
    buf
}

fn noisy() -> Workload {
    common::workload(&WorkloadConfig { seed: 9, n_users: 60, nat_share: 0.2, ..WorkloadConfig::default() })
}

#[test]
fn noise_is_filtered_and_pages_are_kept() {
    let w = noisy();
    let out = run_pipeline(Cursor::new(log_of(&w)), &PipelineConfig::default()).unwrap();
    let logged = w.events.iter().filter(|e| !e.cached).count();
    assert_eq!(out.parse_errors, 0);
    assert_eq!(out.filter.kept, logged);
    assert_eq!(out.filter.kept + out.filter.dropped(), out.lines);
    assert!(out.filter.dropped_static > 0 && out.filter.dropped_bot > 0 && out.filter.dropped_status > 0);
    let logged_rows = session_rows(&out.sessions).filter(|r| !r.inferred).count();
    assert_eq!(logged_rows, logged);
}

#[test]
fn gzip_input_and_worker_count_do_not_change_the_output() {
    let w = noisy();
    let plain = log_of(&w);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("access.log.gz");
    let mut gz = GzEncoder::new(Vec::new(), flate2::Compression::fast());
    gz.write_all(&plain).unwrap();
    std::fs::write(&path, gz.finish().unwrap()).unwrap();

    let base = run_pipeline(Cursor::new(plain), &PipelineConfig::default()).unwrap();
    let packed = run_pipeline(open_log(&path).unwrap(), &PipelineConfig::default()).unwrap();
    let parallel =
        run_pipeline(open_log(&path).unwrap(), &PipelineConfig { workers: 4, ..PipelineConfig::default() }).unwrap();
    assert_eq!(base, packed);
    assert_eq!(base, parallel);
}

#[test]
fn sessions_csv_round_trips() {
    let out = run_pipeline(Cursor::new(log_of(&noisy())), &PipelineConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_sessions_csv(&mut buf, &out.sessions).unwrap();
    let rows = read_sessions_csv(buf.as_slice()).unwrap();
    assert_eq!(rows, session_rows(&out.sessions).collect::<Vec<_>>());
}

#[test]
fn per_session_cookies_recover_every_session() {
    // Gaps never exceed the page threshold, so a session-scoped cookie is a perfect key.
    let cfg = WorkloadConfig { seed: 21, n_users: 80, noise: NoiseConfig::NONE, ..WorkloadConfig::default() };
    let w = common::workload(&cfg);
    assert!(cfg.max_gap_secs < Thresholds::default().page_gap_secs);
    let config = PipelineConfig {
        user_keys: UserKeyStrategy::Cookie("sid".into()),
        thresholds: Thresholds { mode: SplitMode::PageGap, ..Thresholds::default() },
        ..PipelineConfig::default()
    };
    let out = run_pipeline(Cursor::new(log_of(&w)), &config).unwrap();
    let truth = w.truth();
    let rows: Vec<_> = session_rows(&out.sessions).collect();
    let r = score_against_truth(&label_baseline(&rows, &truth).unwrap(), &truth.logged_labels()).unwrap();
    assert_eq!(r.exact_session_match_rate, 1.0);
    assert_eq!(r.session_precision, 1.0);
}

#[test]
fn shared_addresses_without_cookies_cost_user_precision() {
    let cfg = WorkloadConfig { nat_share: 0.6, cookie_loss_share: 1.0, ..WorkloadConfig::default() };
    let w = common::workload(&cfg);
    let out = run_pipeline(Cursor::new(log_of(&w)), &PipelineConfig::default()).unwrap();
    let truth = w.truth();
    let rows: Vec<_> = session_rows(&out.sessions).collect();
    let r = score_against_truth(&label_baseline(&rows, &truth).unwrap(), &truth.logged_labels()).unwrap();
    assert!(r.user_precision < 1.0, "{r:?}");
    assert!(r.exact_session_match_rate < 1.0);
}

fn events(offsets: &[i64]) -> Vec<VisitEvent> {
    let t0 = FixedOffset::east_opt(10_800).unwrap().with_ymd_and_hms(2021, 8, 15, 23, 0, 0).unwrap();
    offsets
        .iter()
        .map(|&s| VisitEvent {
            time: t0 + chrono::Duration::seconds(s),
            ip: "10.1.1.1".parse().unwrap(),
            user_agent: Some("agent".into()),
            resource: format!("/r{s}"),
            referrer: None,
            inferred: false,
        })
        .collect()
}

proptest! {
    #[test]
    fn sessionize_partitions_in_order(
        gaps in prop::collection::vec(0i64..3000, 0..40),
        mode in prop_oneof![Just(SplitMode::PageGap), Just(SplitMode::SessionDuration), Just(SplitMode::Both)],
        midnight in any::<bool>(),
    ) {
        let mut t = 0;
        let mut offsets = vec![0];
        for g in gaps {
            t += g;
            offsets.push(t);
        }
        let evs = events(&offsets);
        let th = Thresholds { mode, split_at_midnight: midnight, ..Thresholds::default() };
        let parts = sessionize(&evs, &th);
        prop_assert!(parts.iter().all(|p| !p.is_empty()));
        let joined: Vec<VisitEvent> = parts.iter().flat_map(|p| p.iter().cloned()).collect();
        prop_assert_eq!(joined, evs.clone());
        // Maximal runs: every boundary has a reason.
        for w in parts.windows(2) {
            let (a, b) = (w[0], w[1][0].clone());
            let gap = (b.time - a[a.len() - 1].time).num_seconds();
            let span = (b.time - a[0].time).num_seconds();
            let page = !matches!(mode, SplitMode::SessionDuration) && gap > th.page_gap_secs;
            let dur = !matches!(mode, SplitMode::PageGap) && span > th.session_gap_secs;
            let day = midnight && b.time.date_naive() != a[a.len() - 1].time.date_naive();
            prop_assert!(page || dur || day);
        }
    }
}

#[test]
fn midnight_splits_only_when_asked() {
    // 23:50 and 00:05 local time, 15 minutes apart.
    let evs = events(&[3000, 3900]);
    let relaxed = Thresholds { page_gap_secs: 1800, ..Thresholds::default() };
    assert_eq!(sessionize(&evs, &relaxed).len(), 1);
    assert_eq!(sessionize(&evs, &Thresholds { split_at_midnight: true, ..relaxed }).len(), 2);
}
