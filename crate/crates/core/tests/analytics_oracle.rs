mod common;

use std::fs;

use proptest::prelude::*;
use sessionlog::simulator::WorkloadConfig;
use sessionlog::LogStore;

fn store(seed: u64, n_users: usize) -> std::sync::Arc<LogStore> {
    common::collect(&common::workload(&WorkloadConfig { seed, n_users, ..WorkloadConfig::default() }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_report_matches_the_brute_force_pass(seed in any::<u64>(), n_users in 1usize..80) {
        let dir = tempfile::tempdir().unwrap();
        let bad = common::report_mismatches(&store(seed, n_users), dir.path());
        prop_assert!(bad.is_empty(), "mismatched: {:?}", bad);
    }
}

#[test]
fn reports_survive_export_and_import() {
    let s = store(3, 60);
    let dir = tempfile::tempdir().unwrap();
    s.export_dir(dir.path()).unwrap();
    let again = LogStore::import_dir(dir.path()).unwrap();
    assert_eq!(common::library_reports(&again), common::library_reports(&s));
}

#[test]
fn oracle_notices_a_missing_page_row() {
    let s = store(5, 40);
    let dir = tempfile::tempdir().unwrap();
    s.export_dir(dir.path()).unwrap();
    let path = dir.path().join("log_page.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(1);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let oracle = common::oracle_reports(dir.path());
    let lib = common::library_reports(&s);
    assert_ne!(oracle["hourly-cube"], lib["hourly-cube"]);
}

#[test]
fn empty_store_reports_are_well_formed() {
    let s = LogStore::new();
    let dir = tempfile::tempdir().unwrap();
    assert!(common::report_mismatches(&s, dir.path()).is_empty());
}
