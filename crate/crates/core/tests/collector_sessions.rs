mod common;

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{NaiveDate, NaiveDateTime};
use proptest::prelude::*;
use sessionlog::baseline::score_against_truth;
use sessionlog::collector::{ReplayRecord, ReplayRequest};
use sessionlog::model::{HttpMethod, ParamMap};
use sessionlog::simulator::{label_collector, WorkloadConfig};
use sessionlog::{Collector, CollectorConfig, EndReason, LogStore, RawRequestEvent};

const TIMEOUT: i64 = 1800;

fn t0() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2021, 9, 2).unwrap().and_hms_opt(8, 0, 0).unwrap()
}

fn request(token: &str, at: NaiveDateTime) -> ReplayRecord {
    ReplayRecord::Request(Box::new(ReplayRequest {
        event: RawRequestEvent {
            client_ip: "193.140.253.80".parse().unwrap(),
            timestamp: at,
            method: HttpMethod::Get,
            url: "http://www.server.com/index.php".into(),
            referrer: None,
            user_agent: "Mozilla/5.0 (X11; Linux x86_64; rv:98.0) Gecko/20100101 Firefox/98.0".into(),
            accept_language: None,
            session_token: token.into(),
            auth_user: None,
            app_service: "portal".into(),
            module: "home".into(),
            get_params: ParamMap::new(),
            post_params: ParamMap::new(),
            cookies: ParamMap::new(),
            server_id: 1,
        },
        result: None,
    }))
}

/// Reference model of the token state machine: the expected session number of
/// every request and the total number of sessions.
fn reference(ops: &[(usize, i64, bool)]) -> (Vec<usize>, usize) {
    let mut open: HashMap<usize, (usize, i64)> = HashMap::new();
    let (mut now, mut count, mut per_page) = (0i64, 0usize, Vec::new());
    for &(token, gap, logout) in ops {
        now += gap;
        if logout {
            open.remove(&token);
            continue;
        }
        let session = match open.get(&token) {
            Some(&(id, last)) if now - last <= TIMEOUT => id,
            _ => {
                count += 1;
                count
            }
        };
        open.insert(token, (session, now));
        per_page.push(session);
    }
    (per_page, count)
}

fn records(ops: &[(usize, i64, bool)]) -> Vec<ReplayRecord> {
    let mut now = t0();
    ops.iter()
        .map(|&(token, gap, logout)| {
            now += chrono::Duration::seconds(gap);
            let token = format!("tok{token}");
            if logout {
                ReplayRecord::Logout { token, timestamp: now }
            } else {
                request(&token, now)
            }
        })
        .collect()
}

fn op() -> impl Strategy<Value = (usize, i64, bool)> {
    // Gaps straddle the timeout often enough to exercise both branches.
    (0usize..4, prop_oneof![0i64..600, 1700i64..1900, 1800i64..1801, 2000i64..6000], prop::bool::weighted(0.1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sessions_follow_the_reference_state_machine(ops in prop::collection::vec(op(), 1..80)) {
        let (expected, expected_count) = reference(&ops);
        let store = Arc::new(LogStore::new());
        let collector = Collector::new(Arc::clone(&store), CollectorConfig::default());
        collector.replay(records(&ops)).unwrap();
        let reader = store.read();
        prop_assert_eq!(reader.sessions().len(), expected_count);
        prop_assert_eq!(reader.pages().len(), expected.len());
        // Same partition: page i and j share a session iff the model says so.
        let got: Vec<u64> = reader.pages().iter().map(|p| p.log_opn_id).collect();
        let mut map: HashMap<usize, u64> = HashMap::new();
        for (e, g) in expected.iter().zip(&got) {
            prop_assert_eq!(*map.entry(*e).or_insert(*g), *g);
        }
        let distinct: std::collections::HashSet<&u64> = got.iter().collect();
        prop_assert_eq!(distinct.len(), map.len());
    }

    #[test]
    fn small_workloads_are_reconstructed_exactly(
        seed in any::<u64>(),
        nat in 0.0f64..1.0,
        dynamic in 0.0f64..0.5,
        cookie_loss in 0.0f64..1.0,
    ) {
        let cfg = WorkloadConfig {
            seed,
            n_users: 25,
            nat_share: nat,
            dynamic_ip_share: dynamic,
            cookie_loss_share: cookie_loss,
            ..WorkloadConfig::default()
        };
        let w = common::workload(&cfg);
        let truth = w.truth();
        let store = common::collect(&w);
        let reader = store.read();
        prop_assert_eq!(reader.sessions().len(), truth.session_count());
        prop_assert_eq!(reader.join_sessions_pages().count(), truth.events.len());
        let labels = label_collector(reader.pages(), &truth).unwrap();
        let r = score_against_truth(&labels, &truth.labels()).unwrap();
        prop_assert_eq!(r.exact_session_match_rate, 1.0);
        prop_assert_eq!(r.user_precision, 1.0);
    }
}

#[test]
fn logout_then_same_token_opens_a_new_session() {
    let store = Arc::new(LogStore::new());
    let collector = Collector::new(Arc::clone(&store), CollectorConfig::default());
    let t = t0();
    collector
        .replay(vec![
            request("a", t),
            ReplayRecord::Logout { token: "a".into(), timestamp: t + chrono::Duration::seconds(10) },
            request("a", t + chrono::Duration::seconds(20)),
        ])
        .unwrap();
    let reader = store.read();
    assert_eq!(reader.sessions().len(), 2);
    assert_eq!(reader.sessions()[0].end_reason, Some(EndReason::Logout));
    assert_eq!(reader.open_sessions().len(), 1);
}

#[test]
fn sweep_closes_only_idle_sessions() {
    let store = Arc::new(LogStore::new());
    let collector = Collector::new(Arc::clone(&store), CollectorConfig::default());
    let t = t0();
    collector.replay(vec![request("idle", t), request("busy", t + chrono::Duration::seconds(3000))]).unwrap();
    let closed = collector.sweep_expired(t + chrono::Duration::seconds(3600), TIMEOUT);
    assert_eq!(closed, 1);
    let reader = store.read();
    let idle = &reader.sessions()[0];
    assert_eq!((idle.end_reason, idle.ended_at), (Some(EndReason::Timeout), Some(t)));
    assert_eq!(reader.open_sessions()[0].session_token, "busy");
}
