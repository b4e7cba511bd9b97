//! Agreement between a reconstructed partition of events and the true one.
//!
//! Both sides label every event with a (user, session) pair. A session is
//! the set of events sharing a pair; a user is the set sharing the user
//! label. Precision is the purity of the reconstructed groups (each one
//! credited with its best-overlapping true group), recall is the same
//! measure with the roles swapped. A true session counts as an exact match
//! when some reconstructed session holds precisely its events.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::hash::Hash;

pub type EventId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label {
    pub user: String,
    pub session: String,
}

impl Label {
    pub fn new(user: impl Into<String>, session: impl Into<String>) -> Self {
        Label { user: user.into(), session: session.into() }
    }
}

pub type Labeling = HashMap<EventId, Label>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoreError {
    #[error(
        "event sets differ: {missing} truth events unlabelled, {extra} labelled events not in truth (first: {first})"
    )]
    Universe { missing: usize, extra: usize, first: EventId },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyReport {
    pub events: usize,
    pub truth_users: usize,
    pub reconstructed_users: usize,
    pub truth_sessions: usize,
    pub reconstructed_sessions: usize,
    pub user_precision: f64,
    pub user_recall: f64,
    pub session_precision: f64,
    pub session_recall: f64,
    pub exact_session_match_rate: f64,
}

impl AccuracyReport {
    /// `key: value` lines, with an optional prefix on each key.
    pub fn render(&self, prefix: &str) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("events", self.events.to_string()),
            ("truth_users", self.truth_users.to_string()),
            ("reconstructed_users", self.reconstructed_users.to_string()),
            ("truth_sessions", self.truth_sessions.to_string()),
            ("reconstructed_sessions", self.reconstructed_sessions.to_string()),
            ("user_precision", format!("{:.6}", self.user_precision)),
            ("user_recall", format!("{:.6}", self.user_recall)),
            ("session_precision", format!("{:.6}", self.session_precision)),
            ("session_recall", format!("{:.6}", self.session_recall)),
            ("exact_session_match_rate", format!("{:.6}", self.exact_session_match_rate)),
        ] {
            s.push_str(prefix);
            s.push_str(k);
            s.push_str(": ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }
}

impl fmt::Display for AccuracyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(""))
    }
}

struct Overlap {
    pred_groups: usize,
    truth_groups: usize,
    precision: f64,
    recall: f64,
    exact_truth_groups: usize,
}

fn overlap<K: Eq + Hash + Clone>(pairs: &[(K, K)]) -> Overlap {
    let n = pairs.len();
    let mut cell: HashMap<(K, K), usize> = HashMap::new();
    let mut pred_size: HashMap<K, usize> = HashMap::new();
    let mut truth_size: HashMap<K, usize> = HashMap::new();
    for (p, t) in pairs {
        *cell.entry((p.clone(), t.clone())).or_default() += 1;
        *pred_size.entry(p.clone()).or_default() += 1;
        *truth_size.entry(t.clone()).or_default() += 1;
    }
    let mut best_for_pred: HashMap<&K, usize> = HashMap::new();
    let mut best_for_truth: HashMap<&K, usize> = HashMap::new();
    let mut exact = 0;
    for ((p, t), &c) in &cell {
        let bp = best_for_pred.entry(p).or_default();
        *bp = (*bp).max(c);
        let bt = best_for_truth.entry(t).or_default();
        *bt = (*bt).max(c);
        if c == pred_size[p] && c == truth_size[t] {
            exact += 1;
        }
    }
    let ratio = |x: usize| if n == 0 { 1.0 } else { x as f64 / n as f64 };
    Overlap {
        pred_groups: pred_size.len(),
        truth_groups: truth_size.len(),
        precision: ratio(best_for_pred.values().sum()),
        recall: ratio(best_for_truth.values().sum()),
        exact_truth_groups: exact,
    }
}

pub fn score_against_truth(predicted: &Labeling, truth: &Labeling) -> Result<AccuracyReport, ScoreError> {
    let missing: BTreeSet<EventId> = truth.keys().filter(|k| !predicted.contains_key(k)).copied().collect();
    let extra: BTreeSet<EventId> = predicted.keys().filter(|k| !truth.contains_key(k)).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        let first = *missing.iter().chain(extra.iter()).min().expect("non-empty");
        return Err(ScoreError::Universe { missing: missing.len(), extra: extra.len(), first });
    }

    let mut users = Vec::with_capacity(truth.len());
    let mut sessions = Vec::with_capacity(truth.len());
    for (id, t) in truth {
        let p = &predicted[id];
        users.push((p.user.as_str(), t.user.as_str()));
        sessions.push((p, t));
    }
    let u = overlap(&users);
    let s = overlap(&sessions);
    Ok(AccuracyReport {
        events: truth.len(),
        truth_users: u.truth_groups,
        reconstructed_users: u.pred_groups,
        truth_sessions: s.truth_groups,
        reconstructed_sessions: s.pred_groups,
        user_precision: u.precision,
        user_recall: u.recall,
        session_precision: s.precision,
        session_recall: s.recall,
        exact_session_match_rate: if s.truth_groups == 0 {
            1.0
        } else {
            s.exact_truth_groups as f64 / s.truth_groups as f64
        },
    })
}
