//! Data cleaning: keep successful, non-static, human page requests.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::sync::OnceLock;

use chrono::{DateTime, FixedOffset};

use super::eclf::EclfEntry;
use crate::enrichment::UaRegistry;

const BUILTIN_STATIC: &str = include_str!("../../data/static_extensions.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanedEntry {
    pub ip: Ipv4Addr,
    pub timestamp: DateTime<FixedOffset>,
    pub resource: String,
    pub referrer: Option<String>,
    pub user_agent: Option<String>,
    pub cookies: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub input: usize,
    pub kept: usize,
    pub dropped_status: usize,
    pub dropped_static: usize,
    pub dropped_bot: usize,
}

impl FilterStats {
    pub fn dropped(&self) -> usize {
        self.dropped_status + self.dropped_static + self.dropped_bot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Drop {
    Status,
    Static,
    Bot,
}

#[derive(Debug, Clone)]
pub struct FilterConfig {
    /// Lower-case extensions without the dot.
    pub static_extensions: BTreeSet<String>,
    pub bots: &'static UaRegistry,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { static_extensions: builtin_static_extensions().clone(), bots: UaRegistry::builtin() }
    }
}

pub fn builtin_static_extensions() -> &'static BTreeSet<String> {
    static EXT: OnceLock<BTreeSet<String>> = OnceLock::new();
    EXT.get_or_init(|| parse_extension_list(BUILTIN_STATIC))
}

/// One extension per line (leading dot optional); `#` starts a comment.
pub fn parse_extension_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().trim_start_matches('.').to_ascii_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Extension of the last path segment, ignoring query and fragment.
pub fn resource_extension(resource: &str) -> Option<String> {
    let path = resource.split(['?', '#']).next().unwrap_or(resource);
    let segment = path.rsplit('/').next().unwrap_or(path);
    let (stem, ext) = segment.rsplit_once('.')?;
    (!stem.is_empty() && !ext.is_empty()).then(|| ext.to_ascii_lowercase())
}

impl FilterConfig {
    fn verdict(&self, e: &EclfEntry) -> Option<Drop> {
        if e.status != 200 {
            return Some(Drop::Status);
        }
        if resource_extension(&e.resource).is_some_and(|ext| self.static_extensions.contains(&ext)) {
            return Some(Drop::Static);
        }
        if e.user_agent.as_deref().is_some_and(|ua| self.bots.is_bot(ua)) {
            return Some(Drop::Bot);
        }
        None
    }

    /// Each dropped entry is counted under the first reason that applies
    /// (status, then static, then bot).
    pub fn filter_entries<I>(&self, entries: I) -> (Vec<CleanedEntry>, FilterStats)
    where
        I: IntoIterator<Item = EclfEntry>,
    {
        let mut stats = FilterStats::default();
        let mut kept = Vec::new();
        for e in entries {
            stats.input += 1;
            match self.verdict(&e) {
                Some(Drop::Status) => stats.dropped_status += 1,
                Some(Drop::Static) => stats.dropped_static += 1,
                Some(Drop::Bot) => stats.dropped_bot += 1,
                None => {
                    stats.kept += 1;
                    kept.push(CleanedEntry {
                        ip: e.ip,
                        timestamp: e.timestamp,
                        resource: e.resource,
                        referrer: e.referrer,
                        user_agent: e.user_agent,
                        cookies: e.cookies,
                    });
                }
            }
        }
        (kept, stats)
    }
}
