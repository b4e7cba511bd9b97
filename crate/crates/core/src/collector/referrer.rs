//! Referral channel classification and search keyword extraction.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use url::Url;

use crate::model::ReferralClass;

const BUILTIN_ENGINES: &str = include_str!("../../data/search_engines.tsv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchEngine {
    /// Host label that identifies the engine, e.g. `google` for `www.google.com.tr`.
    pub host_label: String,
    pub name: String,
    /// Query-string parameter carrying the search terms.
    pub query_param: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("search engine registry line {line}: {message}")]
pub struct EngineFileError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchEngineRegistry {
    engines: Vec<SearchEngine>,
}

impl SearchEngineRegistry {
    pub fn builtin() -> &'static SearchEngineRegistry {
        static BUILTIN: OnceLock<SearchEngineRegistry> = OnceLock::new();
        BUILTIN.get_or_init(|| SearchEngineRegistry::parse(BUILTIN_ENGINES).expect("bundled engine registry is valid"))
    }

    /// `host-label<TAB>engine<TAB>query-parameter` per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, EngineFileError> {
        let mut engines = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            match cols.as_slice() {
                [label, name, param] if !label.is_empty() && !name.is_empty() && !param.is_empty() => {
                    engines.push(SearchEngine {
                        host_label: label.to_ascii_lowercase(),
                        name: name.to_string(),
                        query_param: param.to_string(),
                    })
                }
                _ => {
                    return Err(EngineFileError {
                        line: idx + 1,
                        message: "expected three non-empty tab-separated columns".into(),
                    })
                }
            }
        }
        Ok(SearchEngineRegistry { engines })
    }

    pub fn engines(&self) -> &[SearchEngine] {
        &self.engines
    }

    pub fn engine_for_host(&self, host: &str) -> Option<&SearchEngine> {
        let host = host.to_ascii_lowercase();
        self.engines.iter().find(|e| host.split('.').any(|label| label == e.host_label))
    }

    pub fn engine_by_name(&self, name: &str) -> Option<&SearchEngine> {
        self.engines.iter().find(|e| e.name == name)
    }

    /// Engine and normalized search terms for a search-results referrer.
    /// Terms are lower-cased with runs of whitespace collapsed; `None` when
    /// the parameter is missing or blank.
    pub fn search_terms(&self, referrer: &str) -> Option<(&SearchEngine, Option<String>)> {
        let url = Url::parse(referrer).ok()?;
        let engine = self.engine_for_host(url.host_str()?)?;
        let terms = url
            .query_pairs()
            .find(|(k, _)| k == engine.query_param.as_str())
            .map(|(_, v)| normalize_keywords(&v))
            .filter(|v| !v.is_empty());
        Some((engine, terms))
    }
}

pub fn normalize_keywords(raw: &str) -> String {
    raw.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Host names that belong to the site itself (compared case-insensitively).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiteHosts(BTreeSet<String>);

impl SiteHosts {
    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(hosts: I) -> Self {
        SiteHosts(hosts.into_iter().map(|h| h.as_ref().trim().to_ascii_lowercase()).collect())
    }

    pub fn contains(&self, host: &str) -> bool {
        self.0.contains(&host.to_ascii_lowercase())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

/// `None`, empty and `-` referrers are direct traffic.
pub fn classify_referrer(
    referrer: Option<&str>,
    site_hosts: &SiteHosts,
    engines: &SearchEngineRegistry,
) -> ReferralClass {
    let raw = match referrer.map(str::trim) {
        None | Some("") | Some("-") => return ReferralClass::Direct,
        Some(r) => r,
    };
    let host = match Url::parse(raw) {
        Ok(url) => match url.host_str() {
            Some(h) if !h.is_empty() => h.to_ascii_lowercase(),
            _ => return ReferralClass::External { host: raw.to_string(), malformed: true },
        },
        Err(_) => return ReferralClass::External { host: raw.to_string(), malformed: true },
    };
    if site_hosts.contains(&host) {
        ReferralClass::Internal
    } else if let Some(engine) = engines.engine_for_host(&host) {
        ReferralClass::SearchEngine(engine.name.clone())
    } else {
        ReferralClass::External { host, malformed: false }
    }
}
