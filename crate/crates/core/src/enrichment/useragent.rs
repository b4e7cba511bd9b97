//! Rule-driven user-agent classification.
//!
//! The registry is a small ordered list of substring rules loaded from a
//! tab-separated text file (see `data/ua_rules.tsv`). Within each rule kind
//! the first match wins, so more specific tokens (`Edg`, `OPR`) must precede
//! the generic ones they contain (`Chrome`, `Safari`).

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::model::DeviceType;

const BUILTIN_RULES: &str = include_str!("../../data/ua_rules.tsv");

pub const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientProfile {
    pub browser_name: String,
    pub browser_version: String,
    pub os_name: String,
    pub os_version: String,
    pub device_type: DeviceType,
    pub is_bot: bool,
    pub language: Option<String>,
}

impl ClientProfile {
    pub fn unknown() -> Self {
        ClientProfile {
            browser_name: UNKNOWN.into(),
            browser_version: UNKNOWN.into(),
            os_name: UNKNOWN.into(),
            os_version: UNKNOWN.into(),
            device_type: DeviceType::Unknown,
            is_bot: false,
            language: None,
        }
    }

    pub fn with_language(mut self, language: Option<String>) -> Self {
        self.language = language;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Bot,
    Browser,
    Os,
    Device,
}

impl FromStr for RuleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bot" => Ok(RuleKind::Bot),
            "browser" => Ok(RuleKind::Browser),
            "os" => Ok(RuleKind::Os),
            "device" => Ok(RuleKind::Device),
            other => Err(format!("unknown rule kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Rule {
    token: String,
    version_token: String,
    name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("user-agent rules line {line}: {message}")]
pub struct RuleFileError {
    pub line: usize,
    pub message: String,
}

/// Immutable after construction; share it freely between threads.
#[derive(Debug, Clone, Default)]
pub struct UaRegistry {
    bots: Vec<Rule>,
    browsers: Vec<Rule>,
    oses: Vec<Rule>,
    devices: Vec<(Rule, DeviceType)>,
}

impl UaRegistry {
    /// The registry shipped with the crate.
    pub fn builtin() -> &'static UaRegistry {
        static BUILTIN: OnceLock<UaRegistry> = OnceLock::new();
        BUILTIN.get_or_init(|| UaRegistry::parse(BUILTIN_RULES).expect("bundled user-agent rules are valid"))
    }

    pub fn parse(text: &str) -> Result<Self, RuleFileError> {
        let mut registry = UaRegistry::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: String| RuleFileError { line, message };
            let mut cols = trimmed.split('\t');
            let (Some(kind), Some(token), Some(name), None) = (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(err("expected three tab-separated columns".into()));
            };
            let kind: RuleKind = kind.trim().parse().map_err(err)?;
            let (token, version_token) = match token.split_once('@') {
                Some((t, v)) => (t.to_string(), v.to_string()),
                None => (token.to_string(), token.to_string()),
            };
            if token.is_empty() || version_token.is_empty() || name.trim().is_empty() {
                return Err(err("empty token or name".into()));
            }
            let name = name.trim().to_string();
            match kind {
                RuleKind::Bot => registry.bots.push(Rule {
                    token: token.to_ascii_lowercase(),
                    version_token: version_token.to_ascii_lowercase(),
                    name,
                }),
                RuleKind::Browser => registry.browsers.push(Rule { token, version_token, name }),
                RuleKind::Os => registry.oses.push(Rule { token, version_token, name }),
                RuleKind::Device => {
                    let device = match name.as_str() {
                        "mobile" => DeviceType::Mobile,
                        "tablet" => DeviceType::Tablet,
                        other => return Err(err(format!("device rule names `{other}`"))),
                    };
                    registry.devices.push((Rule { token, version_token, name }, device));
                }
            }
        }
        Ok(registry)
    }

    /// True when the agent contains one of the registered bot substrings.
    pub fn is_bot(&self, ua: &str) -> bool {
        let lower = ua.to_ascii_lowercase();
        self.bots.iter().any(|r| lower.contains(&r.token))
    }

    /// Total: every input, including the empty string, yields a profile.
    pub fn parse_user_agent(&self, ua: &str) -> ClientProfile {
        let mut profile = ClientProfile::unknown();
        if ua.trim().is_empty() {
            return profile;
        }

        if let Some((name, version)) = first_match(&self.oses, ua) {
            profile.os_name = name;
            profile.os_version = version;
        }

        let lower = ua.to_ascii_lowercase();
        if let Some(rule) = self.bots.iter().find(|r| lower.contains(&r.token)) {
            // ASCII lowercasing keeps byte offsets, so versions are read from the original.
            profile.browser_name = rule.name.clone();
            profile.browser_version = lower
                .find(&rule.version_token)
                .map(|at| read_version(&ua[at + rule.version_token.len()..]))
                .unwrap_or_else(|| UNKNOWN.to_string());
            profile.device_type = DeviceType::Bot;
            profile.is_bot = true;
            return profile;
        }

        let browser = first_match(&self.browsers, ua);
        if let Some((name, version)) = &browser {
            profile.browser_name = name.clone();
            profile.browser_version = version.clone();
        }

        profile.device_type = match self.devices.iter().find(|(r, _)| ua.contains(&r.token)) {
            Some((_, device)) => *device,
            None if browser.is_some() || profile.os_name != UNKNOWN => DeviceType::Desktop,
            None => DeviceType::Unknown,
        };
        profile
    }
}

impl fmt::Display for ClientProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} / {} {} / {}",
            self.browser_name, self.browser_version, self.os_name, self.os_version, self.device_type
        )
    }
}

/// Classify with the bundled registry.
pub fn parse_user_agent(ua: &str) -> ClientProfile {
    UaRegistry::builtin().parse_user_agent(ua)
}

fn first_match(rules: &[Rule], ua: &str) -> Option<(String, String)> {
    rules.iter().find(|r| ua.contains(&r.token)).map(|r| {
        let version = ua
            .find(&r.version_token)
            .map(|at| read_version(&ua[at + r.version_token.len()..]))
            .unwrap_or_else(|| UNKNOWN.to_string());
        (r.name.clone(), version)
    })
}

/// Reads `[/ :]?D+([._]D+)*` from the start of `rest`, returning it with
/// underscores turned into dots, or `unknown`.
fn read_version(rest: &str) -> String {
    let rest = rest.strip_prefix(['/', ' ', ':']).unwrap_or(rest);
    let bytes = rest.as_bytes();
    let mut out = String::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_digit() {
            out.push(b as char);
            i += 1;
        } else if (b == b'.' || b == b'_') && !out.is_empty() && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
            out.push('.');
            i += 1;
        } else {
            break;
        }
    }
    if out.is_empty() {
        UNKNOWN.to_string()
    } else {
        out
    }
}

/// First tag of an Accept-Language style value, e.g. `tr-TR,tr;q=0.9` → `tr-TR`.
pub fn primary_language(accept_language: &str) -> Option<String> {
    let first = accept_language.split(',').next()?.split(';').next()?.trim();
    if first.is_empty() || first == "*" || !first.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
        return None;
    }
    let mut parts = first.split('-');
    let mut tag = parts.next()?.to_ascii_lowercase();
    for sub in parts {
        tag.push('-');
        if sub.len() == 2 {
            tag.push_str(&sub.to_ascii_uppercase());
        } else {
            tag.push_str(sub);
        }
    }
    Some(tag)
}
