//! NCSA Common (CLF) and Combined (ECLF) access-log lines.
//!
//! `%h %l %u %t "%r" %s %b` for CLF, followed by `"%{Referer}i"
//! "%{User-agent}i"` for ECLF, and optionally one more quoted field holding
//! the raw cookie header. Inside quoted fields `\"` and `\\` are the only
//! escapes; lines that use just those render back byte-for-byte.

use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset};

pub const CLF_TIME_FORMAT: &str = "%d/%b/%Y:%H:%M:%S %z";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Clf,
    Eclf,
    /// Pick by field count: 7 is CLF, 9 or 10 is ECLF.
    Auto,
}

impl FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "clf" => Ok(LogFormat::Clf),
            "eclf" | "combined" => Ok(LogFormat::Eclf),
            "auto" => Ok(LogFormat::Auto),
            other => Err(format!("unknown log format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EclfEntry {
    pub ip: Ipv4Addr,
    pub identd: String,
    pub authuser: String,
    pub timestamp: DateTime<FixedOffset>,
    pub method: String,
    pub resource: String,
    pub protocol: String,
    pub status: u16,
    pub bytes: Option<u64>,
    /// `None` for CLF lines and for a logged `"-"`.
    pub referrer: Option<String>,
    pub user_agent: Option<String>,
    pub cookies: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct LineParseError(pub String);

#[derive(Debug, PartialEq, Eq)]
enum Token<'a> {
    Bare(&'a str),
    Bracketed(&'a str),
    Quoted(String),
}

fn tokenize(line: &str) -> Result<Vec<Token<'_>>, LineParseError> {
    let bytes = line.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b' ' => i += 1,
            b'[' => {
                let end = line[i..].find(']').ok_or_else(|| LineParseError("unterminated `[`".into()))?;
                tokens.push(Token::Bracketed(&line[i + 1..i + end]));
                i += end + 1;
            }
            b'"' => {
                let mut value = String::new();
                let mut chars = line[i + 1..].char_indices();
                let mut closed = None;
                while let Some((off, c)) = chars.next() {
                    match c {
                        '\\' => match chars.next() {
                            Some((_, e @ ('"' | '\\'))) => value.push(e),
                            Some((_, other)) => {
                                value.push('\\');
                                value.push(other);
                            }
                            None => value.push('\\'),
                        },
                        '"' => {
                            closed = Some(off);
                            break;
                        }
                        c => value.push(c),
                    }
                }
                let off = closed.ok_or_else(|| LineParseError("unterminated quote".into()))?;
                tokens.push(Token::Quoted(value));
                i += 1 + off + 1;
            }
            _ => {
                let end = line[i..].find(' ').map(|e| i + e).unwrap_or(line.len());
                tokens.push(Token::Bare(&line[i..end]));
                i = end;
            }
        }
    }
    Ok(tokens)
}

fn bare<'a>(t: &'a Token<'_>, what: &str) -> Result<&'a str, LineParseError> {
    match t {
        Token::Bare(s) => Ok(s),
        _ => Err(LineParseError(format!("expected bare {what}"))),
    }
}

fn quoted<'a>(t: &'a Token<'_>, what: &str) -> Result<&'a str, LineParseError> {
    match t {
        Token::Quoted(s) => Ok(s),
        _ => Err(LineParseError(format!("expected quoted {what}"))),
    }
}

fn dash_to_none(s: &str) -> Option<String> {
    (s != "-").then(|| s.to_string())
}

pub fn parse_log_line(line: &str, format: LogFormat) -> Result<EclfEntry, LineParseError> {
    let line = line.trim_end_matches(['\r', '\n']);
    let tokens = tokenize(line)?;
    let n = tokens.len();
    let combined = match (format, n) {
        (LogFormat::Clf, 7) | (LogFormat::Auto, 7) => false,
        (LogFormat::Eclf, 9 | 10) | (LogFormat::Auto, 9 | 10) => true,
        _ => return Err(LineParseError(format!("unexpected field count {n} for {format:?}"))),
    };

    let ip: Ipv4Addr =
        bare(&tokens[0], "host")?.parse().map_err(|_| LineParseError("host is not an IPv4 address".into()))?;
    let identd = bare(&tokens[1], "identd")?.to_string();
    let authuser = bare(&tokens[2], "authuser")?.to_string();
    let time_text = match &tokens[3] {
        Token::Bracketed(s) => *s,
        _ => return Err(LineParseError("expected [timestamp]".into())),
    };
    let timestamp = DateTime::parse_from_str(time_text, CLF_TIME_FORMAT)
        .map_err(|e| LineParseError(format!("bad timestamp `{time_text}`: {e}")))?;

    let request = quoted(&tokens[4], "request line")?;
    let mut parts = request.split(' ');
    let (Some(method), Some(resource), Some(protocol), None) = (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(LineParseError(format!("malformed request line `{request}`")));
    };
    if method.is_empty() || !(resource.starts_with('/') || resource == "*") || protocol.is_empty() {
        return Err(LineParseError(format!("malformed request line `{request}`")));
    }

    let status: u16 =
        bare(&tokens[5], "status")?.parse().map_err(|_| LineParseError("status is not a number".into()))?;
    if !(100..=599).contains(&status) {
        return Err(LineParseError(format!("status {status} out of range")));
    }
    let bytes = match bare(&tokens[6], "size")? {
        "-" => None,
        s => Some(s.parse().map_err(|_| LineParseError(format!("bad size `{s}`")))?),
    };

    let (referrer, user_agent, cookies) = if combined {
        (
            dash_to_none(quoted(&tokens[7], "referrer")?),
            dash_to_none(quoted(&tokens[8], "user agent")?),
            match tokens.get(9) {
                Some(t) => dash_to_none(quoted(t, "cookies")?),
                None => None,
            },
        )
    } else {
        (None, None, None)
    };

    Ok(EclfEntry {
        ip,
        identd,
        authuser,
        timestamp,
        method: method.to_string(),
        resource: resource.to_string(),
        protocol: protocol.to_string(),
        status,
        bytes,
        referrer,
        user_agent,
        cookies,
    })
}

fn push_quoted(out: &mut String, value: Option<&str>) {
    out.push_str(" \"");
    for c in value.unwrap_or("-").chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
}

/// Formats the entry as a log line (no trailing newline). ECLF lines gain a
/// cookie field only when the entry carries cookies.
pub fn render_log_line(entry: &EclfEntry, format: LogFormat) -> String {
    let mut out = String::with_capacity(160);
    let _ =
        write!(out, "{} {} {} [{}]", entry.ip, entry.identd, entry.authuser, entry.timestamp.format(CLF_TIME_FORMAT));
    push_quoted(&mut out, Some(&format!("{} {} {}", entry.method, entry.resource, entry.protocol)));
    let _ = write!(out, " {} ", entry.status);
    match entry.bytes {
        Some(b) => {
            let _ = write!(out, "{b}");
        }
        None => out.push('-'),
    }
    if format != LogFormat::Clf {
        push_quoted(&mut out, entry.referrer.as_deref());
        push_quoted(&mut out, entry.user_agent.as_deref());
        if entry.cookies.is_some() {
            push_quoted(&mut out, entry.cookies.as_deref());
        }
    }
    out
}
