//! Newline-delimited replay files.
//!
//! One record per line, fields as space-separated `key=value` pairs with
//! percent-encoded keys and values. The first field is always `kind`:
//!
//! ```text
//! kind=user id=166553 username=user9 type=student gender=female
//! kind=request ts=2021-09-02T10:12:18 ip=193.140.253.80 method=GET url=http://www.server.com/?page=info token=5282b8 ...
//! kind=logout ts=2021-09-02T10:20:00 token=5282b8
//! ```
//!
//! `get.<name>`, `post.<name>` and `cookie.<name>` fill the parameter maps.
//! Optional request fields: `ref`, `lang`, `user`, and the end-of-request
//! fields `title`, `msg`, `subtitle`, `load`, `error` (present together with
//! `load`). Blank lines and lines starting with `#` are skipped.

use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, CONTROLS};

use super::RawRequestEvent;
use crate::model::{ParamMap, Timestamp};
use crate::storage::{parse_decimal_seconds, AppPageResult, UserInfo};

const ESCAPED: &AsciiSet = &CONTROLS.add(b' ').add(b'%').add(b'=').add(b'#');
const REPLAY_TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRequest {
    pub event: RawRequestEvent,
    pub result: Option<AppPageResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayRecord {
    User(UserInfo),
    Request(Box<ReplayRequest>),
    Logout { token: String, timestamp: Timestamp },
}

impl ReplayRecord {
    pub fn timestamp(&self) -> Option<Timestamp> {
        match self {
            ReplayRecord::User(_) => None,
            ReplayRecord::Request(r) => Some(r.event.timestamp),
            ReplayRecord::Logout { timestamp, .. } => Some(*timestamp),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("replay line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("replay io: {0}")]
    Io(#[from] std::io::Error),
}

fn encode(s: &str) -> String {
    utf8_percent_encode(s, ESCAPED).to_string()
}

fn decode(s: &str) -> Result<String, String> {
    percent_decode_str(s)
        .decode_utf8()
        .map(|c| c.into_owned())
        .map_err(|_| format!("`{s}` is not valid UTF-8 after decoding"))
}

/// Renders one record as a single line (without the newline).
pub fn format_record(record: &ReplayRecord) -> String {
    let mut fields: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, v: &str| fields.push((k.to_string(), v.to_string()));
    match record {
        ReplayRecord::User(u) => {
            push("kind", "user");
            push("id", &u.user_id.to_string());
            push("username", &u.username);
            push("type", u.user_type.as_str());
            push("gender", u.gender.as_str());
        }
        ReplayRecord::Logout { token, timestamp } => {
            push("kind", "logout");
            push("ts", &timestamp.format(REPLAY_TIME_FORMAT).to_string());
            push("token", token);
        }
        ReplayRecord::Request(req) => {
            let e = &req.event;
            push("kind", "request");
            push("ts", &e.timestamp.format(REPLAY_TIME_FORMAT).to_string());
            push("ip", &e.client_ip.to_string());
            push("method", e.method.as_str());
            push("url", &e.url);
            if let Some(r) = &e.referrer {
                push("ref", r);
            }
            push("ua", &e.user_agent);
            if let Some(l) = &e.accept_language {
                push("lang", l);
            }
            push("token", &e.session_token);
            if let Some(u) = &e.auth_user {
                push("user", u);
            }
            push("svc", &e.app_service);
            push("module", &e.module);
            push("server", &e.server_id.to_string());
            for (prefix, map) in [("get", &e.get_params), ("post", &e.post_params), ("cookie", &e.cookies)] {
                for (k, v) in map {
                    fields.push((format!("{prefix}.{}", encode(k)), v.clone()));
                }
            }
            if let Some(res) = &req.result {
                fields.push(("title".into(), res.page_title.clone()));
                fields.push(("msg".into(), res.web_message.clone()));
                fields.push(("subtitle".into(), res.subtitle.clone()));
                fields.push(("load".into(), res.page_load_time.to_string()));
                if let Some(err) = &res.error_text {
                    fields.push(("error".into(), err.clone()));
                }
            }
        }
    }
    fields
        .iter()
        .map(|(k, v)| {
            // Map keys are encoded when the field name is built.
            let key = if k.contains('.') { k.clone() } else { encode(k) };
            format!("{key}={}", encode(v))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_replay<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = &'a ReplayRecord>,
) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", format_record(r))?;
    }
    out.flush()
}

/// Parses one non-blank line.
pub fn parse_record(text: &str) -> Result<ReplayRecord, String> {
    let mut fields: Vec<(String, String)> = Vec::new();
    for part in text.split(' ').filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("field `{part}` has no `=`"))?;
        fields.push((k.to_string(), decode(v)?));
    }
    let mut get_params = ParamMap::new();
    let mut post_params = ParamMap::new();
    let mut cookies = ParamMap::new();
    let mut scalars: std::collections::BTreeMap<String, String> = Default::default();
    for (k, v) in fields {
        let map = match k.split_once('.') {
            Some(("get", name)) => Some((&mut get_params, name)),
            Some(("post", name)) => Some((&mut post_params, name)),
            Some(("cookie", name)) => Some((&mut cookies, name)),
            _ => None,
        };
        match map {
            Some((m, name)) => {
                m.insert(decode(name)?, v);
            }
            None => {
                let key = decode(&k)?;
                if scalars.insert(key.clone(), v).is_some() {
                    return Err(format!("duplicate field `{key}`"));
                }
            }
        }
    }
    let mut take = |key: &str| scalars.remove(key);
    let need = |v: Option<String>, key: &str| v.ok_or_else(|| format!("missing field `{key}`"));
    let time = |v: String| {
        chrono::NaiveDateTime::parse_from_str(&v, REPLAY_TIME_FORMAT).map_err(|_| format!("bad timestamp `{v}`"))
    };
    let kind = need(take("kind"), "kind")?;
    let record = match kind.as_str() {
        "user" => ReplayRecord::User(UserInfo {
            user_id: need(take("id"), "id")?.parse().map_err(|_| "bad user id".to_string())?,
            username: need(take("username"), "username")?,
            user_type: need(take("type"), "type")?.parse().map_err(|e| format!("{e}"))?,
            gender: need(take("gender"), "gender")?.parse().map_err(|e| format!("{e}"))?,
        }),
        "logout" => {
            ReplayRecord::Logout { timestamp: time(need(take("ts"), "ts")?)?, token: need(take("token"), "token")? }
        }
        "request" => {
            let client_ip: Ipv4Addr = need(take("ip"), "ip")?.parse().map_err(|_| "bad ip".to_string())?;
            let event = RawRequestEvent {
                client_ip,
                timestamp: time(need(take("ts"), "ts")?)?,
                method: need(take("method"), "method")?.parse().map_err(|e| format!("{e}"))?,
                url: need(take("url"), "url")?,
                referrer: take("ref"),
                user_agent: take("ua").unwrap_or_default(),
                accept_language: take("lang"),
                session_token: need(take("token"), "token")?,
                auth_user: take("user"),
                app_service: take("svc").unwrap_or_default(),
                module: take("module").unwrap_or_default(),
                get_params,
                post_params,
                cookies,
                server_id: take("server")
                    .map(|s| s.parse().map_err(|_| format!("bad server id `{s}`")))
                    .transpose()?
                    .unwrap_or(0),
            };
            let result = match take("load") {
                Some(load) => Some(AppPageResult {
                    page_load_time: parse_decimal_seconds(&load).map_err(|e| e.to_string())?,
                    page_title: take("title").unwrap_or_default(),
                    web_message: take("msg").unwrap_or_default(),
                    subtitle: take("subtitle").unwrap_or_default(),
                    error_text: take("error"),
                }),
                None => None,
            };
            ReplayRecord::Request(Box::new(ReplayRequest { event, result }))
        }
        other => return Err(format!("unknown kind `{other}`")),
    };
    if let Some(extra) = scalars.keys().next() {
        return Err(format!("unexpected field `{extra}`"));
    }
    if let ReplayRecord::Request(req) = &record {
        if req.event.session_token.is_empty() {
            return Err("empty session token".into());
        }
    }
    Ok(record)
}

/// Reads every record; the first malformed line aborts with its line number.
pub fn read_replay<R: BufRead>(input: R) -> Result<Vec<ReplayRecord>, ReplayError> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_record(trimmed).map_err(|message| ReplayError::Syntax { line: idx + 1, message })?);
    }
    Ok(out)
}
