//! Synthetic, fully labelled traffic for the collector and the access-log baseline.
//!
//! [`generate`] draws users, their sessions and page requests from a seeded
//! [`rng::SimRng`]. The resulting [`Workload`] renders to a collector replay
//! stream, to the equivalent combined access log, and to ground truth.
//!
//! Traffic model: every registered user has `1 + Geometric(session_rate - 1)`
//! sessions, every guest exactly one. A session has
//! `1 + Geometric(pageviews_per_session_mean - 1)` pages (capped). Gaps
//! between pages are `ceil` of a truncated exponential (mean
//! `gap_mean_secs`, at most `max_gap_secs`, at least 1 s). Consecutive
//! sessions of one user are separated by more than the timeout plus a
//! uniform pause. Each session gets a fresh token.

pub mod config;
pub mod rng;
pub mod truth;

use std::collections::HashSet;
use std::io::{self, Write};
use std::net::Ipv4Addr;

use chrono::{Duration, FixedOffset, TimeZone};
use url::Url;

pub use config::{ConfigError, NoiseConfig, WorkloadConfig};
pub use rng::SimRng;
pub use truth::{label_baseline, label_collector, GroundTruth, MatchError, TruthEvent, TruthSession};

use crate::baseline::{render_log_line, EclfEntry, LogFormat};
use crate::collector::{write_replay, RawRequestEvent, ReplayRecord, ReplayRequest};
use crate::enrichment::GeoIpTable;
use crate::model::{DeviceType, Gender, HttpMethod, ParamMap, Timestamp, UserType};
use crate::storage::{AppPageResult, UserInfo};

/// Pages of the simulated portal, with the module that serves each.
const PAGES: &[(&str, &str)] = &[
    ("/index.php", "home"),
    ("/index.php?page=info", "info"),
    ("/index.php?page=news", "news"),
    ("/index.php?page=courses", "courses"),
    ("/index.php?page=grades", "grades"),
    ("/index.php?page=schedule", "schedule"),
    ("/index.php?page=exams", "exams"),
    ("/index.php?page=library", "library"),
    ("/index.php?page=mail", "mail"),
    ("/index.php?page=profile", "profile"),
    ("/index.php?page=forms", "forms"),
    ("/index.php?page=announcements", "announcements"),
];

const DESKTOP_AGENTS: &[&str] = &[
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/99.0.4844.84 Safari/537.36",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/99.0.4844.84 Safari/537.36 Edg/99.0.1150.55",
    "Mozilla/5.0 (X11; Ubuntu; Linux x86_64; rv:98.0) Gecko/20100101 Firefox/98.0",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64; rv:98.0) Gecko/20100101 Firefox/98.0",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/15.4 Safari/605.1.15",
];
const MOBILE_AGENTS: &[&str] = &[
    "Mozilla/5.0 (Linux; Android 11; SM-A515F) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/99.0.4844.73 Mobile Safari/537.36",
    "Mozilla/5.0 (iPhone; CPU iPhone OS 15_4 like Mac OS X) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/15.4 Mobile/15E148 Safari/604.1",
    "Mozilla/5.0 (Linux; Android 10; SM-G973F) AppleWebKit/537.36 (KHTML, like Gecko) SamsungBrowser/16.2 Chrome/92.0.4515.166 Mobile Safari/537.36",
];
const TABLET_AGENTS: &[&str] = &[
    "Mozilla/5.0 (iPad; CPU OS 15_4 like Mac OS X) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/15.4 Mobile/15E148 Safari/604.1",
    "Mozilla/5.0 (Linux; Android 11; SM-T505) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/99.0.4844.73 Safari/537.36",
];
const BOT_AGENTS: &[&str] = &[
    "Mozilla/5.0 (compatible; Googlebot/2.1; +http://www.google.com/bot.html)",
    "Mozilla/5.0 (compatible; bingbot/2.0; +http://www.bing.com/bingbot.htm)",
    "Mozilla/5.0 (compatible; YandexBot/3.0; +http://yandex.com/bots)",
];
const LANGUAGES: &[&str] = &["tr-TR,tr;q=0.9,en-US;q=0.8,en;q=0.7", "en-US,en;q=0.9", "de-DE,de;q=0.9,en;q=0.5"];
const LANGUAGE_WEIGHTS: &[f64] = &[0.85, 0.12, 0.03];
const SEARCH_URLS: &[&str] = &[
    "https://www.google.com.tr/search?q=",
    "https://yandex.com.tr/search/?text=",
    "https://www.bing.com/search?q=",
    "https://search.yahoo.com/search?p=",
    "https://duckduckgo.com/?q=",
];
const SEARCH_WEIGHTS: &[f64] = &[0.6, 0.2, 0.1, 0.05, 0.05];
const KEYWORDS: &[&str] = &["campus", "campus map", "student portal", "exam results", "course schedule"];
const EXTERNAL_REFERRERS: &[&str] =
    &["https://www.facebook.com/", "https://t.co/x1", "https://news.example.org/campus"];
const STATIC_RESOURCES: &[&str] = &["/css/site.css", "/js/app.js", "/img/logo.png", "/favicon.ico"];
const TR_SHARE: f64 = 0.85;

#[derive(Debug, Clone, PartialEq)]
pub struct SimUser {
    pub user_id: u64,
    /// `None` for guests.
    pub username: Option<String>,
    pub user_type: UserType,
    pub gender: Gender,
    pub device: DeviceType,
    pub user_agent: String,
    pub accept_language: String,
    pub home_ip: Ipv4Addr,
    pub dynamic_ip: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub event_id: u64,
    pub timestamp: Timestamp,
    /// Index into [`Workload::users`].
    pub user: usize,
    pub session_id: u64,
    pub ip: Ipv4Addr,
    pub resource: String,
    pub module: String,
    pub referrer: Option<String>,
    pub token: String,
    pub back: bool,
    pub cached: bool,
    pub load_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub config: WorkloadConfig,
    pub users: Vec<SimUser>,
    /// Globally time-ordered; `event_id` is the position.
    pub events: Vec<SimEvent>,
    /// (token, time) of explicit logouts.
    pub logouts: Vec<(String, Timestamp)>,
}

fn random_ip(rng: &mut SimRng, geo: &GeoIpTable) -> Ipv4Addr {
    let ranges = geo.ranges();
    let tr: Vec<usize> = (0..ranges.len()).filter(|&i| ranges[i].country_code.to_string() == "TR").collect();
    let pool: Vec<usize> = if !tr.is_empty() && rng.chance(TR_SHARE) { tr } else { (0..ranges.len()).collect() };
    let r = &ranges[pool[rng.index(pool.len())]];
    let span = u64::from(r.end_ip - r.start_ip) + 1;
    Ipv4Addr::from(r.start_ip + rng.below(span) as u32)
}

fn agent_for(rng: &mut SimRng, device: DeviceType) -> &'static str {
    let pool = match device {
        DeviceType::Mobile => MOBILE_AGENTS,
        DeviceType::Tablet => TABLET_AGENTS,
        _ => DESKTOP_AGENTS,
    };
    pool[rng.index(pool.len())]
}

fn landing_referrer(rng: &mut SimRng, site: &str) -> Option<String> {
    match rng.weighted(&[0.5, 0.25, 0.15, 0.1]) {
        0 => None,
        1 => {
            let base = SEARCH_URLS[rng.weighted(SEARCH_WEIGHTS)];
            Some(format!("{base}{}", KEYWORDS[rng.index(KEYWORDS.len())].replace(' ', "+")))
        }
        2 => Some(EXTERNAL_REFERRERS[rng.index(EXTERNAL_REFERRERS.len())].to_string()),
        _ => Some(format!("http://{site}/")),
    }
}

fn draw_users(cfg: &WorkloadConfig, rng: &mut SimRng, geo: &GeoIpTable) -> Vec<SimUser> {
    let type_weights: Vec<f64> = cfg.user_type_mix.iter().map(|(_, w)| *w).collect();
    let device_weights: Vec<f64> = cfg.device_mix.iter().map(|(_, w)| *w).collect();
    let nat_users = (cfg.nat_share * cfg.n_users as f64).round() as usize;
    let nat_pool: Vec<Ipv4Addr> = (0..nat_users.div_ceil(5)).map(|_| random_ip(rng, geo)).collect();
    let mut nat_left = nat_users;
    (0..cfg.n_users)
        .map(|i| {
            let user_type = cfg.user_type_mix[rng.weighted(&type_weights)].0;
            let gender = if user_type.is_genderless() {
                Gender::NotApplicable
            } else if rng.chance(0.5) {
                Gender::Male
            } else {
                Gender::Female
            };
            let device = cfg.device_mix[rng.weighted(&device_weights)].0;
            let user_agent = agent_for(rng, device).to_string();
            let accept_language = LANGUAGES[rng.weighted(LANGUAGE_WEIGHTS)].to_string();
            // Spread NAT membership evenly over the population by drawing without replacement.
            let behind_nat = nat_left > 0 && rng.below((cfg.n_users - i) as u64) < nat_left as u64;
            let home_ip = if behind_nat {
                nat_left -= 1;
                nat_pool[rng.index(nat_pool.len())]
            } else {
                random_ip(rng, geo)
            };
            let dynamic_ip = rng.chance(cfg.dynamic_ip_share);
            let user_id = i as u64 + 1;
            SimUser {
                user_id,
                username: (user_type != UserType::Guest).then(|| format!("user{user_id:05}")),
                user_type,
                gender,
                device,
                user_agent,
                accept_language,
                home_ip,
                dynamic_ip,
            }
        })
        .collect()
}

struct Draft {
    timestamp: Timestamp,
    user: usize,
    seq: u64,
    event: SimEvent,
}

/// Validates the config and draws a workload. Same config, same output.
pub fn generate(cfg: &WorkloadConfig) -> Result<Workload, ConfigError> {
    cfg.validate()?;
    let geo = GeoIpTable::builtin();
    let mut rng = SimRng::new(cfg.seed, rng::EVENT_STREAM);
    let users = draw_users(cfg, &mut rng, geo);

    let mut drafts: Vec<Draft> = Vec::new();
    let mut logouts = Vec::new();
    let mut tokens: HashSet<String> = HashSet::new();
    let mut next_session = 1u64;
    let mut seq = 0u64;
    for (ui, user) in users.iter().enumerate() {
        let sessions = if user.username.is_some() { 1 + rng.geometric(cfg.session_rate - 1.0) } else { 1 };
        let mut at = cfg.start + Duration::seconds(rng.below(cfg.duration_secs as u64) as i64);
        for _ in 0..sessions {
            let session_id = next_session;
            next_session += 1;
            let token = loop {
                let t = format!("{:016x}", rng.next_u64());
                if tokens.insert(t.clone()) {
                    break t;
                }
            };
            let pages = (1 + rng.geometric(cfg.pageviews_per_session_mean - 1.0)).min(cfg.max_pageviews);
            let ip_switch = (user.dynamic_ip && pages > 1).then(|| 1 + rng.below(pages - 1));
            let mut ip = user.home_ip;
            let mut history: Vec<(usize, Option<String>)> = Vec::new();
            for p in 0..pages {
                if p > 0 {
                    let gap = rng.truncated_exp(cfg.gap_mean_secs, cfg.max_gap_secs as f64).ceil() as i64;
                    at += Duration::seconds(gap.clamp(1, cfg.max_gap_secs));
                }
                if ip_switch == Some(p) {
                    ip = random_ip(&mut rng, geo);
                }
                let (page, referrer, back) = if p == 0 {
                    let page = if rng.chance(0.6) { 0 } else { rng.index(PAGES.len()) };
                    (page, landing_referrer(&mut rng, &cfg.site_host), false)
                } else if history.len() >= 2 && rng.chance(cfg.back_nav_share) {
                    history.pop();
                    let (page, referrer) = history.last().cloned().expect("non-empty history");
                    (page, referrer, true)
                } else {
                    let current = history.last().map(|h| h.0).unwrap_or(0);
                    let mut next = rng.index(PAGES.len() - 1);
                    if next >= current {
                        next += 1;
                    }
                    (next, Some(format!("http://{}{}", cfg.site_host, PAGES[current].0)), false)
                };
                if !back {
                    history.push((page, referrer.clone()));
                }
                let cached = back && rng.chance(cfg.cached_nav_share);
                let load_time = (50.0 + rng.unit() * 5000.0).round() / 10_000.0;
                drafts.push(Draft {
                    timestamp: at,
                    user: ui,
                    seq,
                    event: SimEvent {
                        event_id: 0,
                        timestamp: at,
                        user: ui,
                        session_id,
                        ip,
                        resource: PAGES[page].0.to_string(),
                        module: PAGES[page].1.to_string(),
                        referrer,
                        token: token.clone(),
                        back,
                        cached,
                        load_time,
                    },
                });
                seq += 1;
            }
            if user.username.is_some() && rng.chance(cfg.logout_share) {
                logouts.push((token, at + Duration::seconds(1 + rng.below(60) as i64)));
            }
            at += Duration::seconds(
                cfg.timeout_secs + 1 + rng.below((cfg.duration_secs / sessions as i64).max(1) as u64) as i64,
            );
        }
    }
    drafts.sort_by_key(|d| (d.timestamp, d.user, d.seq));
    let events = drafts.into_iter().enumerate().map(|(i, d)| SimEvent { event_id: i as u64, ..d.event }).collect();
    logouts.sort();
    Ok(Workload { config: cfg.clone(), users, events, logouts })
}

fn query_params(url: &str) -> ParamMap {
    Url::parse(url).map(|u| u.query_pairs().into_owned().collect()).unwrap_or_default()
}

impl Workload {
    pub fn page_url(&self, resource: &str) -> String {
        format!("http://{}{resource}", self.config.site_host)
    }

    /// Directory rows first, then requests and logouts merged by time
    /// (a logout sorts after requests of the same second).
    pub fn replay_records(&self) -> Vec<ReplayRecord> {
        let mut out: Vec<ReplayRecord> = self
            .users
            .iter()
            .filter_map(|u| {
                Some(ReplayRecord::User(UserInfo {
                    user_id: u.user_id,
                    username: u.username.clone()?,
                    user_type: u.user_type,
                    gender: u.gender,
                }))
            })
            .collect();
        let mut logouts = self.logouts.iter().peekable();
        for e in &self.events {
            while let Some((token, at)) = logouts.next_if(|(_, at)| *at < e.timestamp) {
                out.push(ReplayRecord::Logout { token: token.clone(), timestamp: *at });
            }
            out.push(ReplayRecord::Request(Box::new(self.request(e))));
        }
        out.extend(logouts.map(|(token, at)| ReplayRecord::Logout { token: token.clone(), timestamp: *at }));
        out
    }

    fn request(&self, e: &SimEvent) -> ReplayRequest {
        let user = &self.users[e.user];
        let url = self.page_url(&e.resource);
        let mut cookies = ParamMap::new();
        cookies.insert("sid".into(), e.token.clone());
        ReplayRequest {
            event: RawRequestEvent {
                client_ip: e.ip,
                timestamp: e.timestamp,
                method: HttpMethod::Get,
                get_params: query_params(&url),
                url,
                referrer: e.referrer.clone(),
                user_agent: user.user_agent.clone(),
                accept_language: Some(user.accept_language.clone()),
                session_token: e.token.clone(),
                auth_user: user.username.clone(),
                app_service: "portal".into(),
                module: e.module.clone(),
                post_params: ParamMap::new(),
                cookies,
                server_id: 1,
            },
            result: Some(AppPageResult {
                page_title: format!("Portal - {}", e.module),
                web_message: String::new(),
                subtitle: String::new(),
                page_load_time: e.load_time,
                error_text: None,
            }),
        }
    }

    pub fn write_replay<W: Write>(&self, out: W) -> io::Result<()> {
        write_replay(out, self.replay_records().iter())
    }

    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            events: self
                .events
                .iter()
                .map(|e| {
                    let u = &self.users[e.user];
                    TruthEvent {
                        event_id: e.event_id,
                        timestamp: e.timestamp,
                        ip: e.ip,
                        user_agent: u.user_agent.clone(),
                        resource: e.resource.clone(),
                        cached: e.cached,
                        user_id: u.user_id,
                        session_id: e.session_id,
                        user_type: u.user_type,
                        gender: u.gender,
                        device: u.device,
                    }
                })
                .collect(),
        }
    }

    /// Combined-format access log: one line per non-cached page request plus
    /// static, crawler and failed-request noise, in time order.
    pub fn eclf_entries(&self) -> Vec<EclfEntry> {
        let cfg = &self.config;
        let noise = cfg.noise;
        let tz = FixedOffset::east_opt(cfg.utc_offset_secs).expect("validated offset");
        let mut rng = SimRng::new(cfg.seed, rng::NOISE_STREAM);
        let at = |ts: Timestamp| tz.from_local_datetime(&ts).single().expect("fixed offsets are unambiguous");
        let entry =
            |rng: &mut SimRng, ts, ip, resource: &str, status, referrer: Option<String>, agent: &str| EclfEntry {
                ip,
                identd: "-".into(),
                authuser: "-".into(),
                timestamp: at(ts),
                method: "GET".into(),
                resource: resource.to_string(),
                protocol: "HTTP/1.1".into(),
                status,
                bytes: Some(200 + rng.below(20_000)),
                referrer,
                user_agent: Some(agent.to_string()),
                cookies: None,
            };

        let mut lines: Vec<(Timestamp, u64, EclfEntry)> = Vec::new();
        let mut seq = 0u64;
        let mut push = |lines: &mut Vec<_>, ts, e| {
            lines.push((ts, seq, e));
            seq += 1;
        };
        let logged: Vec<&SimEvent> = self.events.iter().filter(|e| !e.cached).collect();
        for e in &logged {
            let user = &self.users[e.user];
            let mut page = entry(&mut rng, e.timestamp, e.ip, &e.resource, 200, e.referrer.clone(), &user.user_agent);
            if !rng.chance(cfg.cookie_loss_share) {
                page.cookies = Some(format!("sid={}", e.token));
            }
            push(&mut lines, e.timestamp, page);
            for _ in 0..rng.geometric(noise.static_per_page) {
                let res = STATIC_RESOURCES[rng.index(STATIC_RESOURCES.len())];
                let s =
                    entry(&mut rng, e.timestamp, e.ip, res, 200, Some(self.page_url(&e.resource)), &user.user_agent);
                push(&mut lines, e.timestamp, s);
            }
        }
        if let (Some(first), Some(last)) = (logged.first(), logged.last()) {
            let span = (last.timestamp - first.timestamp).num_seconds().max(0) as u64 + 1;
            let bots = (noise.bot_share * logged.len() as f64).round() as usize;
            for _ in 0..bots {
                let ts = first.timestamp + Duration::seconds(rng.below(span) as i64);
                let ip = Ipv4Addr::new(66, 249, 64, rng.below(256) as u8);
                let agent = BOT_AGENTS[rng.index(BOT_AGENTS.len())];
                let res = PAGES[rng.index(PAGES.len())].0;
                let b = entry(&mut rng, ts, ip, res, 200, None, agent);
                push(&mut lines, ts, b);
            }
            let errors = (noise.error_share * logged.len() as f64).round() as usize;
            for _ in 0..errors {
                let e = logged[rng.index(logged.len())];
                let agent = &self.users[e.user].user_agent;
                let f = entry(&mut rng, e.timestamp, e.ip, "/app/admin/adm.php", 404, None, agent);
                push(&mut lines, e.timestamp, f);
            }
        }
        lines.sort_by_key(|(ts, seq, _)| (*ts, *seq));
        lines.into_iter().map(|(_, _, e)| e).collect()
    }

    pub fn write_eclf<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in self.eclf_entries() {
            writeln!(out, "{}", render_log_line(&e, LogFormat::Eclf))?;
        }
        out.flush()
    }
}
