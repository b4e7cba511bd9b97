//! CSV export and import of the store, one file per table.
//!
//! All files are UTF-8 with RFC 4180 quoting and a header row, except
//! `log_geoip.csv`, which uses the header-less GeoIP range format so it can be
//! fed straight back to [`GeoIpTable::load`]. Absent optional values are empty
//! fields.

use std::fs;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::NaiveDate;

use super::{LogStore, OpenSession, PageRecord, SessionRecord, StorageError, Tables, UserInfo};
use crate::enrichment::GeoIpTable;
use crate::model::{format_timestamp, parse_timestamp, ReferralClass};

pub const USER_INFO_COLUMNS: &[&str] = &["user_id", "username", "user_type", "gender"];

pub const OPEN_SESSIONS_COLUMNS: &[&str] = &["session_token", "opn_id", "user_id", "started_at", "last_activity"];

pub const LOG_SESSION_COLUMNS: &[&str] = &[
    "opn_id",
    "user_id",
    "username",
    "user_type",
    "gender",
    "ip",
    "country_code",
    "user_agent",
    "browser_name",
    "browser_version",
    "os_name",
    "os_version",
    "device_type",
    "language",
    "referrer_url",
    "referral_class",
    "referral_detail",
    "search_engine",
    "search_keywords",
    "started_at",
    "ended_at",
    "end_reason",
];

pub const LOG_PAGE_COLUMNS: &[&str] = &[
    "log_details_id",
    "log_opn_id",
    "log_uid",
    "log_username",
    "log_datetime",
    "log_date",
    "log_server",
    "log_app_service",
    "log_module",
    "log_url",
    "log_url_malformed",
    "log_title",
    "log_web_message",
    "log_subtitle",
    "log_cookie_serialize",
    "log_session_serialize",
    "log_post_serialize",
    "log_get_serialize",
    "log_page_load_time",
    "log_error",
];

/// File names inside a store directory.
pub const TABLE_FILES: [&str; 5] =
    ["user_info.csv", "open_sessions.csv", "log_geoip.csv", "log_session.csv", "log_page.csv"];

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub(super) fn user_row(u: &UserInfo) -> Vec<String> {
    vec![u.user_id.to_string(), u.username.clone(), u.user_type.to_string(), u.gender.to_string()]
}

pub(super) fn open_row(o: &OpenSession) -> Vec<String> {
    vec![
        o.session_token.clone(),
        o.opn_id.to_string(),
        opt(&o.user_id),
        format_timestamp(&o.started_at),
        format_timestamp(&o.last_activity),
    ]
}

pub(super) fn session_row(s: &SessionRecord) -> Vec<String> {
    vec![
        s.opn_id.to_string(),
        opt(&s.user_id),
        opt(&s.username),
        s.user_type.to_string(),
        s.gender.to_string(),
        s.ip.to_string(),
        opt(&s.country_code),
        s.user_agent.clone(),
        s.browser_name.clone(),
        s.browser_version.clone(),
        s.os_name.clone(),
        s.os_version.clone(),
        s.device_type.to_string(),
        opt(&s.language),
        opt(&s.referrer_url),
        s.referral_class.kind().to_string(),
        s.referral_class.detail().to_string(),
        opt(&s.search_engine),
        opt(&s.search_keywords),
        format_timestamp(&s.started_at),
        s.ended_at.as_ref().map(format_timestamp).unwrap_or_default(),
        opt(&s.end_reason),
    ]
}

pub(super) fn page_row(p: &PageRecord) -> Vec<String> {
    vec![
        p.log_details_id.to_string(),
        p.log_opn_id.to_string(),
        opt(&p.log_uid),
        opt(&p.log_username),
        format_timestamp(&p.log_datetime),
        p.log_date.format("%Y-%m-%d").to_string(),
        p.log_server.to_string(),
        p.log_app_service.clone(),
        p.log_module.clone(),
        p.log_url.clone(),
        u8::from(p.log_url_malformed).to_string(),
        p.log_title.clone(),
        p.log_web_message.clone(),
        p.log_subtitle.clone(),
        p.log_cookie_serialize.clone(),
        p.log_session_serialize.clone(),
        p.log_post_serialize.clone(),
        p.log_get_serialize.clone(),
        p.log_page_load_time.to_string(),
        opt(&p.log_error),
    ]
}

fn encoded_len(row: &[String]) -> usize {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(row).expect("in-memory write");
    w.into_inner().map(|b| b.len()).unwrap_or(0)
}

pub(super) fn session_row_bytes(s: &SessionRecord) -> usize {
    encoded_len(&session_row(s))
}

pub(super) fn page_row_bytes(p: &PageRecord) -> usize {
    encoded_len(&page_row(p))
}

pub(crate) fn write_table<W: Write>(
    out: W,
    columns: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()
}

/// Replaces `path` only once the new contents are fully written.
fn write_atomically(path: &Path, fill: impl FnOnce(&mut fs::File) -> std::io::Result<()>) -> std::io::Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        fill(&mut file)?;
        file.sync_all()?;
    }
    fs::rename(tmp, path)
}

struct Rows {
    path: PathBuf,
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_table(path: &Path, columns: &[&str]) -> Result<Rows, StorageError> {
    let file = fs::File::open(path)?;
    read_table_from(path, file, columns)
}

fn read_table_from<R: Read>(path: &Path, src: R, columns: &[&str]) -> Result<Rows, StorageError> {
    let import = |message: String| StorageError::Import { path: path.to_path_buf(), message };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(src);
    let headers = reader.headers().map_err(|e| import(e.to_string()))?.clone();
    if headers.iter().ne(columns.iter().copied()) {
        return Err(import(format!("expected columns {}", columns.join(","))));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| import(e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, record));
    }
    Ok(Rows { path: path.to_path_buf(), rows })
}

struct Field<'a> {
    path: &'a Path,
    line: u64,
    record: &'a csv::StringRecord,
    columns: &'a [&'a str],
}

impl Field<'_> {
    fn err(&self, col: usize, what: &str) -> StorageError {
        StorageError::Import {
            path: self.path.to_path_buf(),
            message: format!("line {}: column {}: {what} `{}`", self.line, self.columns[col], self.raw(col)),
        }
    }

    fn raw(&self, col: usize) -> &str {
        self.record.get(col).unwrap_or("")
    }

    fn string(&self, col: usize) -> String {
        self.raw(col).to_string()
    }

    fn opt_string(&self, col: usize) -> Option<String> {
        let v = self.raw(col);
        (!v.is_empty()).then(|| v.to_string())
    }

    fn parse<T: FromStr>(&self, col: usize) -> Result<T, StorageError> {
        self.raw(col).parse().map_err(|_| self.err(col, "invalid value"))
    }

    fn opt_parse<T: FromStr>(&self, col: usize) -> Result<Option<T>, StorageError> {
        if self.raw(col).is_empty() {
            Ok(None)
        } else {
            self.parse(col).map(Some)
        }
    }

    fn time(&self, col: usize) -> Result<crate::model::Timestamp, StorageError> {
        parse_timestamp(self.raw(col)).map_err(|_| self.err(col, "invalid timestamp"))
    }

    fn opt_time(&self, col: usize) -> Result<Option<crate::model::Timestamp>, StorageError> {
        if self.raw(col).is_empty() {
            Ok(None)
        } else {
            self.time(col).map(Some)
        }
    }
}

fn parse_session(f: &Field<'_>) -> Result<SessionRecord, StorageError> {
    let ip: Ipv4Addr = f.parse(5)?;
    let referral_class =
        ReferralClass::from_parts(f.raw(15), f.raw(16)).map_err(|_| f.err(15, "invalid referral class"))?;
    Ok(SessionRecord {
        opn_id: f.parse(0)?,
        user_id: f.opt_parse(1)?,
        username: f.opt_string(2),
        user_type: f.parse(3)?,
        gender: f.parse(4)?,
        ip,
        country_code: f.opt_parse(6)?,
        user_agent: f.string(7),
        browser_name: f.string(8),
        browser_version: f.string(9),
        os_name: f.string(10),
        os_version: f.string(11),
        device_type: f.parse(12)?,
        language: f.opt_string(13),
        referrer_url: f.opt_string(14),
        referral_class,
        search_engine: f.opt_string(17),
        search_keywords: f.opt_string(18),
        started_at: f.time(19)?,
        ended_at: f.opt_time(20)?,
        end_reason: f.opt_parse(21)?,
    })
}

fn parse_page(f: &Field<'_>) -> Result<PageRecord, StorageError> {
    let log_date = NaiveDate::parse_from_str(f.raw(5), "%Y-%m-%d").map_err(|_| f.err(5, "invalid date"))?;
    let malformed = match f.raw(10) {
        "0" => false,
        "1" => true,
        _ => return Err(f.err(10, "expected 0 or 1")),
    };
    Ok(PageRecord {
        log_details_id: f.parse(0)?,
        log_opn_id: f.parse(1)?,
        log_uid: f.opt_parse(2)?,
        log_username: f.opt_string(3),
        log_datetime: f.time(4)?,
        log_date,
        log_server: f.parse(6)?,
        log_app_service: f.string(7),
        log_module: f.string(8),
        log_url: f.string(9),
        log_url_malformed: malformed,
        log_title: f.string(11),
        log_web_message: f.string(12),
        log_subtitle: f.string(13),
        log_cookie_serialize: f.string(14),
        log_session_serialize: f.string(15),
        log_post_serialize: f.string(16),
        log_get_serialize: f.string(17),
        log_page_load_time: super::parse_decimal_seconds(f.raw(18)).map_err(|_| f.err(18, "invalid load time"))?,
        log_error: f.opt_string(19),
    })
}

fn each_row<T>(
    rows: &Rows,
    columns: &[&str],
    mut parse: impl FnMut(&Field<'_>) -> Result<T, StorageError>,
) -> Result<Vec<(u64, T)>, StorageError> {
    rows.rows
        .iter()
        .map(|(line, record)| {
            let f = Field { path: &rows.path, line: *line, record, columns };
            parse(&f).map(|v| (*line, v))
        })
        .collect()
}

impl LogStore {
    /// Writes all five tables into `dir`, creating it if needed.
    pub fn export_dir(&self, dir: &Path) -> Result<(), StorageError> {
        fs::create_dir_all(dir)?;
        let r = self.read();
        write_atomically(&dir.join(TABLE_FILES[0]), |f| write_table(f, USER_INFO_COLUMNS, r.users().map(user_row)))?;
        write_atomically(&dir.join(TABLE_FILES[1]), |f| {
            write_table(f, OPEN_SESSIONS_COLUMNS, r.open_sessions().into_iter().map(open_row))
        })?;
        write_atomically(&dir.join(TABLE_FILES[2]), |f| r.geoip().write_csv(f))?;
        write_atomically(&dir.join(TABLE_FILES[3]), |f| {
            write_table(f, LOG_SESSION_COLUMNS, r.sessions().iter().map(session_row))
        })?;
        write_atomically(&dir.join(TABLE_FILES[4]), |f| {
            write_table(f, LOG_PAGE_COLUMNS, r.pages().iter().map(page_row))
        })?;
        Ok(())
    }

    /// Loads a directory written by [`LogStore::export_dir`], re-checking keys,
    /// row constraints and referential integrity. Missing files are empty tables.
    pub fn import_dir(dir: &Path) -> Result<LogStore, StorageError> {
        Self::import_dir_with(dir, super::StoreOptions::default())
    }

    pub fn import_dir_with(dir: &Path, options: super::StoreOptions) -> Result<LogStore, StorageError> {
        let path_of = |i: usize| dir.join(TABLE_FILES[i]);
        let load = |i: usize, cols: &[&str]| -> Result<Rows, StorageError> {
            let path = path_of(i);
            if path.exists() {
                read_table(&path, cols)
            } else {
                Ok(Rows { path, rows: Vec::new() })
            }
        };
        let import = |path: PathBuf, line: u64, message: String| StorageError::Import {
            path,
            message: format!("line {line}: {message}"),
        };

        let mut tables = Tables::default();

        let geo_path = path_of(2);
        if geo_path.exists() {
            let table = GeoIpTable::load(fs::File::open(&geo_path)?)
                .map_err(|e| StorageError::Import { path: geo_path.clone(), message: e.to_string() })?;
            tables.geoip = Arc::new(table);
        }

        let users = load(0, USER_INFO_COLUMNS)?;
        for (line, user) in each_row(&users, USER_INFO_COLUMNS, |f| {
            Ok(UserInfo { user_id: f.parse(0)?, username: f.string(1), user_type: f.parse(2)?, gender: f.parse(3)? })
        })? {
            if tables.users.contains_key(&user.user_id) || tables.usernames.contains_key(&user.username) {
                return Err(import(users.path.clone(), line, "duplicate user".into()));
            }
            tables.usernames.insert(user.username.clone(), user.user_id);
            tables.users.insert(user.user_id, user);
        }

        let sessions = load(3, LOG_SESSION_COLUMNS)?;
        for (line, s) in each_row(&sessions, LOG_SESSION_COLUMNS, parse_session)? {
            s.validate().map_err(|e| import(sessions.path.clone(), line, e.to_string()))?;
            if tables.sessions.last().is_some_and(|prev| prev.opn_id >= s.opn_id) {
                return Err(import(sessions.path.clone(), line, "opn_id not increasing".into()));
            }
            tables.sessions.push(s);
        }

        let pages = load(4, LOG_PAGE_COLUMNS)?;
        for (line, p) in each_row(&pages, LOG_PAGE_COLUMNS, parse_page)? {
            p.validate().map_err(|e| import(pages.path.clone(), line, e.to_string()))?;
            if tables.pages.last().is_some_and(|prev| prev.log_details_id >= p.log_details_id) {
                return Err(import(pages.path.clone(), line, "log_details_id not increasing".into()));
            }
            if tables.session_index(p.log_opn_id).is_none() {
                return Err(import(
                    pages.path.clone(),
                    line,
                    StorageError::ForeignKey { opn_id: p.log_opn_id }.to_string(),
                ));
            }
            tables.pages.push(p);
        }

        let open = load(1, OPEN_SESSIONS_COLUMNS)?;
        for (line, o) in each_row(&open, OPEN_SESSIONS_COLUMNS, |f| {
            Ok(OpenSession {
                session_token: f.string(0),
                opn_id: f.parse(1)?,
                user_id: f.opt_parse(2)?,
                started_at: f.time(3)?,
                last_activity: f.time(4)?,
            })
        })? {
            if tables.session_index(o.opn_id).is_none() {
                return Err(import(open.path.clone(), line, format!("unknown opn_id {}", o.opn_id)));
            }
            if tables.open_sessions.insert(o.session_token.clone(), o).is_some() {
                return Err(import(open.path.clone(), line, "duplicate session_token".into()));
            }
        }

        let after_last =
            |last: Option<u64>, floor: Option<u64>| last.map(|id| id + 1).unwrap_or(1).max(floor.unwrap_or(1));
        tables.next_opn_id = after_last(tables.sessions.last().map(|s| s.opn_id), options.first_opn_id);
        tables.next_page_id = after_last(tables.pages.last().map(|p| p.log_details_id), options.first_page_id);

        Ok(LogStore { tables: parking_lot::RwLock::new(tables), options })
    }
}
