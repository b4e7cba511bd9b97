use std::net::Ipv4Addr;

use chrono::NaiveDate;

use crate::enrichment::{ClientProfile, CountryCode};
use crate::model::{DeviceType, EndReason, Gender, ReferralClass, Timestamp, UserType};

use super::StorageError;

/// A row of the application's user directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserInfo {
    pub user_id: u64,
    pub username: String,
    pub user_type: UserType,
    pub gender: Gender,
}

/// Live-session bookkeeping, keyed by the client's session token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenSession {
    pub session_token: String,
    pub opn_id: u64,
    pub user_id: Option<u64>,
    pub started_at: Timestamp,
    pub last_activity: Timestamp,
}

/// One visit: the data that stays fixed while the visitor browses.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    /// Assigned by the store on insert; the value passed in is ignored.
    pub opn_id: u64,
    pub user_id: Option<u64>,
    pub username: Option<String>,
    pub user_type: UserType,
    pub gender: Gender,
    pub ip: Ipv4Addr,
    pub country_code: Option<CountryCode>,
    pub user_agent: String,
    pub browser_name: String,
    pub browser_version: String,
    pub os_name: String,
    pub os_version: String,
    pub device_type: DeviceType,
    pub language: Option<String>,
    pub referrer_url: Option<String>,
    pub referral_class: ReferralClass,
    pub search_engine: Option<String>,
    pub search_keywords: Option<String>,
    pub started_at: Timestamp,
    pub ended_at: Option<Timestamp>,
    pub end_reason: Option<EndReason>,
}

impl SessionRecord {
    /// A guest session with an unknown client profile; handy as a base for edits.
    pub fn guest(ip: Ipv4Addr, started_at: Timestamp) -> Self {
        let profile = ClientProfile::unknown();
        SessionRecord {
            opn_id: 0,
            user_id: None,
            username: None,
            user_type: UserType::Guest,
            gender: Gender::NotApplicable,
            ip,
            country_code: None,
            user_agent: String::new(),
            browser_name: profile.browser_name,
            browser_version: profile.browser_version,
            os_name: profile.os_name,
            os_version: profile.os_version,
            device_type: profile.device_type,
            language: None,
            referrer_url: None,
            referral_class: ReferralClass::Direct,
            search_engine: None,
            search_keywords: None,
            started_at,
            ended_at: None,
            end_reason: None,
        }
    }

    pub fn apply_profile(&mut self, profile: ClientProfile) {
        self.browser_name = profile.browser_name;
        self.browser_version = profile.browser_version;
        self.os_name = profile.os_name;
        self.os_version = profile.os_version;
        self.device_type = profile.device_type;
        self.language = profile.language;
    }

    pub fn is_guest(&self) -> bool {
        self.user_id.is_none()
    }

    pub fn validate(&self) -> Result<(), StorageError> {
        let fail = |msg: &str| Err(StorageError::Constraint(format!("log_session: {msg}")));
        if (self.user_type == UserType::Guest) != self.user_id.is_none() {
            return fail("user_type is guest exactly when user_id is absent");
        }
        if self.user_type.is_genderless() && self.gender != Gender::NotApplicable {
            return fail("guest and unit_mission sessions carry gender not_applicable");
        }
        if let Some(end) = self.ended_at {
            if end < self.started_at {
                return fail("ended_at precedes started_at");
            }
        }
        if self.ended_at.is_some() != self.end_reason.is_some() {
            return fail("ended_at and end_reason must be set together");
        }
        Ok(())
    }
}

/// One request inside a session.
#[derive(Debug, Clone, PartialEq)]
pub struct PageRecord {
    /// Assigned by the store on insert; the value passed in is ignored.
    pub log_details_id: u64,
    pub log_opn_id: u64,
    pub log_uid: Option<u64>,
    pub log_username: Option<String>,
    pub log_datetime: Timestamp,
    pub log_date: NaiveDate,
    pub log_server: u16,
    pub log_app_service: String,
    pub log_module: String,
    pub log_url: String,
    /// Set when `log_url` did not parse as an absolute URL; the raw text is kept.
    pub log_url_malformed: bool,
    pub log_title: String,
    pub log_web_message: String,
    pub log_subtitle: String,
    pub log_cookie_serialize: String,
    pub log_session_serialize: String,
    pub log_post_serialize: String,
    pub log_get_serialize: String,
    /// Seconds.
    pub log_page_load_time: f64,
    pub log_error: Option<String>,
}

impl PageRecord {
    pub fn validate(&self) -> Result<(), StorageError> {
        let fail = |msg: &str| Err(StorageError::Constraint(format!("log_page: {msg}")));
        if self.log_date != self.log_datetime.date() {
            return fail("log_date differs from the date of log_datetime");
        }
        if !self.log_page_load_time.is_finite() || self.log_page_load_time < 0.0 {
            return fail("log_page_load_time must be a non-negative number");
        }
        Ok(())
    }
}

/// End-of-request application data written back onto a page row.
#[derive(Debug, Clone, PartialEq)]
pub struct AppPageResult {
    pub page_title: String,
    pub web_message: String,
    pub subtitle: String,
    pub page_load_time: f64,
    pub error_text: Option<String>,
}

impl AppPageResult {
    pub fn validate(&self) -> Result<(), StorageError> {
        if !self.page_load_time.is_finite() || self.page_load_time < 0.0 {
            return Err(StorageError::Constraint("page_load_time must be >= 0".into()));
        }
        Ok(())
    }
}

/// Parses a decimal seconds value written with either `.` or `,` as the
/// decimal separator (`0,0266` and `0.0266` are the same value).
pub fn parse_decimal_seconds(text: &str) -> Result<f64, StorageError> {
    let normalized = text.trim().replace(',', ".");
    let value: f64 =
        normalized.parse().map_err(|_| StorageError::Constraint(format!("`{text}` is not a decimal number")))?;
    if !value.is_finite() || value < 0.0 {
        return Err(StorageError::Constraint(format!("`{text}` is not a non-negative duration")));
    }
    Ok(value)
}
