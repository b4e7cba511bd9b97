use std::fmt;

use chrono::{NaiveDate, NaiveDateTime};

use crate::model::{DeviceType, UserType};

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub seed: u64,
    pub n_users: usize,
    pub user_type_mix: Vec<(UserType, f64)>,
    /// Weights over desktop, mobile and tablet.
    pub device_mix: Vec<(DeviceType, f64)>,
    /// Mean sessions per registered user (at least 1). Guests visit once.
    pub session_rate: f64,
    pub pageviews_per_session_mean: f64,
    pub max_pageviews: u64,
    pub timeout_secs: i64,
    /// Users placed behind a small pool of shared addresses.
    pub nat_share: f64,
    /// Users whose address changes once inside each multi-page session.
    pub dynamic_ip_share: f64,
    /// Access-log requests that lose the session cookie field.
    pub cookie_loss_share: f64,
    /// Back-button navigations served from the browser cache, hence absent
    /// from the access log.
    pub cached_nav_share: f64,
    /// Probability that a navigation is a back-button step.
    pub back_nav_share: f64,
    /// Logged-in sessions that end with an explicit logout.
    pub logout_share: f64,
    /// First session starts fall uniformly in this span.
    pub duration_secs: i64,
    pub gap_mean_secs: f64,
    /// Upper bound on gaps between pages of one session; below the timeout.
    pub max_gap_secs: i64,
    pub start: NaiveDateTime,
    /// Server zone offset written into access-log timestamps.
    pub utc_offset_secs: i32,
    pub site_host: String,
    pub noise: NoiseConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Mean static-resource requests after each logged page.
    pub static_per_page: f64,
    /// Crawler lines per logged page.
    pub bot_share: f64,
    /// Failed (404) requests per logged page.
    pub error_share: f64,
}

impl NoiseConfig {
    pub const NONE: NoiseConfig = NoiseConfig { static_per_page: 0.0, bot_share: 0.0, error_share: 0.0 };
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { static_per_page: 1.0, bot_share: 0.05, error_share: 0.02 }
    }
}

pub fn default_user_type_mix() -> Vec<(UserType, f64)> {
    vec![
        (UserType::Guest, 0.25),
        (UserType::AcademicStaff, 0.08),
        (UserType::AdministrativeStaff, 0.05),
        (UserType::ContractedStaff, 0.02),
        (UserType::RetiredStaff, 0.01),
        (UserType::LecturerNonsigned, 0.02),
        (UserType::Student, 0.55),
        (UserType::Graduate, 0.015),
        (UserType::UnitMission, 0.005),
    ]
}

pub fn default_device_mix() -> Vec<(DeviceType, f64)> {
    vec![(DeviceType::Desktop, 0.6), (DeviceType::Mobile, 0.35), (DeviceType::Tablet, 0.05)]
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            seed: 42,
            n_users: 200,
            user_type_mix: default_user_type_mix(),
            device_mix: default_device_mix(),
            session_rate: 5.0,
            pageviews_per_session_mean: 7.31,
            max_pageviews: 300,
            timeout_secs: 1800,
            nat_share: 0.0,
            dynamic_ip_share: 0.0,
            cookie_loss_share: 0.0,
            cached_nav_share: 0.0,
            back_nav_share: 0.15,
            logout_share: 0.3,
            duration_secs: 7 * 86_400,
            gap_mean_secs: 60.0,
            max_gap_secs: 540,
            start: NaiveDate::from_ymd_opt(2018, 3, 16).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            utc_offset_secs: 3 * 3600,
            site_host: "www.server.com".into(),
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    /// (field name, problem) pairs.
    pub problems: Vec<(&'static str, String)>,
}

impl ConfigError {
    pub fn fields(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.problems.iter().map(|(f, _)| *f)
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("invalid workload config:")?;
        for (field, msg) in &self.problems {
            write!(f, " {field}: {msg};")?;
        }
        Ok(())
    }
}

const WEIGHT_TOLERANCE: f64 = 1e-6;

fn check_weights<K>(problems: &mut Vec<(&'static str, String)>, field: &'static str, mix: &[(K, f64)]) {
    if mix.is_empty() {
        problems.push((field, "needs at least one entry".into()));
        return;
    }
    if mix.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
        problems.push((field, "weights must be finite and non-negative".into()));
        return;
    }
    let sum: f64 = mix.iter().map(|(_, w)| w).sum();
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        problems.push((field, format!("weights sum to {sum}, expected 1")));
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut p: Vec<(&'static str, String)> = Vec::new();
        for (field, v) in [
            ("nat_share", self.nat_share),
            ("dynamic_ip_share", self.dynamic_ip_share),
            ("cookie_loss_share", self.cookie_loss_share),
            ("cached_nav_share", self.cached_nav_share),
            ("back_nav_share", self.back_nav_share),
            ("logout_share", self.logout_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                p.push((field, format!("{v} is outside [0, 1]")));
            }
        }
        check_weights(&mut p, "user_type_mix", &self.user_type_mix);
        check_weights(&mut p, "device_mix", &self.device_mix);
        if self
            .device_mix
            .iter()
            .any(|(d, _)| !matches!(d, DeviceType::Desktop | DeviceType::Mobile | DeviceType::Tablet))
        {
            p.push(("device_mix", "only desktop, mobile and tablet can be simulated".into()));
        }
        if self.n_users == 0 {
            p.push(("n_users", "must be at least 1".into()));
        }
        if !(self.session_rate.is_finite() && self.session_rate >= 1.0) {
            p.push(("session_rate", "must be at least 1".into()));
        }
        if !(self.pageviews_per_session_mean.is_finite() && self.pageviews_per_session_mean >= 1.0) {
            p.push(("pageviews_per_session_mean", "must be at least 1".into()));
        }
        if self.max_pageviews == 0 {
            p.push(("max_pageviews", "must be at least 1".into()));
        }
        if self.timeout_secs <= 0 {
            p.push(("timeout_secs", "must be positive".into()));
        }
        if self.duration_secs <= 0 {
            p.push(("duration_secs", "must be positive".into()));
        }
        if !(self.gap_mean_secs.is_finite() && self.gap_mean_secs > 0.0) {
            p.push(("gap_mean_secs", "must be positive".into()));
        }
        if self.max_gap_secs < 1 || self.max_gap_secs >= self.timeout_secs {
            p.push(("max_gap_secs", format!("must be in [1, timeout_secs) = [1, {})", self.timeout_secs)));
        }
        if self.utc_offset_secs.abs() >= 86_400 {
            p.push(("utc_offset_secs", "must be less than a day".into()));
        }
        if self.site_host.is_empty() {
            p.push(("site_host", "must not be empty".into()));
        }
        let n = self.noise;
        for (field, v) in
            [("static_per_page", n.static_per_page), ("bot_share", n.bot_share), ("error_share", n.error_share)]
        {
            if !(v.is_finite() && v >= 0.0) {
                p.push((field, "must be finite and non-negative".into()));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems: p })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        WorkloadConfig::default().validate().unwrap();
    }

    #[test]
    fn every_bad_field_is_listed() {
        let cfg = WorkloadConfig {
            nat_share: 1.5,
            cookie_loss_share: -0.1,
            device_mix: vec![(DeviceType::Desktop, 0.5)],
            max_gap_secs: 1800,
            ..WorkloadConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        let fields: Vec<_> = err.fields().collect();
        assert_eq!(fields, vec!["nat_share", "cookie_loss_share", "device_mix", "max_gap_secs"]);
        assert!(err.to_string().contains("nat_share: 1.5 is outside [0, 1]"));
    }
}
