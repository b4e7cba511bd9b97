//! Server-side web usage collection and analysis.
//!
//! The [`collector`] is the logging API a web application calls at the start
//! and end of every request. It resolves the visitor's session, enriches new
//! sessions with client profile, country and referral channel, and writes
//! `log_session` / `log_page` rows into the [`storage`] layer. [`analytics`]
//! turns the store into usage reports. [`baseline`] is the classic
//! access-log preprocessing pipeline (parse, filter, identify users,
//! sessionize, complete paths) kept for comparison, and [`simulator`] produces
//! labelled synthetic traffic for both.

pub mod analytics;
pub mod baseline;
pub mod collector;
pub mod enrichment;
pub mod model;
pub mod simulator;
pub mod storage;

pub use collector::{CollectError, Collector, CollectorConfig, RawRequestEvent};
pub use model::{DeviceType, EndReason, Gender, ReferralClass, Timestamp, UserType};
pub use storage::LogStore;
