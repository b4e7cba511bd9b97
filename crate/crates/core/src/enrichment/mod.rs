//! Client profile and location derived from request data at session start.

pub mod geoip;
pub mod useragent;

pub use geoip::{CountryCode, GeoIpError, GeoIpRange, GeoIpTable};
pub use useragent::{parse_user_agent, primary_language, ClientProfile, RuleFileError, UaRegistry};
