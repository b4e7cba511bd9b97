//! Domain vocabulary shared by every layer: user classes, device classes,
//! referral channels and the timestamp convention.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;

/// Server wall-clock instant with one-second precision.
///
/// The collector runs inside the application tier and records the server's
/// local time, so no zone is carried. Day and hour extraction in the reports
/// work directly off this value.
pub type Timestamp = NaiveDateTime;

/// Ordered string map used for GET/POST parameters and cookies.
pub type ParamMap = BTreeMap<String, String>;

pub(crate) const STORE_TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.format(STORE_TIME_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Result<Timestamp, chrono::ParseError> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, STORE_TIME_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} `{value}`")]
pub struct UnknownVariant {
    pub kind: &'static str,
    pub value: String,
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownVariant;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(UnknownVariant { kind: $kind, value: s.to_string() }),
                }
            }
        }
    };
}

string_enum! {
    /// Visitor classes of the host application's user directory, in report order.
    UserType, "user type" {
        Guest => "guest",
        AcademicStaff => "academic_staff",
        AdministrativeStaff => "administrative_staff",
        ContractedStaff => "contracted_staff",
        RetiredStaff => "retired_staff",
        LecturerNonsigned => "lecturer_nonsigned",
        Student => "student",
        Graduate => "graduate",
        UnitMission => "unit_mission",
    }
}

impl UserType {
    /// Guests and organisational accounts carry no gender.
    pub fn is_genderless(self) -> bool {
        matches!(self, UserType::Guest | UserType::UnitMission)
    }
}

string_enum! {
    Gender, "gender" {
        Male => "male",
        Female => "female",
        NotApplicable => "not_applicable",
    }
}

string_enum! {
    DeviceType, "device type" {
        Desktop => "desktop",
        Mobile => "mobile",
        Tablet => "tablet",
        Bot => "bot",
        Unknown => "unknown",
    }
}

string_enum! {
    EndReason, "end reason" {
        Logout => "logout",
        Timeout => "timeout",
    }
}

string_enum! {
    HttpMethod, "HTTP method" {
        Get => "GET",
        Post => "POST",
    }
}

/// Channel through which a session arrived.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ReferralClass {
    Direct,
    Internal,
    SearchEngine(String),
    /// Off-site referrer. `malformed` is set when the referrer did not parse as
    /// a URL, in which case `host` holds the raw referrer text.
    External {
        host: String,
        malformed: bool,
    },
}

impl ReferralClass {
    pub fn kind(&self) -> &'static str {
        match self {
            ReferralClass::Direct => "direct",
            ReferralClass::Internal => "internal",
            ReferralClass::SearchEngine(_) => "search_engine",
            ReferralClass::External { malformed: false, .. } => "external",
            ReferralClass::External { malformed: true, .. } => "external_malformed",
        }
    }

    /// Engine name or external host; empty for direct and internal.
    pub fn detail(&self) -> &str {
        match self {
            ReferralClass::Direct | ReferralClass::Internal => "",
            ReferralClass::SearchEngine(name) => name,
            ReferralClass::External { host, .. } => host,
        }
    }

    pub fn from_parts(kind: &str, detail: &str) -> Result<Self, UnknownVariant> {
        Ok(match kind {
            "direct" => ReferralClass::Direct,
            "internal" => ReferralClass::Internal,
            "search_engine" => ReferralClass::SearchEngine(detail.to_string()),
            "external" => ReferralClass::External { host: detail.to_string(), malformed: false },
            "external_malformed" => ReferralClass::External { host: detail.to_string(), malformed: true },
            _ => return Err(UnknownVariant { kind: "referral class", value: kind.to_string() }),
        })
    }
}

impl fmt::Display for ReferralClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferralClass::Direct | ReferralClass::Internal => f.write_str(self.kind()),
            _ => write!(f, "{}({})", self.kind(), self.detail()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enums_round_trip_through_text() {
        for t in UserType::ALL {
            assert_eq!(t.as_str().parse::<UserType>().unwrap(), *t);
        }
        for d in DeviceType::ALL {
            assert_eq!(d.as_str().parse::<DeviceType>().unwrap(), *d);
        }
        assert!("staff".parse::<UserType>().is_err());
    }

    #[test]
    fn referral_parts_round_trip() {
        let classes = [
            ReferralClass::Direct,
            ReferralClass::Internal,
            ReferralClass::SearchEngine("google".into()),
            ReferralClass::External { host: "example.org".into(), malformed: false },
            ReferralClass::External { host: "::junk".into(), malformed: true },
        ];
        for c in classes {
            assert_eq!(ReferralClass::from_parts(c.kind(), c.detail()).unwrap(), c);
        }
    }

    #[test]
    fn timestamps_accept_both_separators() {
        let a = parse_timestamp("2021-09-02 10:12:18").unwrap();
        let b = parse_timestamp("2021-09-02T10:12:18").unwrap();
        assert_eq!(a, b);
        assert_eq!(format_timestamp(&a), "2021-09-02 10:12:18");
    }
}
