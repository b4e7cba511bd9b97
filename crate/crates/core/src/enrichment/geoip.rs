//! Country lookup over sorted, non-overlapping IPv4 ranges.

use std::fmt;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::str::FromStr;
use std::sync::OnceLock;

const BUILTIN_TABLE: &str = include_str!("../../data/geoip_sample.csv");

/// Two-letter upper-case country code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    pub fn as_str(&self) -> &str {
        // Constructed only from ASCII letters.
        std::str::from_utf8(&self.0).expect("ascii")
    }
}

impl FromStr for CountryCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.as_bytes() {
            [a, b] if a.is_ascii_alphabetic() && b.is_ascii_alphabetic() => {
                Ok(CountryCode([a.to_ascii_uppercase(), b.to_ascii_uppercase()]))
            }
            _ => Err(format!("`{s}` is not a two-letter country code")),
        }
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeoIpRange {
    pub start_ip: u32,
    pub end_ip: u32,
    pub country_code: CountryCode,
}

impl GeoIpRange {
    pub fn contains(&self, ip: u32) -> bool {
        self.start_ip <= ip && ip <= self.end_ip
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GeoIpError {
    #[error("geoip line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("geoip line {line}: start {start} exceeds end {end}")]
    Inverted { line: u64, start: u32, end: u32 },
    #[error("geoip line {line}: range overlaps the range from line {other_line}")]
    Overlap { line: u64, other_line: u64 },
    #[error("geoip io: {0}")]
    Io(#[from] std::io::Error),
}

/// Immutable once loaded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GeoIpTable {
    ranges: Vec<GeoIpRange>,
}

impl GeoIpTable {
    /// Illustrative table bundled with the crate (a few national blocks).
    pub fn builtin() -> &'static GeoIpTable {
        static BUILTIN: OnceLock<GeoIpTable> = OnceLock::new();
        BUILTIN.get_or_init(|| GeoIpTable::load(BUILTIN_TABLE.as_bytes()).expect("bundled geoip table is valid"))
    }

    /// Reads header-less `start_ip,end_ip,country_code` rows. Rows may arrive
    /// in any order; they are sorted and then checked for overlap.
    pub fn load<R: Read>(source: R) -> Result<Self, GeoIpError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(source);
        let mut rows: Vec<(u64, GeoIpRange)> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                match e.into_kind() {
                    csv::ErrorKind::Io(io) => GeoIpError::Io(io),
                    other => GeoIpError::Malformed { line, message: format!("{other:?}") },
                }
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let malformed = |message: String| GeoIpError::Malformed { line, message };
            if record.len() != 3 {
                return Err(malformed(format!("expected 3 columns, found {}", record.len())));
            }
            let start: u32 = record[0].parse().map_err(|_| malformed(format!("bad start_ip `{}`", &record[0])))?;
            let end: u32 = record[1].parse().map_err(|_| malformed(format!("bad end_ip `{}`", &record[1])))?;
            let country_code: CountryCode = record[2].parse().map_err(malformed)?;
            if start > end {
                return Err(GeoIpError::Inverted { line, start, end });
            }
            rows.push((line, GeoIpRange { start_ip: start, end_ip: end, country_code }));
        }
        rows.sort_by_key(|(line, r)| (r.start_ip, *line));
        for pair in rows.windows(2) {
            let (prev_line, prev) = pair[0];
            let (line, next) = pair[1];
            if next.start_ip <= prev.end_ip {
                let (line, other_line) = if line > prev_line { (line, prev_line) } else { (prev_line, line) };
                return Err(GeoIpError::Overlap { line, other_line });
            }
        }
        Ok(GeoIpTable { ranges: rows.into_iter().map(|(_, r)| r).collect() })
    }

    pub fn from_ranges(ranges: Vec<GeoIpRange>) -> Result<Self, GeoIpError> {
        let mut buf = Vec::new();
        write_ranges(&ranges, &mut buf)?;
        Self::load(buf.as_slice())
    }

    pub fn ranges(&self) -> &[GeoIpRange] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Binary search for the range containing `ip`; bounds are inclusive.
    pub fn lookup(&self, ip: u32) -> Option<CountryCode> {
        let idx = self.ranges.partition_point(|r| r.start_ip <= ip);
        let candidate = self.ranges.get(idx.checked_sub(1)?)?;
        candidate.contains(ip).then_some(candidate.country_code)
    }

    pub fn lookup_country(&self, ip: Ipv4Addr) -> Option<CountryCode> {
        self.lookup(u32::from(ip))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_ranges(&self.ranges, out)
    }
}

fn write_ranges<W: Write>(ranges: &[GeoIpRange], mut out: W) -> std::io::Result<()> {
    for r in ranges {
        writeln!(out, "{},{},{}", r.start_ip, r.end_ip, r.country_code)?;
    }
    out.flush()
}
