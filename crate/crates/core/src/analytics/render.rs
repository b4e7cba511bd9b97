//! CSV and `category<TAB>value` renderings. Column order is fixed.

use std::fmt::Write as _;

use super::*;

pub trait Report {
    fn csv_header(&self) -> Vec<&'static str>;
    fn csv_rows(&self) -> Vec<Vec<String>>;
    /// (category, value) pairs for the plot-data format.
    fn plot_points(&self) -> Vec<(String, String)>;

    fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.csv_header()).expect("in-memory write");
        for row in self.csv_rows() {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    fn to_plot(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.plot_points() {
            // Tabs and newlines inside a category would break the line format.
            let k = k.replace(['\t', '\n', '\r'], " ");
            let _ = writeln!(s, "{k}\t{v}");
        }
        s
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

const VISITOR: [&str; 2] = ["guest", "user"];

impl Report for UsageBucketReport {
    fn csv_header(&self) -> Vec<&'static str> {
        vec!["visitor_type", "pageviews", "frequency"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for (v, freqs) in self.frequencies.iter().enumerate() {
            for (b, f) in freqs.iter().enumerate() {
                rows.push(vec![VISITOR[v].to_string(), BUCKETS[b].2.to_string(), f.to_string()]);
            }
        }
        rows
    }

    fn plot_points(&self) -> Vec<(String, String)> {
        self.csv_rows().into_iter().map(|r| (format!("{} {}", r[0], r[1]), r[2].clone())).collect()
    }
}

fn utg_row(r: &UserTypeGenderRow) -> Vec<String> {
    vec![
        r.user_type.map(|t| t.to_string()).unwrap_or_else(|| "total".into()),
        r.gender.map(|g| g.to_string()).unwrap_or_default(),
        r.users.to_string(),
        r.sessions.to_string(),
        r.pageviews.to_string(),
        opt(r.pageviews_per_session()),
        opt(r.duration_secs),
        opt(r.duration_minutes()),
        opt(r.duration_tenth_hours().map(format_tenths)),
    ]
}

impl Report for UserTypeGenderReport {
    fn csv_header(&self) -> Vec<&'static str> {
        vec![
            "user_type",
            "gender",
            "users",
            "sessions",
            "pageviews",
            "pageviews_per_session",
            "duration_s",
            "duration_m",
            "duration_h",
        ]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows.iter().chain(std::iter::once(&self.total)).map(utg_row).collect()
    }

    fn plot_points(&self) -> Vec<(String, String)> {
        self.rows.iter().map(utg_row).map(|r| (format!("{} {}", r[0], r[1]), r[4].clone())).collect()
    }
}

impl Report for HourlyCube {
    fn csv_header(&self) -> Vec<&'static str> {
        let mut h = vec!["hour"];
        h.extend(UserType::ALL.iter().map(|t| t.as_str()));
        h
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .enumerate()
            .map(|(hour, row)| std::iter::once(hour.to_string()).chain(row.iter().map(u64::to_string)).collect())
            .collect()
    }

    fn plot_points(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (hour, row) in self.cells.iter().enumerate() {
            for (t, n) in UserType::ALL.iter().zip(row) {
                out.push((format!("{hour:02} {t}"), n.to_string()));
            }
        }
        out
    }
}

impl Report for DistributionReport {
    fn csv_header(&self) -> Vec<&'static str> {
        vec![self.kind.as_str(), "sessions", "ratio"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows.iter().map(|r| vec![r.category.clone(), r.sessions.to_string(), format!("{:.6}", r.ratio)]).collect()
    }

    fn plot_points(&self) -> Vec<(String, String)> {
        self.rows.iter().map(|r| (r.category.clone(), format!("{:.6}", r.ratio))).collect()
    }
}

impl Report for TopIpReport {
    fn csv_header(&self) -> Vec<&'static str> {
        vec!["ip", "sessions", "pageviews", "pageviews_per_session"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.ip.to_string(),
                    r.sessions.to_string(),
                    r.pageviews.to_string(),
                    r.pageviews_per_session().to_string(),
                ]
            })
            .collect()
    }

    fn plot_points(&self) -> Vec<(String, String)> {
        self.rows.iter().map(|r| (r.ip.to_string(), r.sessions.to_string())).collect()
    }
}

impl Report for SearchReport {
    fn csv_header(&self) -> Vec<&'static str> {
        vec!["section", "name", "sessions"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        let engines = self.engines.iter().map(|(n, c)| vec!["engine".into(), n.clone(), c.to_string()]);
        let keywords = self.keywords.iter().map(|(n, c)| vec!["keyword".into(), n.clone(), c.to_string()]);
        engines.chain(keywords).collect()
    }

    fn plot_points(&self) -> Vec<(String, String)> {
        self.csv_rows().into_iter().map(|r| (format!("{} {}", r[0], r[1]), r[2].clone())).collect()
    }
}

impl Report for TopUsersReport {
    fn csv_header(&self) -> Vec<&'static str> {
        vec!["username", "user_id", "pageviews", "sessions"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| vec![r.username.clone(), r.user_id.to_string(), r.pageviews.to_string(), r.sessions.to_string()])
            .collect()
    }

    fn plot_points(&self) -> Vec<(String, String)> {
        self.rows.iter().map(|r| (r.username.clone(), r.pageviews.to_string())).collect()
    }
}
