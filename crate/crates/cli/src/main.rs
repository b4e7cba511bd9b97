//! `sessionlog`: simulate traffic, collect it, preprocess access logs,
//! report on a store and compare both pipelines against ground truth.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sessionlog::analytics::{Analytics, DistributionKind, Report};
use sessionlog::baseline::{
    self, filter::parse_extension_list, open_log, score_against_truth, LogFormat, PipelineConfig, SiteGraph, SplitMode,
    Thresholds, UserKeyStrategy,
};
use sessionlog::collector::{read_replay, SiteHosts};
use sessionlog::enrichment::GeoIpTable;
use sessionlog::simulator::{self, label_baseline, label_collector, GroundTruth, NoiseConfig, WorkloadConfig};
use sessionlog::{Collector, CollectorConfig, LogStore};

pub const REPLAY_FILE: &str = "replay.txt";
pub const ACCESS_LOG_FILE: &str = "access.log";
pub const TRUTH_FILE: &str = "truth.csv";

#[derive(Parser, Debug)]
#[command(name = "sessionlog", version, about = "Server-side session logging and access-log comparison")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labelled workload: replay stream, access log and truth.
    Simulate(SimulateArgs),
    /// Feed a replay stream through the collector into a store directory.
    Collect(CollectArgs),
    /// Run the access-log preprocessing pipeline and write sessions CSV.
    Preprocess(PreprocessArgs),
    /// Compute a usage report from a store directory.
    Report(ReportArgs),
    /// Score collector and baseline sessions against ground truth.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Output directory; replay.txt, access.log and truth.csv are written there.
    #[arg(long)]
    out: PathBuf,
    /// RNG seed; equal seeds give identical artifacts.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Population size, guests included.
    #[arg(long, default_value_t = 200)]
    users: usize,
    /// Mean sessions per registered user.
    #[arg(long, default_value_t = 5.0)]
    session_rate: f64,
    /// Mean pages per session.
    #[arg(long, default_value_t = 7.31)]
    pageviews_mean: f64,
    /// Session timeout in seconds.
    #[arg(long, default_value_t = 1800)]
    timeout: i64,
    /// Share of users behind a shared NAT address.
    #[arg(long, default_value_t = 0.0)]
    nat_share: f64,
    /// Share of users whose address changes mid-session.
    #[arg(long, default_value_t = 0.0)]
    dynamic_ip_share: f64,
    /// Share of page lines in the access log written without the session cookie.
    #[arg(long, default_value_t = 0.0)]
    cookie_loss_share: f64,
    /// Share of back navigations served from the browser cache.
    #[arg(long, default_value_t = 0.0)]
    cached_nav_share: f64,
    /// Span over which first visits start, in days.
    #[arg(long, default_value_t = 7)]
    days: i64,
    /// Leave static, crawler and failed requests out of the access log.
    #[arg(long)]
    no_noise: bool,
}

#[derive(Args, Debug)]
struct CollectArgs {
    /// Replay file to ingest.
    #[arg(long)]
    replay: PathBuf,
    /// Store directory (CSV tables); replaced on every run.
    #[arg(long)]
    store: PathBuf,
    /// Session timeout in seconds.
    #[arg(long, default_value_t = 1800)]
    timeout: i64,
    /// Host names of the site itself, for referral classification.
    #[arg(long = "site-host", default_value = "www.server.com")]
    site_hosts: Vec<String>,
    /// GeoIP range table (`start,end,country` with integer addresses);
    /// the bundled sample when omitted.
    #[arg(long)]
    geoip: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Auto,
    Clf,
    Eclf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    PageGap,
    SessionDuration,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum UserKeyArg {
    IpAgent,
    Cookie,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Access log, plain or gzip.
    #[arg(long)]
    log: PathBuf,
    /// Sessions CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Log line layout; auto decides per line.
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    /// Which threshold ends a session.
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    /// Largest gap between consecutive pages of a session, seconds.
    #[arg(long, default_value_t = 600)]
    page_gap: i64,
    /// Longest session, seconds.
    #[arg(long, default_value_t = 1800)]
    session_gap: i64,
    /// Also cut sessions at midnight.
    #[arg(long)]
    split_at_midnight: bool,
    /// Keep sessions as logged instead of inferring cached back-navigation.
    #[arg(long)]
    no_path_completion: bool,
    /// How log lines are grouped into users.
    #[arg(long, value_enum, default_value_t = UserKeyArg::IpAgent)]
    user_key: UserKeyArg,
    /// Cookie carrying the visitor id when --user-key cookie.
    #[arg(long, default_value = "sid")]
    cookie_name: String,
    /// Host names of the site itself; on-site referrers drive path completion.
    #[arg(long = "site-host", default_value = "www.server.com")]
    site_hosts: Vec<String>,
    /// File of static extensions, one per line, replacing the built-in list.
    #[arg(long)]
    static_extensions: Option<PathBuf>,
    /// Tab-separated `from to` page links used to vet path completion.
    #[arg(long)]
    site_graph: Option<PathBuf>,
    /// Threads for the per-user stages; output does not depend on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportKind {
    UsageBuckets,
    UserTypeGender,
    HourlyCube,
    Distribution,
    TopIps,
    Search,
    TopUsers,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DistributionArg {
    Device,
    Os,
    Browser,
    Country,
    Language,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutputFormat {
    Csv,
    Plot,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Store directory written by `collect`.
    #[arg(long)]
    store: PathBuf,
    #[arg(long, value_enum)]
    kind: ReportKind,
    /// Category for --kind distribution.
    #[arg(long, value_enum, default_value_t = DistributionArg::Device)]
    by: DistributionArg,
    /// Row limit for top-ips and top-users.
    #[arg(long, default_value_t = 15)]
    n: usize,
    /// csv, or `category<TAB>value` lines for plotting.
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Store directory written by `collect`.
    #[arg(long)]
    store: PathBuf,
    /// Sessions CSV written by `preprocess`.
    #[arg(long)]
    sessions: PathBuf,
    /// Ground-truth CSV written by `simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

type CliResult = Result<(), CliError>;

fn runtime<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} `{}` is not a readable file", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} `{}` is not a directory", path.display())))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(runtime(&format!("cannot create {}", path.display())))
}

fn write_output(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, text).map_err(runtime(&format!("cannot write {}", p.display()))),
        None => io::stdout().write_all(text.as_bytes()).map_err(runtime("stdout")),
    }
}

fn cmd_simulate(a: SimulateArgs) -> CliResult {
    let cfg = WorkloadConfig {
        seed: a.seed,
        n_users: a.users,
        session_rate: a.session_rate,
        pageviews_per_session_mean: a.pageviews_mean,
        timeout_secs: a.timeout,
        nat_share: a.nat_share,
        dynamic_ip_share: a.dynamic_ip_share,
        cookie_loss_share: a.cookie_loss_share,
        cached_nav_share: a.cached_nav_share,
        duration_secs: a.days.saturating_mul(86_400),
        max_gap_secs: WorkloadConfig::default().max_gap_secs.min(a.timeout - 1),
        noise: if a.no_noise { NoiseConfig::NONE } else { NoiseConfig::default() },
        ..WorkloadConfig::default()
    };
    let workload = simulator::generate(&cfg).map_err(|e| {
        let flags: Vec<String> = e.fields().map(flag_for_field).collect();
        CliError::Usage(format!("{e} (check --{})", flags.join(", --")))
    })?;
    fs::create_dir_all(&a.out).map_err(runtime(&format!("cannot create {}", a.out.display())))?;
    let mut replay = create(&a.out.join(REPLAY_FILE))?;
    workload.write_replay(&mut replay).and_then(|_| replay.flush()).map_err(runtime("replay"))?;
    let mut log = create(&a.out.join(ACCESS_LOG_FILE))?;
    workload.write_eclf(&mut log).map_err(runtime("access log"))?;
    let truth = workload.truth();
    let mut tf = create(&a.out.join(TRUTH_FILE))?;
    truth.write_csv(&mut tf).map_err(runtime("truth"))?;
    println!(
        "users={} sessions={} events={} logged={}",
        workload.users.len(),
        truth.session_count(),
        truth.events.len(),
        truth.events.iter().filter(|e| !e.cached).count()
    );
    Ok(())
}

/// Workload field name to the flag that sets it.
fn flag_for_field(field: &str) -> String {
    match field {
        "n_users" => "users".into(),
        "pageviews_per_session_mean" => "pageviews-mean".into(),
        "timeout_secs" | "max_gap_secs" => "timeout".into(),
        "duration_secs" => "days".into(),
        other => other.replace('_', "-"),
    }
}

fn cmd_collect(a: CollectArgs) -> CliResult {
    require_file(&a.replay, "replay file")?;
    if a.timeout <= 0 {
        return Err(CliError::Usage("--timeout must be positive".into()));
    }
    let reader = BufReader::new(File::open(&a.replay).map_err(runtime("replay"))?);
    let mut records = read_replay(reader).map_err(runtime("replay"))?;
    // Directory rows first, then requests and logouts by time; ties keep file order.
    records.sort_by_key(|r| r.timestamp());
    let geoip = match &a.geoip {
        Some(p) => {
            require_file(p, "geoip table")?;
            let f = File::open(p).map_err(runtime("geoip table"))?;
            GeoIpTable::load(BufReader::new(f)).map_err(|e| CliError::Usage(format!("geoip table: {e}")))?
        }
        None => GeoIpTable::builtin().clone(),
    };
    let store = Arc::new(LogStore::new());
    store.set_geoip(Arc::new(geoip));
    let collector = Collector::new(
        Arc::clone(&store),
        CollectorConfig { timeout_secs: a.timeout, site_hosts: SiteHosts::new(&a.site_hosts) },
    );
    let end = records.iter().filter_map(|r| r.timestamp()).max();
    collector.replay(records).map_err(runtime("collect"))?;
    // Close what a periodic sweeper would have closed by the end of the stream.
    if let Some(end) = end {
        collector.sweep_expired(end, a.timeout);
    }
    fs::create_dir_all(&a.store).map_err(runtime(&format!("cannot create {}", a.store.display())))?;
    store.export_dir(&a.store).map_err(runtime("store export"))?;
    let stats = store.read().stats();
    println!("sessions={} pageviews={}", stats.sessions, stats.pages);
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> CliResult {
    require_file(&a.log, "access log")?;
    if a.page_gap <= 0 || a.session_gap <= 0 {
        return Err(CliError::Usage("--page-gap and --session-gap must be positive".into()));
    }
    let mut config = PipelineConfig {
        format: match a.format {
            FormatArg::Auto => LogFormat::Auto,
            FormatArg::Clf => LogFormat::Clf,
            FormatArg::Eclf => LogFormat::Eclf,
        },
        user_keys: match a.user_key {
            UserKeyArg::IpAgent => UserKeyStrategy::IpAgent,
            UserKeyArg::Cookie => UserKeyStrategy::Cookie(a.cookie_name.clone()),
        },
        thresholds: Thresholds {
            page_gap_secs: a.page_gap,
            session_gap_secs: a.session_gap,
            mode: match a.mode {
                ModeArg::PageGap => SplitMode::PageGap,
                ModeArg::SessionDuration => SplitMode::SessionDuration,
                ModeArg::Both => SplitMode::Both,
            },
            split_at_midnight: a.split_at_midnight,
        },
        site_hosts: SiteHosts::new(&a.site_hosts),
        complete_paths: !a.no_path_completion,
        workers: a.workers.max(1),
        ..PipelineConfig::default()
    };
    if let Some(p) = &a.static_extensions {
        require_file(p, "static extension list")?;
        let text = fs::read_to_string(p).map_err(runtime("static extension list"))?;
        config.filter.static_extensions = parse_extension_list(&text);
    }
    if let Some(p) = &a.site_graph {
        require_file(p, "site graph")?;
        let text = fs::read_to_string(p).map_err(runtime("site graph"))?;
        config.site_graph = Some(SiteGraph::parse(&text).map_err(CliError::Usage)?);
    }

    let input = open_log(&a.log).map_err(runtime("access log"))?;
    let out = baseline::run_pipeline(input, &config).map_err(runtime("access log"))?;
    let mut w = create(&a.out)?;
    baseline::write_sessions_csv(&mut w, &out.sessions).map_err(runtime("sessions csv"))?;
    w.flush().map_err(runtime("sessions csv"))?;
    for (line, msg) in &out.error_samples {
        eprintln!("sessionlog: skipped line {line}: {msg}");
    }
    let f = out.filter;
    println!(
        "lines={} parse_errors={} kept={} dropped_status={} dropped_static={} dropped_bot={} users={} sessions={} inferred={} incomplete={}",
        out.lines,
        out.parse_errors,
        f.kept,
        f.dropped_status,
        f.dropped_static,
        f.dropped_bot,
        out.users,
        out.sessions.len(),
        out.paths.inferred,
        out.paths.incomplete
    );
    Ok(())
}

fn load_store(dir: &Path) -> Result<LogStore, CliError> {
    require_dir(dir, "store")?;
    LogStore::import_dir(dir).map_err(|e| CliError::Usage(format!("store {}: {e}", dir.display())))
}

fn cmd_report(a: ReportArgs) -> CliResult {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let store = load_store(&a.store)?;
    let reader = store.read();
    let analytics = Analytics::from_reader(&reader);
    let report: Box<dyn Report> = match a.kind {
        ReportKind::UsageBuckets => Box::new(analytics.usage_buckets()),
        ReportKind::UserTypeGender => Box::new(analytics.user_type_gender_report()),
        ReportKind::HourlyCube => Box::new(analytics.hourly_cube()),
        ReportKind::Distribution => Box::new(analytics.distribution(match a.by {
            DistributionArg::Device => DistributionKind::Device,
            DistributionArg::Os => DistributionKind::Os,
            DistributionArg::Browser => DistributionKind::Browser,
            DistributionArg::Country => DistributionKind::Country,
            DistributionArg::Language => DistributionKind::Language,
        })),
        ReportKind::TopIps => Box::new(analytics.top_ips(a.n).map_err(|e| CliError::Usage(e.to_string()))?),
        ReportKind::Search => Box::new(analytics.search_report()),
        ReportKind::TopUsers => Box::new(analytics.top_users(a.n).map_err(|e| CliError::Usage(e.to_string()))?),
    };
    let text = match a.format {
        OutputFormat::Csv => report.to_csv(),
        OutputFormat::Plot => report.to_plot(),
    };
    write_output(a.out.as_deref(), &text)
}

fn cmd_compare(a: CompareArgs) -> CliResult {
    require_file(&a.sessions, "sessions csv")?;
    require_file(&a.truth, "truth csv")?;
    let store = load_store(&a.store)?;
    let truth = GroundTruth::read_csv(File::open(&a.truth).map_err(runtime("truth"))?)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let rows = baseline::read_sessions_csv(File::open(&a.sessions).map_err(runtime("sessions csv"))?)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let mismatch = |e: &dyn std::fmt::Display| CliError::Usage(format!("inputs do not describe the same stream: {e}"));
    let reader = store.read();
    let collector = label_collector(reader.pages(), &truth).map_err(|e| mismatch(&e))?;
    let collector = score_against_truth(&collector, &truth.labels()).map_err(|e| mismatch(&e))?;
    let baseline = label_baseline(&rows, &truth).map_err(|e| mismatch(&e))?;
    let baseline = score_against_truth(&baseline, &truth.logged_labels()).map_err(|e| mismatch(&e))?;

    let mut text = collector.render("collector.");
    text.push_str(&baseline.render("baseline."));
    text.push_str(&format!(
        "gap.exact_session_match_rate: {:.6}\n",
        collector.exact_session_match_rate - baseline.exact_session_match_rate
    ));
    write_output(a.out.as_deref(), &text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Collect(a) => cmd_collect(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Report(a) => cmd_report(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(msg) | CliError::Runtime(msg)) = &e;
            eprintln!("sessionlog: error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
