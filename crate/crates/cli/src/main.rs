use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use nonce_audit_core::report::{HISTOGRAM_FILE, SUMMARY_FILE, load_run};
use nonce_audit_core::scan::configure_threads;
use nonce_audit_core::target::read_targets;
use nonce_audit_core::{
    CrawlBudget, HeaderCatalog, OutputDir, SchemePolicy, ScanConfig, SiteReport, SiteTarget, rank_histogram,
    scan_targets, summarize,
};
use nonce_audit_sim::{ScenarioFile, Simulator};

#[derive(Parser)]
#[command(name = "nonce-audit", version, about = "Detect reuse of CSP nonces across crawled sites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crawl and probe sites, writing records, summary.json and histogram.csv.
    Scan(ScanArgs),
    /// Recompute the run summary from persisted records and print it as JSON.
    Summarize {
        out: PathBuf,
        /// Also overwrite <out>/summary.json.
        #[arg(long)]
        write: bool,
    },
    /// Recompute the rank histogram from persisted records and print it as CSV.
    Histogram {
        out: PathBuf,
        /// Also overwrite <out>/histogram.csv.
        #[arg(long)]
        write: bool,
    },
    /// Serve simulator scenarios; point a scan at it with --proxy.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Args)]
struct ScanArgs {
    /// Ranked list in rank,domain format.
    #[arg(long, conflicts_with = "domain", required_unless_present = "domain")]
    targets: Option<PathBuf>,
    /// Scan a single registrable domain.
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, default_value_t = 10)]
    max_subdomains: usize,
    /// Pages per subdomain.
    #[arg(long, default_value_t = 10)]
    max_pages: usize,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 15)]
    timeout_secs: u64,
    /// Minimum gap between requests to one site.
    #[arg(long, default_value_t = 200)]
    interval_ms: u64,
    #[arg(long)]
    ignore_robots: bool,
    #[arg(long, default_value = "out")]
    output: PathBuf,
    /// Extra pause between probe steps of one page.
    #[arg(long, default_value_t = 0)]
    probe_delay_ms: u64,
    /// Store body hashes instead of bodies in evidence files.
    #[arg(long)]
    no_bodies: bool,
    /// Skip https and fetch over plain http only.
    #[arg(long)]
    http_only: bool,
    /// Proxy for all requests, e.g. a running simulator.
    #[arg(long)]
    proxy: Option<String>,
    #[arg(long)]
    user_agent: Option<String>,
    /// Sites scanned concurrently.
    #[arg(long)]
    threads: Option<usize>,
    /// Cache-status header catalog replacing the bundled one.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Scan(args) => scan(args),
        Command::Summarize { out, write } => summarize_cmd(&out, write),
        Command::Histogram { out, write } => histogram_cmd(&out, write),
        Command::Simulate { config, port } => simulate(&config, port),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("nonce-audit: {message}");
            ExitCode::FAILURE
        }
    }
}

fn scan(args: ScanArgs) -> Result<(), String> {
    let targets = match (&args.targets, &args.domain) {
        (Some(path), _) => read_targets(path).map_err(|e| e.to_string())?,
        (None, Some(domain)) => vec![SiteTarget::new(domain, None).map_err(|e| e.to_string())?],
        (None, None) => return Err("one of --targets or --domain is required".into()),
    };
    let budget = CrawlBudget {
        max_subdomains: args.max_subdomains,
        max_pages_per_subdomain: args.max_pages,
        max_depth: args.max_depth,
        request_timeout: Duration::from_secs(args.timeout_secs),
        min_request_interval: Duration::from_millis(args.interval_ms),
    };
    budget.validate().map_err(|e| e.to_string())?;

    let mut config = ScanConfig {
        budget,
        ..ScanConfig::default()
    };
    config.crawl.honor_robots = !args.ignore_robots;
    if args.http_only {
        config.crawl.scheme = SchemePolicy::HttpOnly;
    }
    config.session.proxy = args.proxy;
    if let Some(ua) = args.user_agent {
        config.session.user_agent = ua;
    }
    config.probe.probe_delay = Duration::from_millis(args.probe_delay_ms);
    if let Some(path) = &args.catalog {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        config.catalog = text
            .parse::<HeaderCatalog>()
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(n) = args.threads {
        configure_threads(n)?;
    }

    let out = OutputDir::create(&args.output, !args.no_bodies).map_err(|e| e.to_string())?;
    let total = targets.len();
    let mut reports: Vec<SiteReport> = Vec::with_capacity(total);
    scan_targets(&targets, &config, |report| {
        out.write_site(&report).map_err(|e| e.to_string())?;
        eprintln!(
            "[{}/{total}] {}{}",
            reports.len() + 1,
            report.target.registrable_domain,
            site_note(&report)
        );
        reports.push(report);
        Ok::<(), String>(())
    })?;

    let summary = summarize(&reports);
    out.write_summary(&summary).map_err(|e| e.to_string())?;
    out.write_histogram(&rank_histogram(&reports)).map_err(|e| e.to_string())?;
    println!("{summary}");
    Ok(())
}

fn site_note(report: &SiteReport) -> String {
    if let Some(err) = &report.site_error {
        return format!(": unreachable ({})", err.message);
    }
    let mut note = format!(": {} pages", report.pages.len());
    if report.uses_nonce {
        note.push_str(", nonce");
    }
    if report.reuses_nonce {
        note.push_str(", REUSE");
    }
    note
}

fn summarize_cmd(out: &Path, write: bool) -> Result<(), String> {
    let sites = load_run(out).map_err(|e| e.to_string())?;
    let json = summarize(&sites).to_json().map_err(|e| e.to_string())?;
    if write {
        write_file(&out.join(SUMMARY_FILE), &json)?;
    }
    print!("{json}");
    Ok(())
}

fn histogram_cmd(out: &Path, write: bool) -> Result<(), String> {
    let sites = load_run(out).map_err(|e| e.to_string())?;
    let csv = rank_histogram(&sites).to_csv();
    if write {
        write_file(&out.join(HISTOGRAM_FILE), &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn simulate(config: &Path, port: u16) -> Result<(), String> {
    let scenarios = ScenarioFile::load(config).map_err(|e| e.to_string())?;
    let names: Vec<String> = scenarios.iter().map(|s| s.domain()).collect();
    let sim = Simulator::serve(scenarios, port).map_err(|e| e.to_string())?;
    eprintln!("serving {} scenarios as proxy {}", names.len(), sim.proxy_url());
    for name in names {
        eprintln!("  {name}");
    }
    sim.wait();
    Ok(())
}
