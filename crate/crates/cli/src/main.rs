//! `notebook-gate`: serve a notebook behind the gateway, benchmark it, and
//! the small operator tools around that.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a runtime failure.

use std::io::{self, BufRead, IsTerminal, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use notebook_gate::bench::{
    compare_report, cpu_series_csv, csv_string, read_csv, rows_for, run_load, write_csv_atomic,
    CsvRow, LabeledSweep, LoadLimit, LoadSpec,
};
use notebook_gate::kernel::{mock_kernel_serve, MockOptions};
use notebook_gate::security::{fresh_salt, hash_password, Algorithm};
use tracing_subscriber::EnvFilter;

const CONFIG_ENV: &str = "NOTEBOOK_GATE_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "notebook-gate", version, about = "Jupyter notebook gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the gateway until interrupted.
    Serve(ConfigArg),
    /// Closed-loop load sweep against one URL; writes a CSV.
    Bench(BenchArgs),
    /// Compare two sweep CSVs (e.g. direct vs through the gateway).
    Report(ReportArgs),
    /// Read a password without echo and print `algorithm:salt:digest`.
    HashPassword {
        #[arg(long, default_value = "sha256")]
        algorithm: String,
    },
    /// Validate a configuration file; silent on success.
    CheckConfig(ConfigArg),
    /// Run the stand-in notebook server used by tests and benchmarks.
    MockUpstream {
        #[arg(long, default_value = "127.0.0.1:8888")]
        listen: SocketAddr,
        /// Delay added before every HTTP response.
        #[arg(long, default_value_t = 0)]
        latency_ms: u64,
    },
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Configuration file; falls back to $NOTEBOOK_GATE_CONFIG.
    #[arg(env = CONFIG_ENV)]
    config: PathBuf,
}

#[derive(Debug, Clone)]
struct Levels(Vec<usize>);

impl FromStr for Levels {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let levels = s
            .split(',')
            .map(|t| match t.trim().parse::<usize>() {
                Ok(0) | Err(_) => Err(format!("{t:?} is not a positive connection count")),
                Ok(n) => Ok(n),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Levels(levels))
    }
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    target: http::Uri,
    /// Comma-separated concurrency levels, e.g. 50,100,250.
    #[arg(long, default_value = "50,100,250,500,1000")]
    connections: Levels,
    /// Requests per measured run.
    #[arg(
        long,
        conflicts_with = "duration",
        required_unless_present = "duration"
    )]
    requests: Option<u64>,
    /// Seconds per measured run.
    #[arg(long)]
    duration: Option<f64>,
    /// Warmup seconds before each measured run.
    #[arg(long, default_value_t = 3.0)]
    warmup: f64,
    #[arg(long, default_value_t = 3)]
    repetitions: u32,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    /// Sample CPU and RSS of this process while measuring.
    #[arg(long)]
    pid: Option<u32>,
    #[arg(long, default_value_t = 100)]
    sample_interval_ms: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the CPU/RSS time series of each level's median run.
    #[arg(long, requires = "pid")]
    series: Option<PathBuf>,
    /// Stack name used in the time series.
    #[arg(long, default_value = "target")]
    label: String,
}

#[derive(Debug, Args)]
struct ReportArgs {
    baseline: PathBuf,
    candidate: PathBuf,
    #[arg(long, default_value = "direct")]
    label_a: String,
    #[arg(long, default_value = "gateway")]
    label_b: String,
    /// Write the comparison as CSV here as well.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn seconds(flag: &str, v: f64) -> anyhow::Result<Duration> {
    Duration::try_from_secs_f64(v)
        .with_context(|| format!("--{flag} must be a non-negative number of seconds"))
}

fn init_logging(default: &str) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .try_init();
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

async fn interrupted() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        if let Ok(mut term) = signal(SignalKind::terminate()) {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
            return;
        }
    }
    let _ = tokio::signal::ctrl_c().await;
}

fn serve(path: &Path) -> anyhow::Result<()> {
    init_logging("info");
    let cfg =
        notebook_gate::load_config(path).with_context(|| format!("loading {}", path.display()))?;
    runtime()?.block_on(async {
        let scheme = cfg.public_scheme();
        let handle = notebook_gate::serve(cfg).await?;
        println!(
            "notebook-gate listening on {scheme}://{}",
            handle.local_addr()
        );
        io::stdout().flush()?;
        interrupted().await;
        tracing::info!("shutting down");
        handle.shutdown().await;
        Ok(())
    })
}

fn check_config(path: &Path) -> anyhow::Result<()> {
    let cfg =
        notebook_gate::load_config(path).with_context(|| format!("loading {}", path.display()))?;
    // The notebook must also parse, or serve would fail at startup.
    let bytes = std::fs::read(&cfg.notebook_path)
        .with_context(|| format!("reading notebook {}", cfg.notebook_path.display()))?;
    notebook_gate::parse_notebook(&bytes)
        .with_context(|| format!("notebook {}", cfg.notebook_path.display()))?;
    cfg.tls.server_config().context("tls")?;
    Ok(())
}

fn read_password_twice() -> anyhow::Result<String> {
    let (first, second) = if io::stdin().is_terminal() {
        (
            rpassword::prompt_password("Password: ")?,
            rpassword::prompt_password("Confirm password: ")?,
        )
    } else {
        let mut lines = io::stdin().lock().lines();
        let mut next = || -> anyhow::Result<String> {
            Ok(lines
                .next()
                .context("expected the password twice on stdin")??)
        };
        (next()?, next()?)
    };
    if first != second {
        bail!("passwords do not match");
    }
    if first.is_empty() {
        bail!("empty password");
    }
    Ok(first)
}

fn hash_password_cmd(algorithm: &str) -> anyhow::Result<()> {
    let alg: Algorithm = algorithm.parse()?;
    let password = read_password_twice()?;
    let record = hash_password(&password, &fresh_salt(), alg)?;
    println!("{record}");
    Ok(())
}

fn bench(args: BenchArgs) -> anyhow::Result<()> {
    init_logging("warn");
    let limit = match (args.requests, args.duration) {
        (Some(n), None) => LoadLimit::Requests(n),
        (None, Some(d)) => LoadLimit::Duration(seconds("duration", d)?),
        _ => unreachable!("clap enforces exactly one of --requests/--duration"),
    };
    let rt = runtime()?;
    let mut rows: Vec<CsvRow> = Vec::new();
    let mut series = Vec::new();
    for &connections in &args.connections.0 {
        let mut spec = LoadSpec::new(args.target.clone(), connections, limit);
        spec.warmup = seconds("warmup", args.warmup)?;
        spec.repetitions = args.repetitions;
        spec.request_timeout = seconds("timeout", args.timeout)?;
        spec.sample_pid = args.pid;
        spec.sample_interval = Duration::from_millis(args.sample_interval_ms);
        let outcome = rt
            .block_on(run_load(&spec))
            .with_context(|| format!("{connections} connections"))?;
        let m = outcome.median();
        eprintln!(
            "{connections:>6} conns: {:>10.1} req/s  p50 {:.2} ms  p99 {:.2} ms  failed {}",
            m.throughput_rps,
            m.p50_ms,
            m.p99_ms,
            m.failed_total()
        );
        series.push((format!("{}@{connections}", args.label), m.samples.clone()));
        rows.extend(rows_for(&outcome));
    }
    // Nothing is written until every level has succeeded.
    match &args.output {
        Some(path) => write_csv_atomic(path, &rows)?,
        None => print!("{}", csv_string(&rows)),
    }
    if let Some(path) = &args.series {
        let borrowed: Vec<(&str, &[_])> = series
            .iter()
            .map(|(l, s)| (l.as_str(), s.as_slice()))
            .collect();
        std::fs::write(path, cpu_series_csv(&borrowed))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let a = LabeledSweep::new(args.label_a, read_csv(&args.baseline)?);
    let b = LabeledSweep::new(args.label_b, read_csv(&args.candidate)?);
    let cmp = compare_report(&a, &b)?;
    print!("{}\n{}", cmp.to_table(), cmp.memory_table());
    if let Some(path) = &args.output {
        std::fs::write(path, cmp.to_csv())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn mock_upstream(listen: SocketAddr, latency_ms: u64) -> anyhow::Result<()> {
    init_logging("warn");
    runtime()?.block_on(async {
        let options = MockOptions {
            latency: Duration::from_millis(latency_ms),
        };
        let mock = mock_kernel_serve(listen, options)
            .await
            .with_context(|| format!("binding {listen}"))?;
        println!("mock upstream listening on {}", mock.url());
        io::stdout().flush()?;
        interrupted().await;
        mock.shutdown().await;
        Ok(())
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve(c) => serve(&c.config),
        Command::Bench(args) => bench(args),
        Command::Report(args) => report(args),
        Command::HashPassword { algorithm } => hash_password_cmd(&algorithm),
        Command::CheckConfig(c) => check_config(&c.config),
        Command::MockUpstream { listen, latency_ms } => mock_upstream(listen, latency_ms),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("notebook-gate: {err:#}");
            ExitCode::from(2)
        }
    }
}
