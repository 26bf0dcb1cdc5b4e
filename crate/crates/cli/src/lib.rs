//! The `amr` command.
//!
//! `simulate` and `serve` take a scenario file. `read`, `sweep`, `bill`,
//! `history` and `meters` work either against a running service
//! (`--server URL`) or on an embedded simulation built from a scenario
//! (`--scenario FILE`, optionally persisted with `--store DIR`). Both
//! modes print the same API payloads with `--json`.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |---|---|
//! | 0 | success |
//! | 1 | runtime fault: store I/O, simulation error, bind failure, bad server reply |
//! | 2 | invalid input: command line, scenario or tariff file |
//! | 3 | request rejected: `NOT_REGISTERED`, `NO_BASELINE`, `INVALID_PERIOD`, `BAD_REQUEST` |
//! | 4 | `UNREACHABLE`: the meter did not answer within the retry budget |
//! | 5 | the service at `--server` could not be reached |
//! | 6 | `BILLING_ANOMALY`: the register went backwards inside the period |

mod backend;
mod render;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};

use amr_core::billing::Tariff;
use amr_core::headend::Store;
use amr_core::netsim::LinkPreset;
use amr_core::protocol::parse_address;
use amr_core::scenario::{Overrides, Scenario};
use amr_server::payload::{ErrorBody, ErrorDetail};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use backend::Backend;
pub use render::Human;
pub use report::SimulationReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Runtime = 1,
    Invalid = 2,
    Rejected = 3,
    Unreachable = 4,
    NoServer = 5,
    BillingAnomaly = 6,
}

impl Exit {
    /// Exit status for an API error code.
    pub fn for_code(code: &str) -> Self {
        match code {
            "NOT_REGISTERED" | "NO_BASELINE" | "INVALID_PERIOD" | "BAD_REQUEST" | "NOT_FOUND"
            | "METHOD_NOT_ALLOWED" | "BILLING_ERROR" => Self::Rejected,
            "UNREACHABLE" => Self::Unreachable,
            "BILLING_ANOMALY" => Self::BillingAnomaly,
            "SERVER_UNAVAILABLE" => Self::NoServer,
            "INVALID_INPUT" => Self::Invalid,
            _ => Self::Runtime,
        }
    }
}

/// A failed command: what to print and how to exit.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub exit: Exit,
    pub error: ErrorDetail,
}

impl Failure {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self::with_id(code, message, String::new())
    }

    fn with_id(code: &str, message: impl Into<String>, correlation_id: String) -> Self {
        Self {
            exit: Exit::for_code(code),
            error: ErrorDetail {
                code: code.to_string(),
                message: message.into(),
                correlation_id,
            },
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new("INVALID_INPUT", message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new("INTERNAL", message)
    }
}

#[derive(Debug, Parser)]
#[command(name = "amr", version, about = "Automatic meter reading simulator and head-end")]
pub struct Cli {
    /// Log filter for diagnostics on stderr, e.g. `info` or `amr_server=debug`.
    #[arg(long, global = true, default_value = "warn", env = "AMR_LOG")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario to completion and print a sweep report.
    Simulate(SimulateArgs),
    /// Read one meter on demand.
    Read(ReadArgs),
    /// Poll every registered meter, or the given ones, in order.
    Sweep(SweepArgs),
    /// Bill a meter over a period from stored readings.
    Bill(BillArgs),
    /// Print stored readings of a meter.
    History(HistoryArgs),
    /// List registered meters with their last readings.
    Meters(TargetArgs),
    /// Start the simulation and serve the HTTP API until SIGINT or SIGTERM.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScenarioOverrides {
    /// Replace the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace the link preset.
    #[arg(long, value_parser = parse_link)]
    pub link: Option<LinkPreset>,
    /// Replace the per-frame loss probability.
    #[arg(long)]
    pub loss: Option<f64>,
    /// Replace the number of meters.
    #[arg(long)]
    pub meters: Option<usize>,
}

impl ScenarioOverrides {
    fn to_core(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            link: self.link,
            loss: self.loss,
            meters: self.meters,
        }
    }

    fn any(&self) -> bool {
        self.seed.is_some() || self.link.is_some() || self.loss.is_some() || self.meters.is_some()
    }
}

fn parse_link(s: &str) -> Result<LinkPreset, String> {
    s.parse().map_err(|e: amr_core::netsim::LinkError| e.to_string())
}

fn parse_addr(s: &str) -> Result<u32, String> {
    parse_address(s)
}

#[derive(Debug, Clone, Args)]
pub struct TargetArgs {
    /// Base URL of a running service, e.g. http://127.0.0.1:8080.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    pub server: Option<String>,
    /// Build an embedded simulation from this scenario instead.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Store directory for the embedded simulation; history survives runs.
    #[arg(long, requires = "scenario")]
    pub store: Option<PathBuf>,
    /// Tariff file for bills (embedded mode); default is the scenario's.
    #[arg(long, requires = "scenario")]
    pub tariff: Option<PathBuf>,
    /// Advance simulated time by this many seconds before the command.
    #[arg(long)]
    pub advance: Option<f64>,
    #[command(flatten)]
    pub overrides: ScenarioOverrides,
    /// Print the API payload as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReadArgs {
    /// Meter address, decimal or 0x hex.
    #[arg(value_parser = parse_addr)]
    pub address: u32,
    #[command(flatten)]
    pub target: TargetArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Meters to poll, in order; all registered meters if omitted.
    #[arg(value_parser = parse_addr)]
    pub addresses: Vec<u32>,
    #[command(flatten)]
    pub target: TargetArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BillArgs {
    #[arg(value_parser = parse_addr)]
    pub address: u32,
    /// Period start, simulated seconds.
    #[arg(long, allow_negative_numbers = true)]
    pub from: f64,
    /// Period end, simulated seconds.
    #[arg(long, allow_negative_numbers = true)]
    pub to: f64,
    /// Print the bill as CSV instead of text.
    #[arg(long, conflicts_with = "json")]
    pub csv: bool,
    #[command(flatten)]
    pub target: TargetArgs,
}

#[derive(Debug, Clone, Args)]
pub struct HistoryArgs {
    #[arg(value_parser = parse_addr)]
    pub address: u32,
    #[arg(long, allow_negative_numbers = true)]
    pub from: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub to: Option<f64>,
    #[command(flatten)]
    pub target: TargetArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    #[command(flatten)]
    pub overrides: ScenarioOverrides,
    /// Dump the event log, to stdout or to `--log=FILE`.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "-")]
    pub log: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
    /// Persist readings, anomalies and bills in this directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    pub scenario: PathBuf,
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub tariff: Option<PathBuf>,
    /// Simulated seconds per wall second; 0 moves time only on request.
    #[arg(long)]
    pub time_scale: Option<f64>,
    /// Events kept for event-stream replay.
    #[arg(long, default_value_t = amr_server::hub::DEFAULT_RETAIN)]
    pub retain: usize,
    #[command(flatten)]
    pub overrides: ScenarioOverrides,
}

pub fn init_logging(cli: &Cli) {
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log_level)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let default_info = matches!(cli.command, Command::Serve(_)) && cli.log_level == "warn";
    let filter = if default_info {
        tracing_subscriber::EnvFilter::new("info")
    } else {
        filter
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn load_scenario(path: &Path, overrides: &ScenarioOverrides) -> Result<Scenario, Failure> {
    let mut sc = Scenario::load(path).map_err(|e| scenario_failure(path, e))?;
    sc.apply(&overrides.to_core()).map_err(|e| scenario_failure(path, e))?;
    Ok(sc)
}

fn scenario_failure(path: &Path, e: amr_core::scenario::ScenarioError) -> Failure {
    Failure::invalid(format!("{}: {e}", path.display()))
}

pub fn open_store(dir: Option<&Path>) -> Result<Store, Failure> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d)
                .map_err(|e| Failure::runtime(format!("cannot create store directory {}: {e}", d.display())))?;
            Store::open(d).map_err(|e| Failure::runtime(e.to_string()))
        }
        None => Ok(Store::in_memory()),
    }
}

/// `--tariff`, else the scenario's `tariff`, else the bundled fixture.
pub fn resolve_tariff(explicit: Option<&Path>, sc: &Scenario) -> Result<Tariff, Failure> {
    match explicit.or(sc.tariff.as_deref()) {
        Some(p) => Tariff::load(p).map_err(|e| Failure::invalid(format!("{}: {e}", p.display()))),
        None => {
            tracing::warn!("no tariff configured, using the fixture tariff");
            Ok(Tariff::fixture())
        }
    }
}

/// What a successful command prints.
pub struct Rendered {
    pub json: String,
    pub human: String,
}

impl Rendered {
    pub fn of<T: Serialize + Human>(value: &T) -> Self {
        Self {
            json: to_json(value),
            human: value.human(),
        }
    }
}

/// Pretty JSON with a trailing newline; stable for a given value.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("payloads serialize");
    s.push('\n');
    s
}

/// Runs a command; returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    run_with(cli, &mut out, &mut err)
}

pub fn run_with(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let json = match &cli.command {
        Command::Simulate(a) => a.json,
        Command::Read(a) => a.target.json,
        Command::Sweep(a) => a.target.json,
        Command::Bill(a) => a.target.json,
        Command::History(a) => a.target.json,
        Command::Meters(a) => a.json,
        Command::Serve(_) => false,
    };
    let result = match cli.command {
        Command::Simulate(a) => report::simulate(&a, out),
        Command::Serve(a) => serve(&a, out).map(|()| None),
        Command::Read(a) => with_backend(&a.target, |b| b.read(a.address)),
        Command::Sweep(a) => with_backend(&a.target, |b| {
            b.sweep((!a.addresses.is_empty()).then_some(a.addresses.clone()))
        }),
        Command::Bill(a) => with_backend(&a.target, |b| {
            let r = b.bill(a.address, a.from, a.to)?;
            Ok(if a.csv {
                Rendered {
                    json: to_json(&r),
                    human: r.bill.to_csv(),
                }
            } else {
                Rendered::of(&r)
            })
        }),
        Command::History(a) => with_backend(&a.target, |b| b.history(a.address, a.from, a.to)),
        Command::Meters(a) => with_backend(&a, Backend::meters),
    };
    let written = match result {
        Ok(Some(r)) => out.write_all(if json { r.json } else { r.human }.as_bytes()),
        Ok(None) => Ok(()),
        Err(f) => {
            let status = f.exit as i32;
            if json {
                let _ = out.write_all(to_json(&ErrorBody { error: f.error.clone() }).as_bytes());
            }
            let msg = &f.error.message;
            let _ = if msg.starts_with(&f.error.code) {
                writeln!(err, "error: {msg}")
            } else {
                writeln!(err, "error: {}: {msg}", f.error.code)
            };
            let _ = out.flush();
            return status;
        }
    };
    match written.and_then(|()| out.flush()) {
        Ok(()) => Exit::Success as i32,
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Exit::Success as i32,
        Err(e) => {
            let _ = writeln!(err, "error: writing output: {e}");
            Exit::Runtime as i32
        }
    }
}

fn with_backend(
    target: &TargetArgs,
    f: impl FnOnce(&mut Backend) -> Result<Rendered, Failure>,
) -> Result<Option<Rendered>, Failure> {
    let mut b = Backend::connect(target)?;
    if let Some(s) = target.advance {
        b.advance(s)?;
    }
    let r = f(&mut b);
    b.close()?;
    r.map(Some)
}

fn serve(args: &ServeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let sc = load_scenario(&args.scenario, &args.overrides)?;
    let tariff = resolve_tariff(args.tariff.as_deref(), &sc)?;
    let time_scale = args.time_scale.unwrap_or(sc.time_scale);
    if !(time_scale.is_finite() && time_scale >= 0.0) {
        return Err(Failure::invalid(format!(
            "--time-scale must be finite and >= 0, got {time_scale}"
        )));
    }
    let store = open_store(args.store.as_deref())?;
    let config = sc
        .system_config(false)
        .map_err(|e| scenario_failure(&args.scenario, e))?;
    let system = amr_core::system::System::new(config, store);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::runtime(format!("cannot start the runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .map_err(|e| Failure::runtime(format!("cannot bind {}: {e}", args.bind)))?;
        let running = amr_server::start(
            listener,
            amr_server::ServerConfig {
                system,
                tariff,
                summary: sc.summary(),
                options: amr_server::SimOptions {
                    time_scale,
                    ..Default::default()
                },
                retain: args.retain,
            },
        )
        .await
        .map_err(|e| Failure::runtime(e.to_string()))?;
        let _ = writeln!(out, "listening on http://{}", running.local_addr());
        let _ = out.flush();
        running
            .run_until_signal()
            .await
            .map_err(|e| Failure::runtime(e.to_string()))
    })
}
