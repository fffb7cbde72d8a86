//! `copilot-sim`: batch experiments, ablations, offline re-scoring and the
//! interactive session server.
//!
//! Exit codes: 0 success, 2 configuration error, 3 some cells failed,
//! 4 every cell failed (or any other runtime error).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use copilot_sim::harness::{
    render_ablation_table, render_run_csv, render_run_table, run_ablation, run_plan, AblationReport, BackendKind,
    ExperimentPlan, HarnessContext, HarnessError, RunReport,
};
use copilot_sim::metrics::{score_log, ComfortMetrics, WeightPreset};
use copilot_sim::policy::RangeTable;
use copilot_sim::policygen::{BaselineGenerator, Lexicon, PolicyGenerator, RemoteBackend, RemoteClientConfig, RuleBackend};
use copilot_sim::session::{baseline_comfort_for, ManagerConfig, SessionManager};
use copilot_sim::sim::TrajectoryLog;
use copilot_sim_server::{AppState, Pace};

const REPORT_FILE: &str = "report.json";
const ABLATION_FILE: &str = "ablation.json";

#[derive(Parser)]
#[command(name = "copilot-sim", version, about = "Closed-loop personalized driving simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment plan and write report.json, cells.csv and logs/.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Replaces the plan's backend list.
        #[arg(long)]
        backend: Option<BackendKind>,
        #[arg(long)]
        no_memory: bool,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Compare with-memory, without-memory and baseline on a scripted persona.
    Ablate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-score a saved trajectory CSV.
    Score {
        #[arg(long)]
        log: PathBuf,
        /// Weight preset name; defaults to the scenario's preset.
        #[arg(long)]
        weights: Option<String>,
        /// Run report holding the baseline references; by default the
        /// report.json next to the log's directory, else recomputed.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print a saved run or ablation report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Serve the session API over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        /// Where memory stores, event logs and trip logs are kept.
        #[arg(long, default_value = "copilot-data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "rule")]
        backend: BackendKind,
        /// Simulation speed as a multiple of real time; 0 runs flat out.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

/// Errors in the user's inputs rather than in execution.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(e.into()))
}

fn is_config(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<ConfigError>().is_some() || matches!(c.downcast_ref::<HarnessError>(), Some(HarnessError::Config(_)))
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config(&e) { 2 } else { 4 })
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run { plan, out, seed, backend, no_memory, workers } => {
            let mut plan = load_plan(&plan)?;
            if let Some(s) = seed {
                plan.seed = s;
            }
            if let Some(b) = backend {
                plan.backends = vec![b];
            }
            if no_memory {
                plan.memory_enabled = false;
            }
            if let Some(w) = workers {
                plan.workers = w;
            }
            plan.validate().map_err(config_err)?;
            run(&plan, &out)
        }
        Command::Ablate { plan, out } => ablate(&load_plan(&plan)?, &out),
        Command::Score { log, weights, report } => score(&log, weights.as_deref(), report.as_deref()),
        Command::Report { input, format } => report(&input, format),
        Command::Serve { addr, data_dir, backend, speed } => serve(addr, data_dir, backend, speed),
    }
}

fn load_plan(path: &Path) -> Result<ExperimentPlan> {
    let text = fs::read_to_string(path).with_context(|| format!("reading plan {}", path.display())).map_err(config_err)?;
    ExperimentPlan::from_toml(&text).with_context(|| format!("plan {}", path.display())).map_err(config_err)
}

/// 0 when every cell succeeded, 3 when some failed, 4 when all did.
fn cell_exit(total: usize, failed: usize) -> ExitCode {
    match failed {
        0 => ExitCode::SUCCESS,
        f if f < total => ExitCode::from(3),
        _ => ExitCode::from(4),
    }
}

fn run(plan: &ExperimentPlan, out: &Path) -> Result<ExitCode> {
    let outcome = run_plan(plan, &HarnessContext::default())?;
    let logs_dir = out.join("logs");
    fs::create_dir_all(&logs_dir).with_context(|| format!("creating {}", logs_dir.display()))?;
    for (cell, log) in outcome.report.cells.iter().zip(&outcome.logs) {
        if let Some(log) = log {
            fs::write(logs_dir.join(log_name(cell)), log.to_csv())?;
        }
    }
    let report = &outcome.report;
    fs::write(out.join(REPORT_FILE), report.to_json())?;
    fs::write(out.join("cells.csv"), render_run_csv(report))?;
    let table = render_run_table(report);
    fs::write(out.join("summary.txt"), &table)?;
    print!("{table}");
    eprintln!("{} cells, {} failed; wrote {}", report.cells.len(), report.failed(), out.display());
    Ok(cell_exit(report.cells.len(), report.failed()))
}

fn log_name(cell: &copilot_sim::harness::CellReport) -> String {
    let c = &cell.cell;
    format!("{:03}-{}-{}-{}-r{}.csv", c.index, c.scenario, c.weather, c.backend, c.repetition)
}

fn ablate(plan: &ExperimentPlan, out: &Path) -> Result<ExitCode> {
    let report = run_ablation(plan, &HarnessContext::default())?;
    fs::create_dir_all(out)?;
    fs::write(out.join(ABLATION_FILE), report.to_json())?;
    let table = render_ablation_table(&report);
    fs::write(out.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(cell_exit(report.total_trips(), report.failed()))
}

fn score(log_path: &Path, weights: Option<&str>, report: Option<&Path>) -> Result<ExitCode> {
    let text = fs::read_to_string(log_path).with_context(|| format!("reading {}", log_path.display())).map_err(config_err)?;
    let log = TrajectoryLog::from_csv(&text).map_err(config_err)?;
    let kind = log.meta.scenario;
    let preset = match weights {
        Some(name) => WeightPreset::named(name).map_err(config_err)?,
        None => WeightPreset::default_for(kind),
    };
    if let Some(used) = &log.meta.weight_preset {
        if used != &preset.name {
            eprintln!("note: log was scored with preset '{used}', re-scoring with '{}'", preset.name);
        }
    }
    let sibling = log_path.parent().and_then(Path::parent).map(|d| d.join(REPORT_FILE));
    let report_path = report.map(Path::to_path_buf).or(sibling.filter(|p| p.exists()));
    let (baseline, table, scoring): (ComfortMetrics, RangeTable, _) = match report_path {
        Some(p) => {
            let r = RunReport::from_json(&fs::read_to_string(&p)?).map_err(config_err)?;
            let b = *r
                .baseline_comfort
                .get(&kind)
                .ok_or_else(|| config_err(anyhow!("{} has no baseline for {kind}", p.display())))?;
            (b, r.range_table, r.scoring)
        }
        None => {
            let cfg = ManagerConfig::default();
            let b = baseline_comfort_for(kind, &cfg.scenario, &cfg.loop_cfg, &cfg.table)?;
            (b, cfg.table, cfg.scoring)
        }
    };
    let report = score_log(&log, &baseline, &table, &preset, &scoring)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn report(input: &Path, format: Format) -> Result<ExitCode> {
    let dir_or_file = |name: &str| if input.is_dir() { input.join(name) } else { input.to_path_buf() };
    let run_path = dir_or_file(REPORT_FILE);
    let abl_path = dir_or_file(ABLATION_FILE);
    if run_path.is_file() && (input.is_dir() || run_path.file_name() != Some(ABLATION_FILE.as_ref())) {
        if let Ok(r) = RunReport::from_json(&fs::read_to_string(&run_path)?) {
            match format {
                Format::Table => print!("{}", render_run_table(&r)),
                Format::Json => println!("{}", r.to_json()),
                Format::Csv => print!("{}", render_run_csv(&r)),
            }
            return Ok(ExitCode::SUCCESS);
        }
    }
    if abl_path.is_file() {
        let r = AblationReport::from_json(&fs::read_to_string(&abl_path)?).map_err(config_err)?;
        match format {
            Format::Table => print!("{}", render_ablation_table(&r)),
            Format::Json => println!("{}", r.to_json()),
            Format::Csv => print!("{}", ablation_csv(&r)?),
        }
        return Ok(ExitCode::SUCCESS);
    }
    Err(config_err(anyhow!("no run or ablation report found at {}", input.display())))
}

fn ablation_csv(r: &AblationReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config", "trips", "failed", "mean_driving_score", "mean_command_alignment", "sequences_changed"])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    for row in &r.rows {
        w.write_record([
            row.config.as_str().to_string(),
            row.trips.to_string(),
            row.failed.to_string(),
            opt(row.mean_driving_score),
            opt(row.mean_command_alignment),
            row.sequences_changed.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn serve(addr: std::net::SocketAddr, data_dir: PathBuf, backend: BackendKind, speed: f64) -> Result<ExitCode> {
    if !(speed >= 0.0 && speed.is_finite()) {
        bail!(ConfigError(anyhow!("--speed must be a non-negative number, got {speed}")));
    }
    let cfg = ManagerConfig {
        data_dir: Some(data_dir),
        ..ManagerConfig::default()
    };
    let generator: Arc<dyn PolicyGenerator> = match backend {
        BackendKind::Baseline => Arc::new(BaselineGenerator::new(&cfg.table)),
        BackendKind::Rule => Arc::new(RuleBackend::new(cfg.table.clone(), Lexicon::default())),
        BackendKind::Remote => {
            Arc::new(RemoteBackend::new(RemoteClientConfig::from_env().map_err(config_err)?, cfg.table.clone()))
        }
    };
    let frame = cfg.scenario.dt * cfg.decimation as f64;
    let pace = if speed == 1.0 {
        Pace::RealTime
    } else if speed == 0.0 {
        Pace::Accelerated { steps: cfg.decimation, period: Duration::ZERO }
    } else {
        Pace::Accelerated { steps: cfg.decimation, period: Duration::from_secs_f64(frame / speed) }
    };
    let manager = SessionManager::new(cfg, generator)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(copilot_sim_server::serve(addr, AppState::new(manager, pace)))?;
    Ok(ExitCode::SUCCESS)
}
