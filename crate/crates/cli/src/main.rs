use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tumor_ensemble::ensemble::{paper_ensemble, paper_ensemble_inclusive};
use tumor_ensemble::gradient::value_and_gradient;
use tumor_ensemble::objective::CostTag;
use tumor_ensemble::optimize::{optimize_with, DescentConfig};
use tumor_ensemble::simulate::{
    benchmark, compute_outcome, euler_forward, initial_state, run_protocol, write_outcomes_csv, BenchmarkSummary,
    Policy, Protocol, Stats,
};
use tumor_ensemble::{ControlSchedule, CostKind, EnsembleMeasure, TimeGrid, TumorParams};

mod config;

use config::{CommonArgs, EnsembleSource, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl From<tumor_ensemble::Error> for CliError {
    fn from(e: tumor_ensemble::Error) -> Self {
        match e {
            tumor_ensemble::Error::InvalidArgument(m) => CliError::Config(m),
            e @ tumor_ensemble::Error::NumericalFailure { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

/// Ensemble optimal control of drug schedules for a sensitive/resistant tumor model.
#[derive(Debug, Parser)]
#[command(name = "tumor-ensemble", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one member under a protocol or schedule; writes trajectory.csv.
    Simulate,
    /// TTP statistics of a protocol or schedule over the ensemble; writes outcomes.csv.
    Benchmark,
    /// Projected gradient descent on the ensemble cost; writes schedule.json and trace.csv.
    Optimize,
    /// Cost, gradient norm and TTP statistics of a stored schedule; writes outcomes.csv.
    Evaluate,
    /// Writes the ensemble as ensemble.json.
    ExportEnsemble,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = ExperimentConfig::resolve(&cli.common)?;
    if let Some(threads) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Benchmark => cmd_benchmark(&cfg),
        Command::Optimize => cmd_optimize(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::ExportEnsemble => cmd_export(&cfg),
    }
}

fn load_ensemble(cfg: &ExperimentConfig) -> Result<EnsembleMeasure, CliError> {
    match &cfg.ensemble {
        EnsembleSource::Paper => Ok(paper_ensemble()),
        EnsembleSource::PaperInclusive => Ok(paper_ensemble_inclusive()),
        EnsembleSource::File(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            Ok(EnsembleMeasure::from_json(&text)?)
        }
    }
}

fn load_schedule(cfg: &ExperimentConfig, path: &Path) -> Result<ControlSchedule, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let schedule = ControlSchedule::from_json(&text, cfg.r_s)?;
    if let Some(h) = cfg.horizon_days {
        if (schedule.grid().horizon_days() - h).abs() > 1e-9 * h.max(1.0) {
            return Err(CliError::Config(format!(
                "schedule covers {} days but --horizon-days is {h}",
                schedule.grid().horizon_days()
            )));
        }
    }
    Ok(schedule)
}

/// The protocol or schedule to apply, with the grid it runs on.
fn resolve_policy(cfg: &ExperimentConfig) -> Result<(Policy, TimeGrid), CliError> {
    match (&cfg.schedule, cfg.protocol) {
        (Some(_), Some(_)) => Err(CliError::Config("pass either --protocol or --schedule, not both".into())),
        (Some(path), None) => {
            let s = load_schedule(cfg, path)?;
            let grid = *s.grid();
            Ok((Policy::Schedule(s), grid))
        }
        (None, protocol) => {
            let grid = TimeGrid::from_days(cfg.protocol_horizon_days()?, cfg.steps_per_day, cfg.r_s)?;
            Ok((Policy::Protocol(protocol.unwrap_or(Protocol::Mtd)), grid))
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<(BufWriter<File>, PathBuf), CliError> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| io_err(&path, e))?;
    Ok((BufWriter::new(f), path))
}

fn write_with<F>(dir: &Path, name: &str, f: F) -> Result<PathBuf, CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let (mut w, path) = create(dir, name)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Whole days, truncated, for presentation only.
fn days(v: f64) -> i64 {
    v.floor() as i64
}

fn stats_row(label: &str, s: &Stats) -> String {
    format!("{label:<6} max {:>5} days  min {:>5} days  mean {:>5} days", days(s.max), days(s.min), days(s.mean))
}

fn print_summary(name: &str, n_0: f64, summary: &BenchmarkSummary, members: usize, with_prime: bool) {
    println!("{name}  n0={n_0}  members={members}  censored={}", summary.censored);
    println!("{}", stats_row("TTP", &summary.ttp));
    if with_prime {
        println!("{}", stats_row("TTP'", &summary.ttp_prime));
    }
}

fn write_summary_csv(dir: &Path, summary: &BenchmarkSummary) -> Result<PathBuf, CliError> {
    write_with(dir, "summary.csv", |w| {
        writeln!(w, "metric,max,min,mean,censored")?;
        for (label, s) in [("ttp", &summary.ttp), ("ttp_prime", &summary.ttp_prime)] {
            writeln!(w, "{label},{},{},{},{}", s.max, s.min, s.mean, summary.censored)?;
        }
        Ok(())
    })
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let p = TumorParams::new(cfg.d_d, cfg.d_t, cfg.r_r, cfg.f_0)?;
    let (policy, grid) = resolve_policy(cfg)?;
    let traj = match &policy {
        Policy::Protocol(proto) => run_protocol(&p, cfg.n_0, *proto, &grid)?,
        Policy::Schedule(s) => euler_forward(&p, initial_state(&p, cfg.n_0)?, s)?,
    };
    let path = write_with(&cfg.out, "trajectory.csv", |w| traj.write_csv(w))?;
    let o = compute_outcome(&traj, cfg.n_0);
    println!(
        "{}  n0={}  theta=({}, {}, {}, {})",
        policy.name(),
        cfg.n_0,
        p.d_d,
        p.d_t,
        p.r_r,
        p.f_0
    );
    println!("TTP  {} days{}", o.ttp_days, if o.ttp_censored { " (censored)" } else { "" });
    println!("TTP' {} days{}", o.ttp_prime_days, if o.censored { " (censored)" } else { "" });
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_benchmark(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let ensemble = load_ensemble(cfg)?;
    let (policy, grid) = resolve_policy(cfg)?;
    let result = benchmark(&ensemble, cfg.n_0, &policy, &grid)?;
    let path = write_with(&cfg.out, "outcomes.csv", |w| write_outcomes_csv(&ensemble, &result.outcomes, w))?;
    write_summary_csv(&cfg.out, &result.summary)?;
    let with_prime = cfg.ttp_prime || matches!(policy, Policy::Protocol(Protocol::OffOnAt));
    print_summary(policy.name(), cfg.n_0, &result.summary, ensemble.len(), with_prime);
    println!("horizon {} days; wrote {}", grid.horizon_days(), path.display());
    Ok(())
}

fn cmd_optimize(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let ensemble = load_ensemble(cfg)?;
    let kind = CostKind::new(cfg.cost, cfg.n_0)?;
    let grid = TimeGrid::from_days(cfg.optimization_horizon_days()?, cfg.steps_per_day, cfg.r_s)?;
    let descent = DescentConfig {
        eta: cfg.eta,
        iterations: cfg.iterations,
        initial_value: cfg.init,
        log_every: cfg.log_every,
        scaling: cfg.gradient,
    };
    eprintln!(
        "optimizing {:?} cost, n0={}, T_hor={} days (T={:.4}), {} members, {} iterations",
        cfg.cost,
        cfg.n_0,
        grid.horizon_days(),
        grid.horizon(),
        ensemble.len(),
        cfg.iterations
    );
    let trace = optimize_with(&ensemble, &kind, &grid, &descent, |it, j| eprintln!("iteration {it}: J = {j}"))?;
    let schedule_path = write_with(&cfg.out, "schedule.json", |w| writeln!(w, "{}", trace.schedule.to_json()))?;
    let trace_path = write_with(&cfg.out, "trace.csv", |w| trace.write_csv(w))?;
    println!("J initial {}  final {}", trace.values[0], trace.values[trace.values.len() - 1]);
    println!("wrote {} and {}", schedule_path.display(), trace_path.display());
    Ok(())
}

fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let path = cfg
        .schedule
        .as_ref()
        .ok_or_else(|| CliError::Config("evaluate needs --schedule <file>".into()))?;
    if cfg.protocol.is_some() {
        return Err(CliError::Config("evaluate takes a schedule, not a protocol".into()));
    }
    let schedule = load_schedule(cfg, path)?;
    let ensemble = load_ensemble(cfg)?;
    let kind = CostKind::new(cfg.cost, cfg.n_0)?;
    let (j, grad) = value_and_gradient(&ensemble, &kind, &schedule)?;
    let grid = *schedule.grid();
    let result = benchmark(&ensemble, cfg.n_0, &Policy::Schedule(schedule), &grid)?;
    let out = write_with(&cfg.out, "outcomes.csv", |w| write_outcomes_csv(&ensemble, &result.outcomes, w))?;
    write_summary_csv(&cfg.out, &result.summary)?;
    print_summary("schedule", cfg.n_0, &result.summary, ensemble.len(), true);
    if cfg.cost == CostTag::Hyperbolic {
        println!("hyperbolic policy: report TTP'");
    }
    println!("J {j}  gradient sup norm {}", grad.inf_norm());
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_export(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let ensemble = load_ensemble(cfg)?;
    let path = write_with(&cfg.out, "ensemble.json", |w| writeln!(w, "{}", ensemble.to_json()))?;
    println!("{} members; wrote {}", ensemble.len(), path.display());
    Ok(())
}
