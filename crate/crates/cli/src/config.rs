//! Experiment configuration: flags override a flat JSON config file, which
//! overrides the built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde_json::{Map, Value};
use tumor_ensemble::objective::CostTag;
use tumor_ensemble::optimize::GradientScaling;
use tumor_ensemble::simulate::Protocol;
use tumor_ensemble::DEFAULT_R_S;

use crate::CliError;

/// Horizon used for protocol benchmarks when no censoring horizon applies.
pub const BENCHMARK_CAP_DAYS: f64 = 3000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostArg {
    Linear,
    Hyperbolic,
}

impl From<CostArg> for CostTag {
    fn from(c: CostArg) -> Self {
        match c {
            CostArg::Linear => CostTag::Linear,
            CostArg::Hyperbolic => CostTag::Hyperbolic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Mtd,
    OnoffAt,
    OffonAt,
    /// Open-loop schedule read from `--schedule`.
    ScheduleFile,
}

impl ProtocolArg {
    fn protocol(self) -> Option<Protocol> {
        match self {
            ProtocolArg::Mtd => Some(Protocol::Mtd),
            ProtocolArg::OnoffAt => Some(Protocol::OnOffAt),
            ProtocolArg::OffonAt => Some(Protocol::OffOnAt),
            ProtocolArg::ScheduleFile => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradientArg {
    /// Partial derivatives of the discretized functional.
    Discrete,
    /// Partials divided by the time step (the L2 gradient).
    L2,
}

impl From<GradientArg> for GradientScaling {
    fn from(g: GradientArg) -> Self {
        match g {
            GradientArg::Discrete => GradientScaling::Discrete,
            GradientArg::L2 => GradientScaling::L2,
        }
    }
}

/// Flags shared by every subcommand. All are optional so that a config file
/// can fill the gaps.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat JSON object whose keys mirror the flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Initial tumor size in (0, 1).
    #[arg(long, global = true)]
    pub n0: Option<f64>,
    #[arg(long, value_enum, global = true)]
    pub cost: Option<CostArg>,
    #[arg(long, value_enum, global = true)]
    pub protocol: Option<ProtocolArg>,
    /// Open-loop schedule JSON used instead of a protocol.
    #[arg(long, global = true)]
    pub schedule: Option<PathBuf>,
    #[arg(long = "rR", global = true)]
    pub r_r: Option<f64>,
    #[arg(long = "f0", global = true)]
    pub f_0: Option<f64>,
    #[arg(long = "dD", global = true)]
    pub d_d: Option<f64>,
    #[arg(long = "dT", global = true)]
    pub d_t: Option<f64>,
    #[arg(long = "horizon-days", global = true)]
    pub horizon_days: Option<f64>,
    /// Censor at the optimization horizon of the given n0 (750/1000/1500 days).
    #[arg(long = "censor-at-horizon", global = true)]
    pub censor_at_horizon: bool,
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// Constant initial control for the descent.
    #[arg(long, global = true)]
    pub init: Option<f64>,
    /// Gradient representation used by the descent.
    #[arg(long, value_enum, global = true)]
    pub gradient: Option<GradientArg>,
    #[arg(long = "step-per-day", global = true)]
    pub step_per_day: Option<u32>,
    /// `paper`, `paper-inclusive` or a path to an ensemble JSON file.
    #[arg(long, global = true)]
    pub ensemble: Option<String>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub rs: Option<f64>,
    /// Also print TTP' in summary tables.
    #[arg(long = "ttp-prime", global = true)]
    pub ttp_prime: bool,
    /// Progress lines on stderr every this many descent iterations.
    #[arg(long = "log-every", global = true)]
    pub log_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleSource {
    Paper,
    PaperInclusive,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_0: f64,
    pub horizon_days: Option<f64>,
    pub cost: CostTag,
    pub protocol: Option<Protocol>,
    pub schedule: Option<PathBuf>,
    pub r_r: f64,
    pub f_0: f64,
    pub d_d: f64,
    pub d_t: f64,
    pub censor_at_horizon: bool,
    pub eta: f64,
    pub iterations: usize,
    pub init: f64,
    pub gradient: GradientScaling,
    pub steps_per_day: u32,
    pub ensemble: EnsembleSource,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub r_s: f64,
    pub ttp_prime: bool,
    pub log_every: usize,
}

/// Optimization horizon for the reference initial sizes.
pub fn reference_horizon_days(n_0: f64) -> Option<f64> {
    [(0.25, 750.0), (0.5, 1000.0), (0.75, 1500.0)]
        .iter()
        .find(|(n, _)| (n - n_0).abs() < 1e-12)
        .map(|&(_, h)| h)
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

struct FileValues(Map<String, Value>);

impl FileValues {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileValues(Map::new()));
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("reading {}: {e}", path.display())))?;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(m)) => Ok(FileValues(m)),
            Ok(_) => Err(cfg_err("config file must be a JSON object")),
            Err(e) => Err(cfg_err(format!("config file: {e}"))),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| cfg_err(format!("config key {key} must be a number"))),
        }
    }

    fn u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| cfg_err(format!("config key {key} must be a non-negative integer"))),
        }
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.as_bool().map(Some).ok_or_else(|| cfg_err(format!("config key {key} must be a boolean"))),
        }
    }

    fn str(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_owned()))
                .ok_or_else(|| cfg_err(format!("config key {key} must be a string"))),
        }
    }

    fn enum_value<T: ValueEnum>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.str(key)? {
            None => Ok(None),
            Some(s) => T::from_str(&s, true).map(Some).map_err(|_| cfg_err(format!("config key {key}: unknown value {s}"))),
        }
    }
}

impl ExperimentConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let file = FileValues::load(args.config.as_deref())?;
        let n_0 = args.n0.or(file.f64("n0")?).unwrap_or(0.5);
        if !(n_0 > 0.0 && n_0 < 1.0) {
            return Err(cfg_err(format!("--n0 must lie in (0, 1), got {n_0}")));
        }
        let horizon_days = args.horizon_days.or(file.f64("horizon-days")?);
        if let Some(h) = horizon_days {
            if !(h > 0.0) || !h.is_finite() {
                return Err(cfg_err(format!("--horizon-days must be positive, got {h}")));
            }
        }
        let cost = args.cost.or(file.enum_value("cost")?).unwrap_or(CostArg::Hyperbolic);
        let protocol_arg: Option<ProtocolArg> = args.protocol.or(file.enum_value("protocol")?);
        let schedule = args.schedule.clone().or(file.str("schedule")?.map(PathBuf::from));
        if protocol_arg == Some(ProtocolArg::ScheduleFile) && schedule.is_none() {
            return Err(cfg_err("--protocol schedule-file needs --schedule <file>"));
        }
        let protocol = protocol_arg.and_then(ProtocolArg::protocol);
        let ensemble = match args.ensemble.clone().or(file.str("ensemble")?).as_deref() {
            None | Some("paper") => EnsembleSource::Paper,
            Some("paper-inclusive") => EnsembleSource::PaperInclusive,
            Some(path) => EnsembleSource::File(PathBuf::from(path)),
        };
        let steps_per_day = match args.step_per_day {
            Some(v) => v,
            None => match file.u64("step-per-day")? {
                Some(v) => u32::try_from(v).map_err(|_| cfg_err("step-per-day too large"))?,
                None => tumor_ensemble::DEFAULT_STEPS_PER_DAY,
            },
        };
        if steps_per_day == 0 {
            return Err(cfg_err("--step-per-day must be positive"));
        }
        let r_s = args.rs.or(file.f64("rs")?).unwrap_or(DEFAULT_R_S);
        if !(r_s > 0.0) {
            return Err(cfg_err(format!("--rs must be positive, got {r_s}")));
        }
        let eta = args.eta.or(file.f64("eta")?).unwrap_or(0.125);
        if !(eta > 0.0) {
            return Err(cfg_err(format!("--eta must be positive, got {eta}")));
        }
        let init = args.init.or(file.f64("init")?).unwrap_or(0.5);
        if !(0.0..=1.0).contains(&init) {
            return Err(cfg_err(format!("--init must lie in [0, 1], got {init}")));
        }
        let iterations = match args.iterations {
            Some(v) => v,
            None => file.u64("iterations")?.map_or(500, |v| v as usize),
        };
        let threads = match args.threads {
            Some(v) => Some(v),
            None => file.u64("threads")?.map(|v| v as usize),
        };
        let log_every = match args.log_every {
            Some(v) => v,
            None => file.u64("log-every")?.map_or(0, |v| v as usize),
        };
        Ok(ExperimentConfig {
            n_0,
            horizon_days,
            cost: cost.into(),
            protocol,
            schedule,
            r_r: args.r_r.or(file.f64("rR")?).unwrap_or(0.66),
            f_0: args.f_0.or(file.f64("f0")?).unwrap_or(0.01),
            d_d: args.d_d.or(file.f64("dD")?).unwrap_or(tumor_ensemble::ensemble::PAPER_D_D),
            d_t: args.d_t.or(file.f64("dT")?).unwrap_or(tumor_ensemble::ensemble::PAPER_D_T),
            censor_at_horizon: args.censor_at_horizon || file.bool("censor-at-horizon")?.unwrap_or(false),
            eta,
            iterations,
            init,
            gradient: args.gradient.or(file.enum_value("gradient")?).unwrap_or(GradientArg::L2).into(),
            steps_per_day,
            ensemble,
            out: args.out.clone().or(file.str("out")?.map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(".")),
            threads,
            r_s,
            ttp_prime: args.ttp_prime || file.bool("ttp-prime")?.unwrap_or(false),
            log_every,
        })
    }

    /// Horizon for protocol simulations and benchmarks: explicit flag, else
    /// the optimization horizon when censoring there, else the 3000-day cap.
    pub fn protocol_horizon_days(&self) -> Result<f64, CliError> {
        if let Some(h) = self.horizon_days {
            return Ok(h);
        }
        if self.censor_at_horizon {
            return reference_horizon_days(self.n_0).ok_or_else(|| {
                cfg_err(format!("no reference horizon for n0 = {}; pass --horizon-days", self.n_0))
            });
        }
        Ok(BENCHMARK_CAP_DAYS)
    }

    /// Horizon for optimization: explicit flag, else the reference horizon.
    pub fn optimization_horizon_days(&self) -> Result<f64, CliError> {
        self.horizon_days.or_else(|| reference_horizon_days(self.n_0)).ok_or_else(|| {
            cfg_err(format!("no reference horizon for n0 = {}; pass --horizon-days", self.n_0))
        })
    }
}
