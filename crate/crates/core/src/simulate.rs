//! Explicit Euler rollouts, therapy protocols and time-to-progression.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{truncated_fields, TumorParams, TumorState};
use crate::ensemble::EnsembleMeasure;
use crate::error::{Error, Result};

/// Progression threshold relative to the initial size.
pub const PROGRESSION_FACTOR: f64 = 1.2;
/// Adaptive therapies stop treating once the tumor has halved.
pub const HALVING_FACTOR: f64 = 0.5;

/// Uniform Euler grid in non-dimensional time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    step: f64,
    n_steps: usize,
    r_s: f64,
    days_per_step: f64,
}

impl TimeGrid {
    pub fn new(step: f64, n_steps: usize, r_s: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::invalid(format!("time step must be positive, got {step}")));
        }
        if !(r_s > 0.0) || !r_s.is_finite() {
            return Err(Error::invalid(format!("r_S must be positive, got {r_s}")));
        }
        if n_steps == 0 {
            return Err(Error::invalid("grid needs at least one step"));
        }
        Ok(TimeGrid { step, n_steps, r_s, days_per_step: step / r_s })
    }

    /// Grid covering `horizon_days` with `steps_per_day` Euler nodes per day.
    pub fn from_days(horizon_days: f64, steps_per_day: u32, r_s: f64) -> Result<Self> {
        if !(horizon_days > 0.0) || !horizon_days.is_finite() {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon_days}")));
        }
        if steps_per_day == 0 {
            return Err(Error::invalid("steps per day must be positive"));
        }
        let n_steps = (horizon_days * steps_per_day as f64).round() as usize;
        let mut g = TimeGrid::new(r_s / steps_per_day as f64, n_steps, r_s)?;
        g.days_per_step = 1.0 / steps_per_day as f64;
        Ok(g)
    }

    /// Non-dimensional step `Δτ`.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn r_s(&self) -> f64 {
        self.r_s
    }

    /// Non-dimensional horizon `T = Δτ · n_steps`.
    pub fn horizon(&self) -> f64 {
        self.step * self.n_steps as f64
    }

    pub fn days_per_step(&self) -> f64 {
        self.days_per_step
    }

    pub fn horizon_days(&self) -> f64 {
        self.day(self.n_steps)
    }

    /// Day of node `k`.
    pub fn day(&self, k: usize) -> f64 {
        k as f64 * self.days_per_step
    }

    /// Same step size and length, up to rounding in the step.
    pub fn compatible(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps && (self.step - other.step).abs() <= 1e-12 * self.step
    }
}

/// Piecewise-constant control; `values[k]` acts on `[kΔτ, (k+1)Δτ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl ControlSchedule {
    /// Admissible schedule: one value in `[0, 1]` per step.
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_steps {
            return Err(Error::invalid(format!(
                "schedule has {} values for {} steps",
                values.len(),
                grid.n_steps
            )));
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invalid(format!("control value {v} at step {k} outside [0, 1]")));
        }
        Ok(ControlSchedule { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.n_steps])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `{"step_days": .., "values": [..]}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ScheduleFile {
            step_days: self.grid.days_per_step,
            values: self.values.clone(),
        })
        .expect("schedule serializes")
    }

    /// Parses the JSON schedule format; the grid is rebuilt from `step_days`,
    /// the number of values and `r_s`.
    pub fn from_json(text: &str, r_s: f64) -> Result<Self> {
        let f: ScheduleFile = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("schedule JSON: {e}")))?;
        if !(f.step_days > 0.0) {
            return Err(Error::invalid("step_days must be positive"));
        }
        let mut grid = TimeGrid::new(f.step_days * r_s, f.values.len(), r_s)?;
        grid.days_per_step = f.step_days;
        Self::new(grid, f.values)
    }
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    step_days: f64,
    values: Vec<f64>,
}

/// States at all `n_steps + 1` nodes plus the control applied on each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<TumorState>,
    pub applied_control: Vec<f64>,
}

impl Trajectory {
    pub fn totals(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(TumorState::n)
    }

    /// CSV with columns `day,s,r,n,u`. The final node has no control step,
    /// so its `u` field is left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "day,s,r,n,u")?;
        for (k, x) in self.states.iter().enumerate() {
            let day = self.grid.day(k);
            match self.applied_control.get(k) {
                Some(u) => writeln!(w, "{day},{},{},{},{u}", x.s, x.r, x.n())?,
                None => writeln!(w, "{day},{},{},{},", x.s, x.r, x.n())?,
            }
        }
        Ok(())
    }
}

/// Cauchy datum: the resistant share `f_0` of an initial size `n_0`.
pub fn initial_state(p: &TumorParams, n_0: f64) -> Result<TumorState> {
    if !(n_0 > 0.0 && n_0 < 1.0) {
        return Err(Error::invalid(format!("n_0 = {n_0} outside (0, 1)")));
    }
    Ok(TumorState::new((1.0 - p.f_0) * n_0, p.f_0 * n_0))
}

/// One explicit Euler step of the truncated control-affine system.
#[inline]
pub fn euler_step(p: &TumorParams, x: TumorState, u: f64, dt: f64) -> TumorState {
    let (f0, f1) = truncated_fields(p, x);
    TumorState::new(x.s + dt * (f0.x + f1.x * u), x.r + dt * (f0.y + f1.y * u))
}

/// Rolls out `controls` from `x0`, calling `visit(k, x_k)` at every node
/// `k = 0..=controls.len()`. Controls are not range-checked, which lets
/// finite differences probe just outside the admissible box.
pub(crate) fn rollout<F>(p: &TumorParams, x0: TumorState, dt: f64, controls: &[f64], mut visit: F) -> Result<()>
where
    F: FnMut(usize, TumorState),
{
    let mut x = x0;
    visit(0, x);
    for (k, &u) in controls.iter().enumerate() {
        x = euler_step(p, x, u, dt);
        if !x.is_finite() {
            return Err(Error::NumericalFailure {
                step: k + 1,
                reason: format!("non-finite state {x:?}"),
            });
        }
        visit(k + 1, x);
    }
    Ok(())
}

pub(crate) fn rollout_states(p: &TumorParams, x0: TumorState, dt: f64, controls: &[f64], out: &mut Vec<TumorState>) -> Result<()> {
    out.clear();
    out.reserve(controls.len() + 1);
    rollout(p, x0, dt, controls, |_, x| out.push(x))
}

pub fn euler_forward(p: &TumorParams, x0: TumorState, u: &ControlSchedule) -> Result<Trajectory> {
    let mut states = Vec::new();
    rollout_states(p, x0, u.grid.step, &u.values, &mut states)?;
    Ok(Trajectory {
        grid: u.grid,
        states,
        applied_control: u.values.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// Maximal tolerated dose, `u ≡ 1`.
    Mtd,
    /// Treat until `n <= n_0/2`, pause until `n >= n_0`, repeat.
    OnOffAt,
    /// Pause until `n >= 1.2 n_0`, treat until `n <= n_0/2`, repeat.
    OffOnAt,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Mtd => "MTD",
            Protocol::OnOffAt => "On-Off AT",
            Protocol::OffOnAt => "Off-On AT",
        }
    }
}

/// Feedback state machine: the guard is checked at every node before the
/// control for the following step is chosen.
#[derive(Debug, Clone, Copy)]
struct ProtocolController {
    protocol: Protocol,
    n_0: f64,
    treating: bool,
}

impl ProtocolController {
    fn new(protocol: Protocol, n_0: f64) -> Self {
        let treating = !matches!(protocol, Protocol::OffOnAt);
        ProtocolController { protocol, n_0, treating }
    }

    #[inline]
    fn control(&mut self, n: f64) -> f64 {
        let low = HALVING_FACTOR * self.n_0;
        match self.protocol {
            Protocol::Mtd => return 1.0,
            Protocol::OnOffAt => {
                if self.treating && n <= low {
                    self.treating = false;
                } else if !self.treating && n >= self.n_0 {
                    self.treating = true;
                }
            }
            Protocol::OffOnAt => {
                if !self.treating && n >= PROGRESSION_FACTOR * self.n_0 {
                    self.treating = true;
                } else if self.treating && n <= low {
                    self.treating = false;
                }
            }
        }
        if self.treating {
            1.0
        } else {
            0.0
        }
    }
}

fn simulate_protocol<F>(p: &TumorParams, n_0: f64, protocol: Protocol, grid: &TimeGrid, mut visit: F) -> Result<()>
where
    F: FnMut(usize, TumorState, Option<f64>),
{
    let mut x = initial_state(p, n_0)?;
    let mut ctl = ProtocolController::new(protocol, n_0);
    for k in 0..grid.n_steps {
        let u = ctl.control(x.n());
        visit(k, x, Some(u));
        x = euler_step(p, x, u, grid.step);
        if !x.is_finite() {
            return Err(Error::NumericalFailure {
                step: k + 1,
                reason: format!("non-finite state {x:?}"),
            });
        }
    }
    visit(grid.n_steps, x, None);
    Ok(())
}

pub fn run_protocol(p: &TumorParams, n_0: f64, protocol: Protocol, grid: &TimeGrid) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(grid.n_steps + 1);
    let mut applied = Vec::with_capacity(grid.n_steps);
    simulate_protocol(p, n_0, protocol, grid, |_, x, u| {
        states.push(x);
        if let Some(u) = u {
            applied.push(u);
        }
    })?;
    Ok(Trajectory { grid: *grid, states, applied_control: applied })
}

/// Per-member time-to-progression.
///
/// `ttp_days` is the first node with `n >= 1.2 n_0`. `ttp_prime_days` is the
/// first node of the final run of nodes with `n >= 1.2 n_0`, i.e. the node
/// right after the last one still below the threshold; it coincides with
/// `ttp_days` for single crossings. Either is reported as the horizon when
/// the event does not happen on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeRecord {
    pub member_index: usize,
    pub ttp_days: f64,
    pub ttp_prime_days: f64,
    /// The tumor has not progressed at the horizon (TTP' censored).
    pub censored: bool,
    /// The threshold was never reached (TTP censored).
    pub ttp_censored: bool,
}

#[derive(Debug, Clone, Copy)]
struct OutcomeTracker {
    threshold: f64,
    first_at_or_above: Option<usize>,
    last_below: Option<usize>,
    final_below: bool,
}

impl OutcomeTracker {
    fn new(n_0: f64) -> Self {
        OutcomeTracker {
            threshold: PROGRESSION_FACTOR * n_0,
            first_at_or_above: None,
            last_below: None,
            final_below: true,
        }
    }

    #[inline]
    fn observe(&mut self, k: usize, n: f64) {
        if n >= self.threshold {
            if self.first_at_or_above.is_none() {
                self.first_at_or_above = Some(k);
            }
            self.final_below = false;
        } else {
            self.last_below = Some(k);
            self.final_below = true;
        }
    }

    fn finish(&self, grid: &TimeGrid, member_index: usize) -> OutcomeRecord {
        let horizon = grid.horizon_days();
        let (ttp_days, ttp_censored) = match self.first_at_or_above {
            Some(k) => (grid.day(k), false),
            None => (horizon, true),
        };
        let ttp_prime_days = if self.final_below {
            horizon
        } else {
            self.last_below.map_or(0.0, |k| grid.day(k + 1))
        };
        OutcomeRecord {
            member_index,
            ttp_days,
            ttp_prime_days,
            censored: self.final_below,
            ttp_censored,
        }
    }
}

pub fn compute_outcome(traj: &Trajectory, n_0: f64) -> OutcomeRecord {
    let mut t = OutcomeTracker::new(n_0);
    for (k, x) in traj.states.iter().enumerate() {
        t.observe(k, x.n());
    }
    t.finish(&traj.grid, 0)
}

/// What a benchmark applies to every member.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Protocol(Protocol),
    Schedule(ControlSchedule),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Protocol(p) => p.name(),
            Policy::Schedule(_) => "schedule",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchmarkSummary {
    pub ttp: Stats,
    pub ttp_prime: Stats,
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub outcomes: Vec<OutcomeRecord>,
    pub summary: BenchmarkSummary,
}

fn member_outcome(p: &TumorParams, index: usize, n_0: f64, policy: &Policy, grid: &TimeGrid) -> Result<OutcomeRecord> {
    let mut t = OutcomeTracker::new(n_0);
    match policy {
        Policy::Protocol(proto) => simulate_protocol(p, n_0, *proto, grid, |k, x, _| t.observe(k, x.n()))?,
        Policy::Schedule(s) => {
            let x0 = initial_state(p, n_0)?;
            rollout(p, x0, grid.step, &s.values, |k, x| t.observe(k, x.n()))?
        }
    }
    Ok(t.finish(grid, index))
}

/// Simulates every member under `policy` and summarises TTP and TTP'.
///
/// For a schedule policy the schedule's grid must match `grid`.
pub fn benchmark(ensemble: &EnsembleMeasure, n_0: f64, policy: &Policy, grid: &TimeGrid) -> Result<BenchmarkResult> {
    if !(n_0 > 0.0 && n_0 < 1.0) {
        return Err(Error::invalid(format!("n_0 = {n_0} outside (0, 1)")));
    }
    if let Policy::Schedule(s) = policy {
        if !s.grid.compatible(grid) {
            return Err(Error::invalid(format!(
                "schedule grid ({} steps of {}) does not match the benchmark grid ({} steps of {})",
                s.grid.n_steps, s.grid.step, grid.n_steps, grid.step
            )));
        }
    }
    let outcomes: Vec<OutcomeRecord> = ensemble
        .members()
        .par_iter()
        .enumerate()
        .map(|(i, p)| member_outcome(p, i, n_0, policy, grid))
        .collect::<Result<_>>()?;
    let summary = summarize(ensemble, &outcomes);
    Ok(BenchmarkResult { outcomes, summary })
}

/// Max/min/weighted-mean of TTP and TTP', reduced in member order.
pub fn summarize(ensemble: &EnsembleMeasure, outcomes: &[OutcomeRecord]) -> BenchmarkSummary {
    let stats = |f: &dyn Fn(&OutcomeRecord) -> f64| {
        let mut s = Stats { max: f64::NEG_INFINITY, min: f64::INFINITY, mean: 0.0 };
        for (o, w) in outcomes.iter().zip(ensemble.weights()) {
            let v = f(o);
            s.max = s.max.max(v);
            s.min = s.min.min(v);
            s.mean += w * v;
        }
        s
    };
    BenchmarkSummary {
        ttp: stats(&|o| o.ttp_days),
        ttp_prime: stats(&|o| o.ttp_prime_days),
        censored: outcomes.iter().filter(|o| o.censored).count(),
    }
}

/// CSV with columns
/// `member_index,d_D,d_T,r_R,f_0,ttp_days,ttp_prime_days,censored`.
pub fn write_outcomes_csv<W: Write>(ensemble: &EnsembleMeasure, outcomes: &[OutcomeRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "member_index,d_D,d_T,r_R,f_0,ttp_days,ttp_prime_days,censored")?;
    for o in outcomes {
        let p = ensemble.members()[o.member_index];
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            o.member_index, p.d_d, p.d_t, p.r_r, p.f_0, o.ttp_days, o.ttp_prime_days, o.censored
        )?;
    }
    Ok(())
}
