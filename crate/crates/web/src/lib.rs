//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every exported function takes plain numbers and strings and returns a
//! JSON document; the `*_json` functions hold the logic so they can be
//! exercised natively.

use serde::Serialize;
use tumor_ensemble::ensemble::paper_ensemble;
use tumor_ensemble::gradient::value_and_gradient;
use tumor_ensemble::objective::CostTag;
use tumor_ensemble::simulate::{
    benchmark, compute_outcome, euler_forward, initial_state, run_protocol, BenchmarkSummary, Policy, Protocol,
    Trajectory,
};
use tumor_ensemble::{
    ControlSchedule, CostKind, EnsembleMeasure, TimeGrid, TumorParams, DEFAULT_R_S, DEFAULT_STEPS_PER_DAY,
};
use wasm_bindgen::prelude::*;

const D_D: f64 = tumor_ensemble::ensemble::PAPER_D_D;
const D_T: f64 = tumor_ensemble::ensemble::PAPER_D_T;

/// The policies the page offers. `Delayed` is the open-loop schedule that
/// withholds the drug for `delay_days` and then treats continuously.
#[derive(Debug, Clone, Copy, PartialEq)]
enum DemoPolicy {
    Protocol(Protocol),
    Delayed(f64),
}

fn parse_policy(name: &str, delay_days: f64) -> Result<DemoPolicy, String> {
    match name {
        "mtd" => Ok(DemoPolicy::Protocol(Protocol::Mtd)),
        "onoff-at" => Ok(DemoPolicy::Protocol(Protocol::OnOffAt)),
        "offon-at" => Ok(DemoPolicy::Protocol(Protocol::OffOnAt)),
        "delayed" if delay_days >= 0.0 => Ok(DemoPolicy::Delayed(delay_days)),
        "delayed" => Err(format!("delay must be non-negative, got {delay_days}")),
        other => Err(format!("unknown policy {other}")),
    }
}

fn grid(horizon_days: f64) -> Result<TimeGrid, String> {
    TimeGrid::from_days(horizon_days, DEFAULT_STEPS_PER_DAY, DEFAULT_R_S).map_err(|e| e.to_string())
}

fn delayed_schedule(grid: TimeGrid, delay_days: f64) -> Result<ControlSchedule, String> {
    let values = (0..grid.n_steps())
        .map(|k| if grid.day(k) < delay_days { 0.0 } else { 1.0 })
        .collect();
    ControlSchedule::new(grid, values).map_err(|e| e.to_string())
}

fn member(r_r: f64, f_0: f64) -> Result<TumorParams, String> {
    TumorParams::new(D_D, D_T, r_r, f_0).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct TrajectoryView {
    day: Vec<f64>,
    s: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    u: Vec<f64>,
    ttp_days: f64,
    ttp_prime_days: f64,
    censored: bool,
}

/// Keeps one node per day so the page does not ship tens of thousands of points.
fn view(traj: &Trajectory, n_0: f64) -> TrajectoryView {
    let o = compute_outcome(traj, n_0);
    let stride = DEFAULT_STEPS_PER_DAY as usize;
    let mut v = TrajectoryView {
        day: Vec::new(),
        s: Vec::new(),
        r: Vec::new(),
        n: Vec::new(),
        u: Vec::new(),
        ttp_days: o.ttp_days,
        ttp_prime_days: o.ttp_prime_days,
        censored: o.censored,
    };
    for (k, x) in traj.states.iter().enumerate().step_by(stride) {
        v.day.push(traj.grid.day(k));
        v.s.push(x.s);
        v.r.push(x.r);
        v.n.push(x.n());
        v.u.push(traj.applied_control.get(k).copied().unwrap_or(f64::NAN));
    }
    v
}

/// Trajectory of one member (`d_D = 1.5`, `d_T = 0`) under a policy.
pub fn simulate_json(
    policy: &str,
    n_0: f64,
    r_r: f64,
    f_0: f64,
    horizon_days: f64,
    delay_days: f64,
) -> Result<String, String> {
    let p = member(r_r, f_0)?;
    let g = grid(horizon_days)?;
    let traj = match parse_policy(policy, delay_days)? {
        DemoPolicy::Protocol(proto) => run_protocol(&p, n_0, proto, &g),
        DemoPolicy::Delayed(d) => {
            let x0 = initial_state(&p, n_0).map_err(|e| e.to_string())?;
            euler_forward(&p, x0, &delayed_schedule(g, d)?)
        }
    }
    .map_err(|e| e.to_string())?;
    serde_json::to_string(&view(&traj, n_0)).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct PolicySummary {
    policy: String,
    summary: BenchmarkSummary,
}

/// Every `stride`-th member of the reference 25 x 49 ensemble.
fn thinned_ensemble(stride: usize) -> Result<EnsembleMeasure, String> {
    if stride == 0 {
        return Err("stride must be positive".into());
    }
    let members = paper_ensemble().members().iter().step_by(stride).copied().collect();
    EnsembleMeasure::uniform(members).map_err(|e| e.to_string())
}

/// TTP and TTP' statistics of the three protocols and the delayed start.
pub fn compare_json(n_0: f64, horizon_days: f64, delay_days: f64, stride: usize) -> Result<String, String> {
    let ensemble = thinned_ensemble(stride)?;
    let g = grid(horizon_days)?;
    let policies = [
        ("mtd", Policy::Protocol(Protocol::Mtd)),
        ("onoff-at", Policy::Protocol(Protocol::OnOffAt)),
        ("offon-at", Policy::Protocol(Protocol::OffOnAt)),
        ("delayed", Policy::Schedule(delayed_schedule(g, delay_days)?)),
    ];
    let rows = policies
        .into_iter()
        .map(|(name, policy)| {
            benchmark(&ensemble, n_0, &policy, &g)
                .map(|r| PolicySummary { policy: name.into(), summary: r.summary })
                .map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct GradientView {
    cost: f64,
    day: Vec<f64>,
    gradient: Vec<f64>,
}

/// Ensemble cost of the delayed-start schedule and its L2 gradient, one
/// sample per day.
pub fn gradient_json(cost: &str, n_0: f64, horizon_days: f64, delay_days: f64, stride: usize) -> Result<String, String> {
    let tag = match cost {
        "linear" => CostTag::Linear,
        "hyperbolic" => CostTag::Hyperbolic,
        other => return Err(format!("unknown cost {other}")),
    };
    let kind = CostKind::new(tag, n_0).map_err(|e| e.to_string())?;
    let ensemble = thinned_ensemble(stride)?;
    let g = grid(horizon_days)?;
    let u = delayed_schedule(g, delay_days)?;
    let (j, grad) = value_and_gradient(&ensemble, &kind, &u).map_err(|e| e.to_string())?;
    let l2 = grad.l2_representative();
    let step = DEFAULT_STEPS_PER_DAY as usize;
    let view = GradientView {
        cost: j,
        day: (0..l2.len()).step_by(step).map(|k| g.day(k)).collect(),
        gradient: l2.iter().step_by(step).copied().collect(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn simulate(policy: &str, n0: f64, r_r: f64, f0: f64, horizon_days: f64, delay_days: f64) -> Result<String, JsError> {
    simulate_json(policy, n0, r_r, f0, horizon_days, delay_days).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compare(n0: f64, horizon_days: f64, delay_days: f64, stride: usize) -> Result<String, JsError> {
    compare_json(n0, horizon_days, delay_days, stride).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gradient(cost: &str, n0: f64, horizon_days: f64, delay_days: f64, stride: usize) -> Result<String, JsError> {
    gradient_json(cost, n0, horizon_days, delay_days, stride).map_err(|e| JsError::new(&e))
}
