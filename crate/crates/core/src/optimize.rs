//! Projections onto the admissible box and its tangent cone, and fixed-step
//! projected gradient descent.

use std::io::{self, Write};

use crate::ensemble::EnsembleMeasure;
use crate::error::{Error, Result};
use crate::gradient::{value_and_gradient, GradientVector};
use crate::objective::CostKind;
use crate::simulate::{ControlSchedule, TimeGrid};

/// Which representation of the gradient the update subtracts. The default
/// is [`GradientScaling::L2`]; with the raw partials the step `η = 0.125`
/// hardly moves the control within 500 iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientScaling {
    /// Partial derivatives `∂J_N/∂u_k` of the discretized functional.
    Discrete,
    /// `L^2` representative, `∂J_N/∂u_k / Δτ`.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig {
    pub eta: f64,
    pub iterations: usize,
    pub initial_value: f64,
    /// Progress callback cadence in iterations; 0 disables it.
    pub log_every: usize,
    pub scaling: GradientScaling,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            eta: 0.125,
            iterations: 500,
            initial_value: 0.5,
            log_every: 0,
            scaling: GradientScaling::L2,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.initial_value) {
            return Err(Error::invalid(format!("initial control {} outside [0, 1]", self.initial_value)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrace {
    /// `J_N(u_k)` for `k = 0..iterations`, then the value at the final iterate.
    pub values: Vec<f64>,
    /// Sup norm of the gradient used at each iteration.
    pub grad_norms: Vec<f64>,
    pub schedule: ControlSchedule,
}

impl DescentTrace {
    /// CSV `iteration,J,grad_inf_norm`; the last row has no gradient.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "iteration,J,grad_inf_norm")?;
        for (i, j) in self.values.iter().enumerate() {
            match self.grad_norms.get(i) {
                Some(g) => writeln!(w, "{i},{j},{g}")?,
                None => writeln!(w, "{i},{j},")?,
            }
        }
        Ok(())
    }
}

/// `clamp(v, 0, 1)` entrywise.
pub fn project_box(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.min(1.0).max(0.0)).collect()
}

/// Projection onto the tangent cone of the box at `u`: only inward
/// directions survive where `u` sits exactly on a bound.
pub fn project_tangent_cone(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!("lengths differ: {} vs {}", u.len(), v.len())));
    }
    Ok(u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| {
            if ui == 0.0 {
                vi.max(0.0)
            } else if ui == 1.0 {
                vi.min(0.0)
            } else {
                vi
            }
        })
        .collect())
}

fn step_values(u: &[f64], direction: &[f64], eta: f64) -> Vec<f64> {
    let raw: Vec<f64> = u.iter().zip(direction).map(|(a, g)| a - eta * g).collect();
    project_box(&raw)
}

/// `Π_box(u - η ∇J)` with the gradient exactly as given.
pub fn descent_step(u: &ControlSchedule, grad: &GradientVector, eta: f64) -> Result<ControlSchedule> {
    if !u.grid().compatible(&grad.grid) || grad.values.len() != u.values().len() {
        return Err(Error::invalid("gradient and schedule grids differ"));
    }
    ControlSchedule::new(*u.grid(), step_values(u.values(), &grad.values, eta))
}

/// Projected gradient descent from a constant initial guess.
///
/// `progress(iteration, J)` is invoked every `cfg.log_every` iterations.
pub fn optimize_with<P>(
    ensemble: &EnsembleMeasure,
    kind: &CostKind,
    grid: &TimeGrid,
    cfg: &DescentConfig,
    mut progress: P,
) -> Result<DescentTrace>
where
    P: FnMut(usize, f64),
{
    cfg.validate()?;
    let mut u = ControlSchedule::constant(*grid, cfg.initial_value)?;
    let mut values = Vec::with_capacity(cfg.iterations + 1);
    let mut grad_norms = Vec::with_capacity(cfg.iterations);
    let dt = grid.step();
    for it in 0..cfg.iterations {
        let (j, grad) = value_and_gradient(ensemble, kind, &u).map_err(|e| match e {
            Error::NumericalFailure { step, reason } => Error::NumericalFailure {
                step,
                reason: format!("iteration {it}: {reason}"),
            },
            other => other,
        })?;
        let direction = match cfg.scaling {
            GradientScaling::Discrete => grad.values,
            GradientScaling::L2 => grad.values.iter().map(|g| g / dt).collect(),
        };
        grad_norms.push(direction.iter().fold(0.0f64, |m, g| m.max(g.abs())));
        values.push(j);
        if cfg.log_every > 0 && it % cfg.log_every == 0 {
            progress(it, j);
        }
        u = ControlSchedule::new(*grid, step_values(u.values(), &direction, cfg.eta))?;
    }
    values.push(crate::objective::evaluate_functional(ensemble, kind, &u)?);
    Ok(DescentTrace { values, grad_norms, schedule: u })
}

pub fn optimize(ensemble: &EnsembleMeasure, kind: &CostKind, grid: &TimeGrid, cfg: &DescentConfig) -> Result<DescentTrace> {
    optimize_with(ensemble, kind, grid, cfg, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TumorParams;
    use crate::ensemble::paper_ensemble;
    use proptest::prelude::*;

    #[test]
    fn box_projection_examples() {
        assert_eq!(project_box(&[1.7, -0.3, 0.4]), vec![1.0, 0.0, 0.4]);
    }

    #[test]
    fn cone_projection_examples() {
        let u = [0.0, 1.0, 0.5, 0.0, 1.0];
        let v = [-2.0, -2.0, 3.0, 2.0, 2.0];
        assert_eq!(project_tangent_cone(&u, &v).unwrap(), vec![0.0, -2.0, 3.0, 2.0, 0.0]);
        assert!(project_tangent_cone(&u, &v[..3]).is_err());
    }

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.01, n, 0.027).unwrap()
    }

    #[test]
    fn step_with_zero_gradient_is_fixed_point() {
        let u = ControlSchedule::new(grid(3), vec![0.0, 0.3, 1.0]).unwrap();
        let g = GradientVector { grid: grid(3), values: vec![0.0; 3] };
        assert_eq!(descent_step(&u, &g, 0.125).unwrap(), u);
    }

    #[test]
    fn clamp_engages() {
        let u = ControlSchedule::constant(grid(4), 0.5).unwrap();
        let g = GradientVector { grid: grid(4), values: vec![5.0; 4] };
        assert!(descent_step(&u, &g, 0.125).unwrap().values().iter().all(|&v| v == 0.0));
    }

    fn control_entry() -> impl Strategy<Value = f64> {
        prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64]
    }

    proptest! {
        #[test]
        fn cone_output_respects_sign_constraints(
            pairs in proptest::collection::vec((control_entry(), -5.0..5.0f64), 1..40)
        ) {
            let (u, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let p = project_tangent_cone(&u, &v).unwrap();
            for ((ui, vi), pi) in u.iter().zip(&v).zip(&p) {
                if *ui == 0.0 { prop_assert!(*pi >= 0.0); }
                if *ui == 1.0 { prop_assert!(*pi <= 0.0); }
                if *ui > 0.0 && *ui < 1.0 { prop_assert_eq!(pi, vi); }
            }
        }

        #[test]
        fn projected_step_ignores_cone_projection(
            pairs in proptest::collection::vec((control_entry(), -5.0..5.0f64), 1..40),
            eta in 1e-4..2.0f64,
        ) {
            let (u, g): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let neg: Vec<f64> = g.iter().map(|x| -x).collect();
            let cone = project_tangent_cone(&u, &neg).unwrap();
            let lhs = step_values(&u, &g, eta);
            let rhs = project_box(&u.iter().zip(&cone).map(|(a, c)| a + eta * c).collect::<Vec<_>>());
            prop_assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn zero_iterations_returns_initial_guess() {
        let e = paper_ensemble();
        let g = TimeGrid::from_days(20.0, 8, 0.027).unwrap();
        let cfg = DescentConfig { iterations: 0, ..Default::default() };
        let t = optimize(&e, &CostKind::hyperbolic(0.5).unwrap(), &g, &cfg).unwrap();
        assert!(t.schedule.values().iter().all(|&v| v == 0.5));
        assert_eq!(t.values.len(), 1);
        assert!(t.grad_norms.is_empty());
    }

    #[test]
    fn iterates_stay_admissible_and_descend() {
        let p = TumorParams::new(1.5, 0.0, 0.7, 0.02).unwrap();
        let e = EnsembleMeasure::single(p).unwrap();
        let g = TimeGrid::from_days(100.0, 8, 0.027).unwrap();
        let cfg = DescentConfig { iterations: 30, ..Default::default() };
        let t = optimize(&e, &CostKind::linear(0.5).unwrap(), &g, &cfg).unwrap();
        assert!(t.schedule.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(t.values.last().unwrap() < &t.values[0]);
        assert_eq!(t.values.len(), 31);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = DescentConfig { eta: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = DescentConfig { initial_value: 1.5, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn trace_csv() {
        let g = grid(2);
        let t = DescentTrace {
            values: vec![3.0, 2.5],
            grad_norms: vec![0.25],
            schedule: ControlSchedule::constant(g, 0.5).unwrap(),
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,J,grad_inf_norm\n0,3,0.25\n1,2.5,\n");
    }
}
