//! Gradient of the discretized ensemble functional.
//!
//! The production route is the discrete adjoint of the Euler scheme. With
//! `x_{k+1} = x_k + Δτ (F0(x_k) + F1(x_k) u_k)` and
//! `J = Σ_{k<K} Δτ ℓ(n_k)`, the covector recursion
//!
//! ```text
//! λ_K = 0
//! λ_k = Δτ ℓ'(n_k) (1, 1) + λ_{k+1} (I + Δτ (A0(x_k) + A1(x_k) u_k))
//! ∂J/∂u_k = λ_{k+1} · Δτ F1(x_k)
//! ```
//!
//! is the exact reverse-mode derivative, and `λ_k` approximates the
//! continuous adjoint `g(τ_k)`. Two independent routes are kept for
//! verification: forward propagation of the variational matrix, and central
//! finite differences of the functional.

use std::io::{self, Write};

use crate::dynamics::{field_jacobians, truncated_fields, Mat2, TumorParams, TumorState, Vec2};
use crate::ensemble::EnsembleMeasure;
use crate::error::{Error, Result};
use crate::objective::{functional_raw, CostKind};
use crate::simulate::{initial_state, rollout, rollout_states, ControlSchedule, TimeGrid};

/// Partial derivatives `∂J_N/∂u_k`, one per control step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Riesz representative in `L^2(0, T)`: the partials divided by `Δτ`.
    pub fn l2_representative(&self) -> Vec<f64> {
        let dt = self.grid.step();
        self.values.iter().map(|v| v / dt).collect()
    }

    /// CSV `day,value` with the step's start day.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "day,value")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{v}", self.grid.day(k))?;
        }
        Ok(())
    }
}

/// Covector of the adjoint recursion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdjointState {
    pub g: Vec2,
}

/// Backward pass for one member over stored states. Adds `weight · ∂J/∂u_k`
/// into `grad` and returns the member's cost. When `adjoints` is given it
/// receives `λ_0..=λ_K`.
fn member_adjoint(
    p: &TumorParams,
    kind: &CostKind,
    dt: f64,
    controls: &[f64],
    states: &[TumorState],
    weight: f64,
    grad: &mut [f64],
    mut adjoints: Option<&mut Vec<AdjointState>>,
) -> f64 {
    let k_max = controls.len();
    let mut lambda = Vec2::ZERO;
    if let Some(a) = adjoints.as_deref_mut() {
        a.clear();
        a.resize(k_max + 1, AdjointState::default());
    }
    let mut cost = 0.0;
    for k in (0..k_max).rev() {
        let x = states[k];
        let u = controls[k];
        let (_, f1) = truncated_fields(p, x);
        grad[k] += weight * dt * lambda.dot(f1);
        let (a0, a1) = field_jacobians(p, x);
        let step = Mat2::IDENTITY + (a0 + a1.scale(u)).scale(dt);
        let n = x.n();
        cost += kind.value(n);
        let l = dt * kind.derivative(n);
        lambda = Vec2::new(l, l) + lambda.vec_mul(&step);
        if let Some(a) = adjoints.as_deref_mut() {
            a[k] = AdjointState { g: lambda };
        }
    }
    dt * cost
}

fn check_controls(grid: &TimeGrid, controls: &[f64]) -> Result<()> {
    if controls.len() != grid.n_steps() {
        return Err(Error::invalid(format!(
            "{} control values for {} steps",
            controls.len(),
            grid.n_steps()
        )));
    }
    Ok(())
}

/// `J_N(u)` and its gradient in one forward/backward sweep over the ensemble.
/// Accepts any finite control values (the truncated fields extend the
/// functional off the admissible box).
pub fn value_and_gradient_raw(
    ensemble: &EnsembleMeasure,
    kind: &CostKind,
    grid: &TimeGrid,
    controls: &[f64],
) -> Result<(f64, GradientVector)> {
    check_controls(grid, controls)?;
    let dt = grid.step();
    let k = controls.len();
    let parts = ensemble.map_chunks(|range| {
        let mut grad = vec![0.0; k];
        let mut states = Vec::with_capacity(k + 1);
        let mut value = 0.0;
        for i in range {
            let p = &ensemble.members()[i];
            let w = ensemble.weights()[i];
            rollout_states(p, initial_state(p, kind.n_0)?, dt, controls, &mut states)?;
            value += w * member_adjoint(p, kind, dt, controls, &states, w, &mut grad, None);
        }
        Ok((value, grad))
    })?;
    let mut value = 0.0;
    let mut grad = vec![0.0; k];
    for (v, g) in parts {
        value += v;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((value, GradientVector { grid: *grid, values: grad }))
}

pub fn value_and_gradient(ensemble: &EnsembleMeasure, kind: &CostKind, u: &ControlSchedule) -> Result<(f64, GradientVector)> {
    value_and_gradient_raw(ensemble, kind, u.grid(), u.values())
}

/// Discrete adjoint gradient of `J_N` at an admissible schedule.
pub fn adjoint_gradient(ensemble: &EnsembleMeasure, kind: &CostKind, u: &ControlSchedule) -> Result<GradientVector> {
    Ok(value_and_gradient(ensemble, kind, u)?.1)
}

/// Adjoint covectors `λ_0..=λ_K` of a single member.
pub fn adjoint_states(p: &TumorParams, kind: &CostKind, u: &ControlSchedule) -> Result<Vec<AdjointState>> {
    let dt = u.grid().step();
    let mut states = Vec::new();
    rollout_states(p, initial_state(p, kind.n_0)?, dt, u.values(), &mut states)?;
    let mut grad = vec![0.0; u.values().len()];
    let mut out = Vec::new();
    member_adjoint(p, kind, dt, u.values(), &states, 1.0, &mut grad, Some(&mut out));
    Ok(out)
}

/// Gradient of a single member through the forward variational matrix.
///
/// `M_0 = I`, `M_{k+1} = (I + Δτ(A0 + A1 u_k)) M_k`. A perturbation of `u_j`
/// moves `x_{j+1}` by `Δτ F1(x_j)` and every later node by
/// `M_k M_{j+1}^{-1} Δτ F1(x_j)`, so after swapping the sums
///
/// ```text
/// ∂J/∂u_j = (Σ_{k>j} Δτ ℓ'(n_k) (1,1) M_k) M_{j+1}^{-1} Δτ F1(x_j).
/// ```
///
/// Meant for small verification problems; it shares no code with the
/// adjoint recursion beyond the field Jacobians.
pub fn variational_gradient(p: &TumorParams, kind: &CostKind, u: &ControlSchedule) -> Result<GradientVector> {
    let grid = *u.grid();
    let dt = grid.step();
    let controls = u.values();
    let k_max = controls.len();
    let mut states = Vec::with_capacity(k_max + 1);
    rollout(p, initial_state(p, kind.n_0)?, dt, controls, |_, x| states.push(x))?;

    let mut m = Vec::with_capacity(k_max + 1);
    m.push(Mat2::IDENTITY);
    for k in 0..k_max {
        let (a0, a1) = field_jacobians(p, states[k]);
        let step = Mat2::IDENTITY + (a0 + a1.scale(controls[k])).scale(dt);
        let next = step.matmul(&m[k]);
        if !next.is_finite() {
            return Err(Error::NumericalFailure { step: k + 1, reason: "variational matrix not finite".into() });
        }
        m.push(next);
    }

    // suffix[j] = Σ_{k=j}^{K-1} Δτ ℓ'(n_k) (1,1) M_k
    let mut suffix = vec![Vec2::ZERO; k_max + 1];
    for k in (0..k_max).rev() {
        let l = dt * kind.derivative(states[k].n());
        let row = Vec2::new(l, l).vec_mul(&m[k]);
        suffix[k] = suffix[k + 1] + row;
    }

    let mut values = Vec::with_capacity(k_max);
    for j in 0..k_max {
        let inv = m[j + 1].inverse().ok_or_else(|| Error::NumericalFailure {
            step: j + 1,
            reason: "singular variational matrix".into(),
        })?;
        let (_, f1) = truncated_fields(p, states[j]);
        let dx = inv.mul_vec(dt * f1);
        values.push(suffix[j + 1].dot(dx));
    }
    Ok(GradientVector { grid, values })
}

/// Central differences of `J_N`, one control entry at a time.
pub fn finite_difference_gradient(
    ensemble: &EnsembleMeasure,
    kind: &CostKind,
    u: &ControlSchedule,
    h: f64,
) -> Result<GradientVector> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let grid = *u.grid();
    let mut probe = u.values().to_vec();
    let mut values = Vec::with_capacity(probe.len());
    for k in 0..probe.len() {
        let base = probe[k];
        probe[k] = base + h;
        let plus = functional_raw(ensemble, kind, &grid, &probe)?;
        probe[k] = base - h;
        let minus = functional_raw(ensemble, kind, &grid, &probe)?;
        probe[k] = base;
        values.push((plus - minus) / (2.0 * h));
    }
    Ok(GradientVector { grid, values })
}
