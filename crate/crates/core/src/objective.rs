//! Running costs on the tumor size and the ensemble-averaged functional.

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleMeasure;
use crate::error::{Error, Result};
use crate::simulate::{initial_state, rollout, ControlSchedule, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostTag {
    /// `ℓ(n) = n - n_0`.
    Linear,
    /// `ℓ(n) = sqrt(1 + (n - n_0)^2) - 1 + (n - n_0)`: growth above `n_0`
    /// costs more than the same shrinkage earns.
    Hyperbolic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostKind {
    pub tag: CostTag,
    pub n_0: f64,
}

impl CostKind {
    pub fn new(tag: CostTag, n_0: f64) -> Result<Self> {
        if !(n_0 > 0.0 && n_0 < 1.0) {
            return Err(Error::invalid(format!("n_0 = {n_0} outside (0, 1)")));
        }
        Ok(CostKind { tag, n_0 })
    }

    pub fn linear(n_0: f64) -> Result<Self> {
        Self::new(CostTag::Linear, n_0)
    }

    pub fn hyperbolic(n_0: f64) -> Result<Self> {
        Self::new(CostTag::Hyperbolic, n_0)
    }

    #[inline]
    pub fn value(&self, n: f64) -> f64 {
        let d = n - self.n_0;
        match self.tag {
            CostTag::Linear => d,
            CostTag::Hyperbolic => (1.0 + d * d).sqrt() - 1.0 + d,
        }
    }

    /// `ℓ'(n)`.
    #[inline]
    pub fn derivative(&self, n: f64) -> f64 {
        match self.tag {
            CostTag::Linear => 1.0,
            CostTag::Hyperbolic => {
                let d = n - self.n_0;
                d / (1.0 + d * d).sqrt() + 1.0
            }
        }
    }
}

pub fn running_cost(kind: &CostKind, n: f64) -> f64 {
    kind.value(n)
}

/// Left-endpoint rectangle rule over the control steps; the final node
/// carries no cost. This is exactly the discrete map differentiated by
/// [`crate::gradient::adjoint_gradient`].
pub(crate) fn functional_raw(ensemble: &EnsembleMeasure, kind: &CostKind, grid: &TimeGrid, controls: &[f64]) -> Result<f64> {
    let dt = grid.step();
    let last = controls.len();
    ensemble.weighted_mean(|_, p| {
        let x0 = initial_state(p, kind.n_0)?;
        let mut acc = 0.0;
        rollout(p, x0, dt, controls, |k, x| {
            if k < last {
                acc += kind.value(x.n());
            }
        })?;
        Ok(dt * acc)
    })
}

/// `J_N(u) = Σ_θ w_θ Σ_k Δτ ℓ(n_k^θ)`.
pub fn evaluate_functional(ensemble: &EnsembleMeasure, kind: &CostKind, u: &ControlSchedule) -> Result<f64> {
    functional_raw(ensemble, kind, u.grid(), u.values())
}
