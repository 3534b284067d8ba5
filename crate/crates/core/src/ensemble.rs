//! Discrete probability measures over [`TumorParams`].

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::TumorParams;
use crate::error::{Error, Result};

/// Members per work unit in parallel reductions. Fixed so that the
/// summation tree does not depend on the thread count.
pub const REDUCTION_CHUNK: usize = 16;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Endpoint-inclusive uniform discretization of an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        let g = GridSpec { lo, hi, count };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo > self.hi {
            return Err(Error::invalid(format!("bad interval [{}, {}]", self.lo, self.hi)));
        }
        if self.count == 0 {
            return Err(Error::invalid("grid needs at least one node"));
        }
        if self.count == 1 && self.lo != self.hi {
            return Err(Error::invalid("a single-node grid requires lo == hi"));
        }
        Ok(())
    }
}

/// Nodes of a marginal discretization, each carrying weight `1 / count`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalNodes {
    pub values: Vec<f64>,
}

impl MarginalNodes {
    pub fn weight(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    pub fn singleton(v: f64) -> Self {
        MarginalNodes { values: vec![v] }
    }
}

/// `count` equispaced nodes from `lo` to `hi`, both included.
pub fn uniform_grid(spec: GridSpec) -> Result<MarginalNodes> {
    spec.validate()?;
    if spec.count == 1 {
        return Ok(MarginalNodes::singleton(spec.lo));
    }
    let h = (spec.hi - spec.lo) / (spec.count - 1) as f64;
    let mut values: Vec<f64> = (0..spec.count).map(|i| spec.lo + i as f64 * h).collect();
    values[spec.count - 1] = spec.hi;
    Ok(MarginalNodes { values })
}

/// `count` nodes `start + i * step`, `i = 0..count`. The upper end of the
/// interval is not reached, as with a half-open range.
pub fn stepped_grid(start: f64, step: f64, count: usize) -> Result<MarginalNodes> {
    if count == 0 || !(step > 0.0) || !start.is_finite() || !step.is_finite() {
        return Err(Error::invalid(format!(
            "bad stepped grid: start={start} step={step} count={count}"
        )));
    }
    Ok(MarginalNodes {
        values: (0..count).map(|i| start + i as f64 * step).collect(),
    })
}

/// Finite-support probability measure. Member order is part of the value:
/// outcome indices and the reduction order both follow it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeasure {
    members: Vec<TumorParams>,
    weights: Vec<f64>,
}

impl EnsembleMeasure {
    pub fn new(members: Vec<TumorParams>, weights: Vec<f64>) -> Result<Self> {
        let m = EnsembleMeasure { members, weights };
        m.validate()?;
        Ok(m)
    }

    /// Equal weights over the given members.
    pub fn uniform(members: Vec<TumorParams>) -> Result<Self> {
        let w = 1.0 / members.len().max(1) as f64;
        let weights = vec![w; members.len()];
        Self::new(members, weights)
    }

    /// Dirac measure on a single member.
    pub fn single(member: TumorParams) -> Result<Self> {
        Self::new(vec![member], vec![1.0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::invalid("ensemble has no members"));
        }
        if self.members.len() != self.weights.len() {
            return Err(Error::invalid(format!(
                "{} members but {} weights",
                self.members.len(),
                self.weights.len()
            )));
        }
        for m in &self.members {
            m.validate()?;
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    pub fn members(&self) -> &[TumorParams] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TumorParams, f64)> + '_ {
        self.members.iter().zip(self.weights.iter().copied())
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Index of the first member matching `r_R` and `f_0` within `tol`.
    pub fn find(&self, r_r: f64, f_0: f64, tol: f64) -> Option<usize> {
        self.members
            .iter()
            .position(|m| (m.r_r - r_r).abs() <= tol && (m.f_0 - f_0).abs() <= tol)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ensemble serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: EnsembleMeasure = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("ensemble JSON: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    /// Runs `f` on fixed-size chunks of member indices in parallel and
    /// returns the per-chunk results in chunk order.
    pub fn map_chunks<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(Range<usize>) -> Result<T> + Sync,
    {
        let n = self.len();
        let chunks = n.div_ceil(REDUCTION_CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|c| f(c * REDUCTION_CHUNK..((c + 1) * REDUCTION_CHUNK).min(n)))
            .collect()
    }

    /// Weighted mean of a per-member scalar, reduced in index order.
    pub fn weighted_mean<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(usize, &TumorParams) -> Result<f64> + Sync,
    {
        let parts = self.map_chunks(|range| {
            let mut acc = 0.0;
            for i in range {
                acc += self.weights[i] * f(i, &self.members[i])?;
            }
            Ok(acc)
        })?;
        Ok(parts.into_iter().fold(0.0, |a, b| a + b))
    }
}

/// Tensor product of four marginals, lexicographic with `d_D` outermost and
/// `f_0` innermost.
pub fn product_measure(
    d_d: &MarginalNodes,
    d_t: &MarginalNodes,
    r_r: &MarginalNodes,
    f_0: &MarginalNodes,
) -> Result<EnsembleMeasure> {
    if [d_d, d_t, r_r, f_0].iter().any(|m| m.values.is_empty()) {
        return Err(Error::invalid("every marginal needs at least one node"));
    }
    let w = d_d.weight() * d_t.weight() * r_r.weight() * f_0.weight();
    let mut members = Vec::with_capacity(
        d_d.values.len() * d_t.values.len() * r_r.values.len() * f_0.values.len(),
    );
    for &a in &d_d.values {
        for &b in &d_t.values {
            for &c in &r_r.values {
                for &d in &f_0.values {
                    members.push(TumorParams::new(a, b, c, d)?);
                }
            }
        }
    }
    let n = members.len();
    // Product weights are all equal; assign 1/n to keep the sum exact.
    let weights = if (w * n as f64 - 1.0).abs() <= WEIGHT_SUM_TOL {
        vec![1.0 / n as f64; n]
    } else {
        vec![w; n]
    };
    EnsembleMeasure::new(members, weights)
}

pub const PAPER_D_D: f64 = 1.5;
pub const PAPER_D_T: f64 = 0.0;

/// The 25 x 49 = 1225-member experiment ensemble: `d_D = 1.5`, `d_T = 0`,
/// `r_R` from 0.5 in steps of 0.02 and `f_0` from 0.002 in steps of 0.002.
///
/// Nodes are generated as `start + i * step`, so the largest values are
/// `r_R = 0.98` and `f_0 = 0.098`. This is the node set that reproduces the
/// published TTP tables; see [`paper_ensemble_inclusive`] for the variant
/// that also hits the interval endpoints 1 and 0.1.
pub fn paper_ensemble() -> EnsembleMeasure {
    let r_r = stepped_grid(0.5, 0.02, 25).expect("static grid");
    let f_0 = stepped_grid(0.002, 0.002, 49).expect("static grid");
    product_measure(
        &MarginalNodes::singleton(PAPER_D_D),
        &MarginalNodes::singleton(PAPER_D_T),
        &r_r,
        &f_0,
    )
    .expect("static ensemble")
}

/// Same parameter box as [`paper_ensemble`] with endpoint-inclusive grids
/// (`r_R` in 0.5..=1, `f_0` in 0.002..=0.1).
pub fn paper_ensemble_inclusive() -> EnsembleMeasure {
    refined_paper_ensemble(25, 49).expect("static ensemble")
}

/// Endpoint-inclusive grids over the experiment box with the given node counts.
pub fn refined_paper_ensemble(r_r_count: usize, f_0_count: usize) -> Result<EnsembleMeasure> {
    let r_r = uniform_grid(GridSpec::new(0.5, 1.0, r_r_count)?)?;
    let f_0 = uniform_grid(GridSpec::new(0.002, 0.1, f_0_count)?)?;
    product_measure(
        &MarginalNodes::singleton(PAPER_D_D),
        &MarginalNodes::singleton(PAPER_D_T),
        &r_r,
        &f_0,
    )
}
