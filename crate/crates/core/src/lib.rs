//! Ensemble optimal control of drug schedules for a two-population
//! (sensitive/resistant) Lotka-Volterra tumor model.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: the control-affine vector fields, their smooth truncation
//!   and analytic state Jacobians.
//! - [`ensemble`]: discrete probability measures over the model parameters.
//! - [`simulate`]: explicit Euler rollouts, feedback protocols (MTD and the
//!   two adaptive therapies) and time-to-progression outcomes.
//! - [`objective`]: running costs and the ensemble-averaged functional.
//! - [`gradient`]: discrete adjoint gradient plus two verification routes.
//! - [`optimize`]: box/tangent-cone projections and projected gradient descent.
//!
//! All ensemble reductions are performed in member-index order over fixed
//! chunks, so results are bit-identical regardless of the number of threads.

pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod gradient;
pub mod objective;
pub mod optimize;
pub mod simulate;

pub use dynamics::{Mat2, TumorParams, TumorState, Vec2};
pub use ensemble::{EnsembleMeasure, GridSpec};
pub use error::{Error, Result};
pub use gradient::GradientVector;
pub use objective::CostKind;
pub use optimize::{DescentConfig, DescentTrace};
pub use simulate::{ControlSchedule, OutcomeRecord, Protocol, TimeGrid, Trajectory};

/// Sensitive-cell proliferation rate used for the time rescaling, per day.
pub const DEFAULT_R_S: f64 = 0.027;

/// Euler nodes per simulated day.
pub const DEFAULT_STEPS_PER_DAY: u32 = 8;
