//! Vector fields of the non-dimensional sensitive/resistant competition model.
//!
//! With `L = 1 - s - r` the logistic factor, the dynamics are control-affine:
//!
//! ```text
//! d/dτ (s, r) = F0(s, r) + F1(s, r) u
//! F0 = (L s - d_T s, r_R L r - d_T r)
//! F1 = (-d_D L s, 0)
//! ```
//!
//! The truncated fields multiply both by a smooth radial cutoff that equals 1
//! on the ball of radius 2 (which contains the simplex) and vanishes outside
//! radius 3, so they are globally Lipschitz while leaving model trajectories
//! untouched.

use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Row vector times matrix, `self^T m`. Used for covectors.
    pub fn vec_mul(self, m: &Mat2) -> Vec2 {
        Vec2::new(
            self.x * m.a11 + self.y * m.a21,
            self.x * m.a12 + self.y * m.a22,
        )
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        Vec2::new(self * v.x, self * v.y)
    }
}

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);
    pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Mat2 { a11, a12, a21, a22 }
    }

    pub const fn diag(a: f64, b: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, b)
    }

    pub fn scale(self, k: f64) -> Mat2 {
        Mat2::new(k * self.a11, k * self.a12, k * self.a21, k * self.a22)
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.a11 * v.x + self.a12 * v.y,
            self.a21 * v.x + self.a22 * v.y,
        )
    }

    pub fn matmul(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.a11 * o.a11 + self.a12 * o.a21,
            self.a11 * o.a12 + self.a12 * o.a22,
            self.a21 * o.a11 + self.a22 * o.a21,
            self.a21 * o.a12 + self.a22 * o.a22,
        )
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    /// Inverse, or `None` when the determinant is zero or not finite.
    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Mat2::new(self.a22 / d, -self.a12 / d, -self.a21 / d, self.a11 / d))
    }

    /// Outer product `a b^T`.
    pub fn outer(a: Vec2, b: Vec2) -> Mat2 {
        Mat2::new(a.x * b.x, a.x * b.y, a.y * b.x, a.y * b.y)
    }

    pub fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a21.is_finite() && self.a22.is_finite()
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a11 + o.a11,
            self.a12 + o.a12,
            self.a21 + o.a21,
            self.a22 + o.a22,
        )
    }
}

/// One ensemble member: drug kill coefficient, turnover rate, resistant
/// proliferation rate and initial resistant fraction, all non-dimensional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TumorParams {
    #[serde(rename = "d_D")]
    pub d_d: f64,
    #[serde(rename = "d_T")]
    pub d_t: f64,
    #[serde(rename = "r_R")]
    pub r_r: f64,
    #[serde(rename = "f_0")]
    pub f_0: f64,
}

impl TumorParams {
    pub fn new(d_d: f64, d_t: f64, r_r: f64, f_0: f64) -> Result<Self> {
        let p = TumorParams { d_d, d_t, r_r, f_0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.d_d, self.d_t, self.r_r, self.f_0];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "parameters must be finite and non-negative: {self:?}"
            )));
        }
        if self.f_0 > 1.0 {
            return Err(Error::invalid(format!("f_0 = {} outside [0, 1]", self.f_0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TumorState {
    pub s: f64,
    pub r: f64,
}

impl TumorState {
    pub const fn new(s: f64, r: f64) -> Self {
        TumorState { s, r }
    }

    /// Total population `s + r`.
    pub fn n(&self) -> f64 {
        self.s + self.r
    }

    pub fn as_vec(&self) -> Vec2 {
        Vec2::new(self.s, self.r)
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.r.is_finite()
    }

    /// Membership in the closed simplex `s, r >= 0, s + r <= 1`, up to `tol`.
    pub fn in_simplex(&self, tol: f64) -> bool {
        self.s >= -tol && self.r >= -tol && self.s + self.r <= 1.0 + tol
    }
}

impl From<Vec2> for TumorState {
    fn from(v: Vec2) -> Self {
        TumorState::new(v.x, v.y)
    }
}

/// Converts dimensional model rates to the non-dimensional parameters.
///
/// Time is rescaled by the sensitive proliferation rate `r_s`; the drug
/// coefficient picks up a factor 2 from the dose normalisation.
pub fn normalize_parameters(
    r_s: f64,
    d_d_raw: f64,
    d_t_raw: f64,
    r_r_raw: f64,
    f_0: f64,
) -> Result<TumorParams> {
    if !(r_s > 0.0) || !r_s.is_finite() {
        return Err(Error::invalid(format!("r_S must be positive, got {r_s}")));
    }
    TumorParams::new(2.0 * d_d_raw, d_t_raw / r_s, r_r_raw / r_s, f_0)
}

#[inline]
pub fn drift_field(p: &TumorParams, x: TumorState) -> Vec2 {
    let l = 1.0 - x.s - x.r;
    Vec2::new(l * x.s - p.d_t * x.s, p.r_r * l * x.r - p.d_t * x.r)
}

#[inline]
pub fn control_field(p: &TumorParams, x: TumorState) -> Vec2 {
    let l = 1.0 - x.s - x.r;
    Vec2::new(-p.d_d * l * x.s, 0.0)
}

const PLATEAU_SQ: f64 = 4.0;
const SUPPORT_SQ: f64 = 9.0;

/// Radial profile `q(t)` with `t = |x|^2` and its derivative `dq/dt`.
///
/// Quintic smoothstep between `t = 4` and `t = 9`, so the cutoff is C2.
fn cutoff_profile(t: f64) -> (f64, f64) {
    if t <= PLATEAU_SQ {
        return (1.0, 0.0);
    }
    if t >= SUPPORT_SQ {
        return (0.0, 0.0);
    }
    let w = SUPPORT_SQ - PLATEAU_SQ;
    let z = (t - PLATEAU_SQ) / w;
    let z2 = z * z;
    let z3 = z2 * z;
    let step = z3 * (10.0 + z * (-15.0 + 6.0 * z));
    let dstep = 30.0 * z2 * (1.0 - z) * (1.0 - z);
    (1.0 - step, -dstep / w)
}

/// Smooth cutoff: 1 on `|x| <= 2`, 0 on `|x| >= 3`, monotone in between.
pub fn cutoff(x: TumorState) -> f64 {
    cutoff_profile(x.as_vec().norm_sq()).0
}

/// Gradient of [`cutoff`] with respect to the state.
pub fn cutoff_gradient(x: TumorState) -> Vec2 {
    let v = x.as_vec();
    let (_, dq) = cutoff_profile(v.norm_sq());
    (2.0 * dq) * v
}

/// Drift and control fields multiplied by the cutoff.
#[inline]
pub fn truncated_fields(p: &TumorParams, x: TumorState) -> (Vec2, Vec2) {
    let f0 = drift_field(p, x);
    let f1 = control_field(p, x);
    let t = x.as_vec().norm_sq();
    if t <= PLATEAU_SQ {
        return (f0, f1);
    }
    let rho = cutoff_profile(t).0;
    (rho * f0, rho * f1)
}

fn raw_jacobians(p: &TumorParams, x: TumorState) -> (Mat2, Mat2) {
    let (s, r) = (x.s, x.r);
    let l = 1.0 - s - r;
    let a0 = Mat2::new(
        l - s - p.d_t,
        -s,
        -p.r_r * r,
        p.r_r * (l - r) - p.d_t,
    );
    let a1 = Mat2::new(-p.d_d * (l - s), p.d_d * s, 0.0, 0.0);
    (a0, a1)
}

/// Analytic state Jacobians `(dF0/dx, dF1/dx)` of the truncated fields.
#[inline]
pub fn field_jacobians(p: &TumorParams, x: TumorState) -> (Mat2, Mat2) {
    let (a0, a1) = raw_jacobians(p, x);
    let v = x.as_vec();
    let t = v.norm_sq();
    if t <= PLATEAU_SQ {
        return (a0, a1);
    }
    let (rho, dq) = cutoff_profile(t);
    let grad_rho = (2.0 * dq) * v;
    let f0 = drift_field(p, x);
    let f1 = control_field(p, x);
    (
        a0.scale(rho) + Mat2::outer(f0, grad_rho),
        a1.scale(rho) + Mat2::outer(f1, grad_rho),
    )
}
