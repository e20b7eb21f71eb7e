//! Worker-side BFGS updates and master-side aggregate maintenance.
//!
//! A worker keeps a local Hessian approximation `B_i` of its own `f_i`,
//! refreshed by the standard rank-two BFGS rule every time it is handed a
//! new iterate. The master never sees a `p × p` matrix: it keeps
//! `(Σ B_i)^{-1}` up to date from the `O(p)` pieces in each
//! [`UpdateMessage`](crate::protocol::UpdateMessage) by two Sherman–Morrison
//! corrections.

mod master;
mod worker;

pub use master::{ApplyOutcome, MasterState};
pub use worker::WorkerState;

use crate::linalg::{self, LinalgError, SymMatrix, Vector};
use crate::objective::{LocalObjective, ObjectiveError};
use thiserror::Error;

/// An update is rejected when `yᵀs <= CURVATURE_THRESHOLD · ‖s‖²`.
pub const CURVATURE_THRESHOLD: f64 = 1e-12;

/// A worker also skips when `‖s‖ <= STEP_FLOOR · max(‖x‖, ‖z‖)`: the
/// gradient difference of such a step is rounding noise.
pub const STEP_FLOOR: f64 = 1e-12;

/// True when the step from `z` to `x` is too short to carry curvature.
pub fn negligible_step(x: &[f64], z: &[f64], s: &[f64]) -> bool {
    linalg::norm(s) <= STEP_FLOOR * linalg::norm(x).max(linalg::norm(z))
}

/// Relative size below which a Woodbury denominator counts as degenerate.
pub const DENOMINATOR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BfgsError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("curvature condition failed: alpha = {alpha:e}, beta = {beta:e}, threshold = {threshold:e}")]
    CurvatureReject { alpha: f64, beta: f64, threshold: f64 },
    #[error("degenerate {which} denominator {value:e}")]
    DenominatorDegenerate { which: &'static str, value: f64 },
    #[error("non-finite iterate at t = {t}")]
    NonFiniteIterate { t: u64 },
    #[error("malformed message: {0}")]
    BadMessage(String),
}

pub type Result<T> = std::result::Result<T, BfgsError>;

/// Variable and gradient variation for one BFGS step, with the derived
/// quantities `q = B·s`, `α = yᵀs` and `β = sᵀB s`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair {
    pub s: Vector,
    pub y: Vector,
    pub q: Vector,
    pub alpha: f64,
    pub beta: f64,
}

impl CurvaturePair {
    pub fn new(b: &SymMatrix, s: Vector, y: Vector) -> Result<Self> {
        linalg::check_dim(s.len(), y.len())?;
        let q = b.mat_vec(&s)?;
        let alpha = linalg::dot(&y, &s);
        let beta = linalg::dot(&s, &q);
        Ok(Self { s, y, q, alpha, beta })
    }

    pub fn curvature_ok(&self) -> bool {
        let threshold = CURVATURE_THRESHOLD * linalg::dot(&self.s, &self.s);
        self.alpha > threshold && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite()
    }
}

/// `B' = B + y yᵀ/α − q qᵀ/β`.
///
/// Fails with [`BfgsError::CurvatureReject`] instead of producing an
/// indefinite matrix; callers are expected to keep `B` unchanged then.
pub fn bfgs_rank_two(b: &SymMatrix, pair: &CurvaturePair) -> Result<SymMatrix> {
    if !pair.curvature_ok() {
        return Err(BfgsError::CurvatureReject {
            alpha: pair.alpha,
            beta: pair.beta,
            threshold: CURVATURE_THRESHOLD * linalg::dot(&pair.s, &pair.s),
        });
    }
    let n = b.dim();
    linalg::check_dim(n, pair.y.len())?;
    let (ia, ib) = (1.0 / pair.alpha, 1.0 / pair.beta);
    let mut out = b.clone();
    // Single pass over the upper triangle, then mirror.
    for i in 0..n {
        for j in i..n {
            let v = out.get(i, j) + pair.y[i] * pair.y[j] * ia - pair.q[i] * pair.q[j] * ib;
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// How a worker seeds `B_i⁰`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InitMode {
    /// `c · I` with a caller-chosen `c > 0`.
    ScaledIdentity(f64),
    /// `c · I` with `c` the local smoothness bound (`λ + max‖a_j‖²/4` for logistic).
    #[default]
    LocalSmoothness,
    /// The exact local Hessian at `x⁰`.
    ExactLocalHessian,
}

pub fn init_hessian_approx(mode: InitMode, f: &LocalObjective, x0: &[f64]) -> Result<SymMatrix> {
    let p = f.dim();
    linalg::check_dim(p, x0.len())?;
    match mode {
        InitMode::ScaledIdentity(c) => {
            if !(c > 0.0 && c.is_finite()) {
                return Err(BfgsError::BadMessage(format!(
                    "scaled identity needs c > 0, got {c}"
                )));
            }
            Ok(SymMatrix::scaled_identity(p, c))
        }
        InitMode::LocalSmoothness => {
            let c = f.smoothness_bound();
            // A zero bound only happens for degenerate data with λ = 0.
            Ok(SymMatrix::scaled_identity(p, if c > 0.0 { c } else { 1.0 }))
        }
        InitMode::ExactLocalHessian => Ok(f.hessian(x0)?),
    }
}
