//! Local objectives `f_i` and the pooled problem `f = (1/n) Σ f_i`.
//!
//! Two families are supported: strongly convex quadratics (used to check
//! exactness properties) and L2-regularized binary logistic regression.

mod libsvm;
mod synth;

pub use libsvm::{load_libsvm, parse_libsvm, write_libsvm};
pub use synth::{feature_scales, partition, synth_logistic, synth_quadratic, SynthLogistic};

use crate::linalg::{self, check_dim, LinalgError, SymMatrix, Vector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid label {label:?} on line {line} (expected -1, 0 or +1)")]
    Label { line: usize, label: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid shard: {0}")]
    InvalidShard(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

/// Labelled samples held by one worker. Features are stored dense.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    dim: usize,
    features: Vec<Vector>,
    labels: Vec<f64>,
}

impl Shard {
    pub fn new(dim: usize, features: Vec<Vector>, labels: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(ObjectiveError::InvalidShard("dimension must be >= 1".into()));
        }
        if features.is_empty() {
            return Err(ObjectiveError::InvalidShard("shard has no samples".into()));
        }
        if features.len() != labels.len() {
            return Err(ObjectiveError::InvalidShard(format!(
                "{} feature vectors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        for (j, a) in features.iter().enumerate() {
            if a.len() != dim {
                return Err(ObjectiveError::InvalidShard(format!(
                    "sample {j} has dimension {} (expected {dim})",
                    a.len()
                )));
            }
        }
        if let Some(bad) = labels.iter().find(|b| **b != 1.0 && **b != -1.0) {
            return Err(ObjectiveError::InvalidShard(format!("label {bad} not in {{-1, +1}}")));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[Vector] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn max_sq_norm(&self) -> f64 {
        self.features
            .iter()
            .map(|a| linalg::dot(a, a))
            .fold(0.0, f64::max)
    }

    /// Concatenation of several shards (same dimension).
    pub fn concat(shards: &[Shard]) -> Result<Shard> {
        let dim = shards
            .first()
            .ok_or_else(|| ObjectiveError::InvalidShard("no shards to concatenate".into()))?
            .dim;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for s in shards {
            check_dim(dim, s.dim)?;
            features.extend(s.features.iter().cloned());
            labels.extend_from_slice(&s.labels);
        }
        Shard::new(dim, features, labels)
    }
}

/// `log(1 + exp(z))` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic sigmoid `1 / (1 + exp(-z))`.
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One worker's local function.
#[derive(Debug, Clone)]
pub enum LocalObjective {
    /// `½ zᵀA z + bᵀz` with `A` symmetric positive definite.
    Quadratic { a: SymMatrix, b: Vector },
    /// `(1/m) Σ log(1 + exp(-b_j a_jᵀx)) + (λ/2)‖x‖²`
    Logistic { shard: Shard, lambda: f64 },
}

impl LocalObjective {
    pub fn quadratic(a: SymMatrix, b: Vector) -> Result<Self> {
        check_dim(a.dim(), b.len())?;
        if !linalg::is_positive_definite(&a) {
            return Err(ObjectiveError::Contract(
                "quadratic matrix must be positive definite".into(),
            ));
        }
        Ok(Self::Quadratic { a, b })
    }

    pub fn logistic(shard: Shard, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ObjectiveError::Contract(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(Self::Logistic { shard, lambda })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Quadratic { b, .. } => b.len(),
            Self::Logistic { shard, .. } => shard.dim(),
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            Self::Quadratic { a, b } => 0.5 * linalg::dot(x, &a.mat_vec(x)?) + linalg::dot(b, x),
            Self::Logistic { shard, lambda } => {
                let m = shard.len() as f64;
                let loss: f64 = shard
                    .features
                    .iter()
                    .zip(&shard.labels)
                    .map(|(a, b)| softplus(-b * linalg::dot(a, x)))
                    .sum();
                loss / m + 0.5 * lambda * linalg::dot(x, x)
            }
        })
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            Self::Quadratic { a, b } => linalg::add(&a.mat_vec(x)?, b),
            Self::Logistic { shard, lambda } => {
                let inv_m = 1.0 / shard.len() as f64;
                let mut g = linalg::scale(*lambda, x);
                for (a, b) in shard.features.iter().zip(&shard.labels) {
                    let coef = -b * sigmoid(-b * linalg::dot(a, x)) * inv_m;
                    linalg::axpy(coef, a, &mut g);
                }
                g
            }
        })
    }

    pub fn hessian(&self, x: &[f64]) -> Result<SymMatrix> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            Self::Quadratic { a, .. } => a.clone(),
            Self::Logistic { shard, lambda } => {
                let inv_m = 1.0 / shard.len() as f64;
                let mut h = SymMatrix::scaled_identity(shard.dim(), *lambda);
                for a in &shard.features {
                    let s = sigmoid(linalg::dot(a, x));
                    let w = s * (1.0 - s) * inv_m;
                    if w > 0.0 {
                        h.rank_one_update_mut(a, w)?;
                    }
                }
                h
            }
        })
    }

    /// Upper bound on the local Hessian's largest eigenvalue.
    ///
    /// Logistic: `λ + max_j ‖a_j‖² / 4`. Quadratic: Gershgorin bound on `A`.
    pub fn smoothness_bound(&self) -> f64 {
        match self {
            Self::Quadratic { a, .. } => (0..a.dim())
                .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            Self::Logistic { shard, lambda } => lambda + shard.max_sq_norm() / 4.0,
        }
    }

    /// Lower bound on the strong convexity modulus, where one is cheap to get.
    /// Logistic: `λ`. Quadratic: `None` (would need an eigen-solve).
    pub fn strong_convexity_bound(&self) -> Option<f64> {
        match self {
            Self::Quadratic { .. } => None,
            Self::Logistic { lambda, .. } => Some(*lambda),
        }
    }
}

/// The pooled problem `f(x) = (1/n) Σ f_i(x)`.
#[derive(Debug, Clone)]
pub struct Problem {
    locals: Vec<LocalObjective>,
}

impl Problem {
    pub fn new(locals: Vec<LocalObjective>) -> Result<Self> {
        let first = locals
            .first()
            .ok_or_else(|| ObjectiveError::Contract("problem needs at least one worker".into()))?;
        let dim = first.dim();
        for l in &locals {
            check_dim(dim, l.dim())?;
        }
        Ok(Self { locals })
    }

    pub fn dim(&self) -> usize {
        self.locals[0].dim()
    }

    pub fn n_workers(&self) -> usize {
        self.locals.len()
    }

    pub fn locals(&self) -> &[LocalObjective] {
        &self.locals
    }

    pub fn local(&self, i: usize) -> &LocalObjective {
        &self.locals[i]
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for l in &self.locals {
            total += l.value(x)?;
        }
        Ok(total / self.locals.len() as f64)
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vector> {
        let mut g = vec![0.0; self.dim()];
        for l in &self.locals {
            linalg::axpy(1.0, &l.grad(x)?, &mut g);
        }
        Ok(linalg::scale(1.0 / self.locals.len() as f64, &g))
    }

    pub fn hessian(&self, x: &[f64]) -> Result<SymMatrix> {
        let mut h = SymMatrix::zeros(self.dim());
        for l in &self.locals {
            h.add_assign(&l.hessian(x)?)?;
        }
        let inv_n = 1.0 / self.locals.len() as f64;
        let scaled: Vec<f64> = h.as_slice().iter().map(|v| v * inv_n).collect();
        Ok(SymMatrix::from_row_major(self.dim(), scaled)?)
    }
}
