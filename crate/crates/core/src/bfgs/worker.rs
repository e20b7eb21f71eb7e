use super::{bfgs_rank_two, init_hessian_approx, negligible_step, BfgsError, CurvaturePair, InitMode, Result};
use crate::linalg::{self, SymMatrix, Vector};
use crate::objective::LocalObjective;
use crate::protocol::UpdateMessage;

/// State owned by one worker between exchanges with the master.
#[derive(Debug, Clone)]
pub struct WorkerState {
    id: u32,
    /// Last iterate incorporated into `b`.
    z: Vector,
    b: SymMatrix,
    /// `∇f_i(z)`
    grad_z: Vector,
    /// `B·z`
    u_local: Vector,
    updates_done: u64,
    skipped: u64,
}

impl WorkerState {
    pub fn init(id: u32, f: &LocalObjective, mode: InitMode, x0: &[f64]) -> Result<Self> {
        let b = init_hessian_approx(mode, f, x0)?;
        Self::with_matrix(id, f, b, x0)
    }

    pub fn with_matrix(id: u32, f: &LocalObjective, b: SymMatrix, x0: &[f64]) -> Result<Self> {
        linalg::check_dim(f.dim(), b.dim())?;
        let grad_z = f.grad(x0)?;
        let u_local = b.mat_vec(x0)?;
        Ok(Self {
            id,
            z: x0.to_vec(),
            b,
            grad_z,
            u_local,
            updates_done: 0,
            skipped: 0,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn hessian_approx(&self) -> &SymMatrix {
        &self.b
    }

    pub fn grad_z(&self) -> &[f64] {
        &self.grad_z
    }

    pub fn u_local(&self) -> &[f64] {
        &self.u_local
    }

    pub fn updates_done(&self) -> u64 {
        self.updates_done
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Handshake payload: `B_i⁰ x⁰` in `delta_u` and `∇f_i(x⁰)` in `y`.
    pub fn initial_message(&self) -> UpdateMessage {
        let p = self.z.len();
        UpdateMessage {
            worker_id: self.id,
            skip: true,
            alpha: 0.0,
            beta: 0.0,
            delta_u: self.u_local.clone(),
            y: self.grad_z.clone(),
            q: vec![0.0; p],
        }
    }

    /// Incorporates a freshly assigned iterate and returns the message for
    /// the master. State is only touched once everything has been computed.
    ///
    /// When the curvature check fails the local matrix is left as is and the
    /// message is flagged `skip`; `y` and `delta_u` still carry the gradient
    /// and `B·z` changes so the master's sums stay exact.
    pub fn compute(&mut self, x_new: &[f64], f: &LocalObjective) -> Result<UpdateMessage> {
        linalg::check_dim(self.z.len(), x_new.len())?;
        if !linalg::all_finite(x_new) {
            return Err(BfgsError::BadMessage("assigned iterate is not finite".into()));
        }
        let grad_new = f.grad(x_new)?;
        let s = linalg::sub(x_new, &self.z);
        let y = linalg::sub(&grad_new, &self.grad_z);
        let pair = CurvaturePair::new(&self.b, s, y)?;

        let (b_new, skip) = match bfgs_rank_two(&self.b, &pair) {
            Ok(_) if negligible_step(x_new, &self.z, &pair.s) => (None, true),
            Ok(b) => (Some(b), false),
            Err(BfgsError::CurvatureReject { .. }) => (None, true),
            Err(e) => return Err(e),
        };
        let u_new = b_new.as_ref().unwrap_or(&self.b).mat_vec(x_new)?;
        let delta_u = linalg::sub(&u_new, &self.u_local);

        let CurvaturePair { y, q, alpha, beta, .. } = pair;
        let msg = UpdateMessage {
            worker_id: self.id,
            skip,
            alpha,
            beta,
            delta_u,
            y,
            q,
        };

        if let Some(b) = b_new {
            self.b = b;
        } else {
            self.skipped += 1;
        }
        self.z = x_new.to_vec();
        self.grad_z = grad_new;
        self.u_local = u_new;
        self.updates_done += 1;
        Ok(msg)
    }
}
