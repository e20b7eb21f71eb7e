use super::{BfgsError, Result, DENOMINATOR_TOLERANCE};
use crate::linalg::{self, SymMatrix, Vector};
use crate::protocol::UpdateMessage;

/// Master-side aggregates: `(Σ B_i)^{-1}`, `u = Σ B_i z_i`, `g = Σ ∇f_i(z_i)`
/// and the current iterate `x = (Σ B_i)^{-1} (u − g)`.
///
/// `Σ B_i` is also accumulated directly from the messages. It is never used
/// on the hot path, only to refactorize when a Woodbury denominator
/// degenerates.
#[derive(Debug, Clone)]
pub struct MasterState {
    b_inv: SymMatrix,
    b_sum: SymMatrix,
    u: Vector,
    g: Vector,
    x: Vector,
    t: u64,
    refactorizations: u64,
    max_step: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ApplyOutcome {
    /// The inverse was rebuilt by factorization instead of the rank-two path.
    pub refactorized: bool,
    /// The iterate was shortened by the step clip.
    pub clipped: bool,
}

impl MasterState {
    /// One-time `O(p³)` setup: factorizes `Σ B_i⁰`.
    pub fn init(b0s: &[SymMatrix], x0: &[f64], grads0: &[Vector]) -> Result<Self> {
        let p = x0.len();
        if b0s.is_empty() || b0s.len() != grads0.len() {
            return Err(BfgsError::BadMessage(format!(
                "{} initial matrices but {} initial gradients",
                b0s.len(),
                grads0.len()
            )));
        }
        let mut b_sum = SymMatrix::zeros(p);
        let mut u = vec![0.0; p];
        let mut g = vec![0.0; p];
        for (b, grad) in b0s.iter().zip(grads0) {
            b_sum.add_assign(b)?;
            linalg::axpy(1.0, &b.mat_vec(x0)?, &mut u);
            linalg::check_dim(p, grad.len())?;
            linalg::axpy(1.0, grad, &mut g);
        }
        let b_inv = b_sum.spd_inverse()?;
        Ok(Self {
            b_inv,
            b_sum,
            u,
            g,
            x: x0.to_vec(),
            t: 0,
            refactorizations: 0,
            max_step: None,
        })
    }

    /// Caps `‖x^{t+1} − x^t‖` at `radius`. Off by default; with it on the
    /// iterates no longer equal `(Σ B_i)^{-1}(u − g)` after a clipped step.
    pub fn with_max_step(mut self, radius: Option<f64>) -> Self {
        self.max_step = radius;
        self
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn b_inv(&self) -> &SymMatrix {
        &self.b_inv
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn refactorizations(&self) -> u64 {
        self.refactorizations
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Processes one worker message and advances logical time by one.
    ///
    /// On success the state reflects the message completely; on error it is
    /// left untouched.
    pub fn apply(&mut self, msg: &UpdateMessage) -> Result<ApplyOutcome> {
        let p = self.dim();
        for (name, v) in [("delta_u", &msg.delta_u), ("y", &msg.y), ("q", &msg.q)] {
            if v.len() != p {
                return Err(BfgsError::BadMessage(format!(
                    "{name} has length {} (expected {p})",
                    v.len()
                )));
            }
            if !linalg::all_finite(v) {
                return Err(BfgsError::BadMessage(format!("{name} is not finite")));
            }
        }

        let mut u = self.u.clone();
        let mut g = self.g.clone();
        linalg::axpy(1.0, &msg.delta_u, &mut u);
        linalg::axpy(1.0, &msg.y, &mut g);

        let mut outcome = ApplyOutcome::default();
        let (b_inv, b_sum) = if msg.skip {
            (None, None)
        } else {
            let mut b_sum = self.b_sum.clone();
            b_sum.rank_one_update_mut(&msg.y, 1.0 / msg.alpha)?;
            b_sum.rank_one_update_mut(&msg.q, -1.0 / msg.beta)?;
            let b_inv = match woodbury_step(&self.b_inv, msg) {
                Ok(inv) => inv,
                Err(BfgsError::DenominatorDegenerate { .. }) => {
                    outcome.refactorized = true;
                    b_sum.spd_inverse()?
                }
                Err(e) => return Err(e),
            };
            (Some(b_inv), Some(b_sum))
        };

        let inv = b_inv.as_ref().unwrap_or(&self.b_inv);
        let mut x = inv.mat_vec(&linalg::sub(&u, &g))?;
        if let Some(radius) = self.max_step {
            let step = linalg::sub(&x, &self.x);
            let len = linalg::norm(&step);
            if len > radius {
                x = self.x.clone();
                linalg::axpy(radius / len, &step, &mut x);
                outcome.clipped = true;
            }
        }
        if !linalg::all_finite(&x) {
            return Err(BfgsError::NonFiniteIterate { t: self.t + 1 });
        }

        if let Some(inv) = b_inv {
            self.b_inv = inv;
        }
        if let Some(sum) = b_sum {
            self.b_sum = sum;
        }
        if outcome.refactorized {
            self.refactorizations += 1;
        }
        self.u = u;
        self.g = g;
        self.x = x;
        self.t += 1;
        Ok(outcome)
    }

    /// Rebuilds the inverse from the directly accumulated `Σ B_i`.
    pub fn refactorize(&mut self) -> Result<()> {
        self.b_inv = self.b_sum.spd_inverse()?;
        self.refactorizations += 1;
        Ok(())
    }

    /// Rebuilds the inverse from an externally supplied `Σ B_i`, e.g. one
    /// summed from authoritative worker states. The iterate is not recomputed.
    pub fn refactorize_from(&mut self, b_sum: SymMatrix) -> Result<()> {
        linalg::check_dim(self.dim(), b_sum.dim())?;
        self.b_inv = b_sum.spd_inverse()?;
        self.b_sum = b_sum;
        self.refactorizations += 1;
        Ok(())
    }
}

/// Two Sherman–Morrison corrections:
/// `v = B⁻¹y`, `U = B⁻¹ − v vᵀ/(α + vᵀy)`, `w = U q`,
/// `B'⁻¹ = U + w wᵀ/(β − qᵀw)`.
fn woodbury_step(b_inv: &SymMatrix, msg: &UpdateMessage) -> Result<SymMatrix> {
    let v = b_inv.mat_vec(&msg.y)?;
    let vy = linalg::dot(&v, &msg.y);
    let den1 = msg.alpha + vy;
    if degenerate(den1, msg.alpha.abs().max(vy.abs())) {
        return Err(BfgsError::DenominatorDegenerate {
            which: "alpha + vᵀy",
            value: den1,
        });
    }
    let mut upd = b_inv.rank_one_update(&v, -1.0 / den1)?;

    let w = upd.mat_vec(&msg.q)?;
    let qw = linalg::dot(&msg.q, &w);
    let den2 = msg.beta - qw;
    if degenerate(den2, msg.beta.abs().max(qw.abs())) {
        return Err(BfgsError::DenominatorDegenerate {
            which: "beta − qᵀw",
            value: den2,
        });
    }
    upd.rank_one_update_mut(&w, 1.0 / den2)?;
    Ok(upd)
}

fn degenerate(den: f64, scale: f64) -> bool {
    !den.is_finite() || den.abs() <= DENOMINATOR_TOLERANCE * scale.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfgs::{InitMode, WorkerState};
    use crate::objective::synth_logistic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn msg(y: Vec<f64>, q: Vec<f64>, alpha: f64, beta: f64, skip: bool) -> UpdateMessage {
        let p = y.len();
        UpdateMessage {
            worker_id: 0,
            skip,
            alpha,
            beta,
            delta_u: vec![0.0; p],
            y,
            q,
        }
    }

    #[test]
    fn init_examples() {
        let b0s = vec![SymMatrix::identity(2), SymMatrix::identity(2)];
        let x0 = [1.0, 1.0];
        // quadratics A_i = I, b_i = 0: gradients equal x0
        let m = MasterState::init(&b0s, &x0, &[x0.to_vec(), x0.to_vec()]).unwrap();
        assert_eq!(m.b_inv(), &SymMatrix::scaled_identity(2, 0.5));
        assert_eq!(m.u(), &[2.0, 2.0]);
        assert_eq!(m.g(), &[2.0, 2.0]);
        assert_eq!(m.t(), 0);

        let bad = vec![SymMatrix::scaled_identity(2, -1.0)];
        assert!(matches!(
            MasterState::init(&bad, &x0, &[x0.to_vec()]),
            Err(BfgsError::Linalg(crate::linalg::LinalgError::NotPositiveDefinite { .. }))
        ));
    }

    #[test]
    fn woodbury_hand_example() {
        let mut m = MasterState::init(&[SymMatrix::identity(2)], &[0.0, 0.0], &[vec![0.0, 0.0]]).unwrap();
        m.apply(&msg(vec![2.0, 0.0], vec![1.0, 0.0], 2.0, 1.0, false)).unwrap();
        let want = SymMatrix::from_diagonal(&[0.5, 1.0]);
        assert!(m.b_inv().max_abs_diff(&want) < 1e-15);
        assert_eq!(m.t(), 1);
        // y was folded into g: x = B⁻¹(0 − (2, 0)) = (−1, 0)
        assert!((m.x()[0] + 1.0).abs() < 1e-15 && m.x()[1] == 0.0);
    }

    #[test]
    fn skip_refreshes_sums_only() {
        let mut m = MasterState::init(&[SymMatrix::identity(2)], &[0.0, 0.0], &[vec![0.0, 0.0]]).unwrap();
        let mut skip = msg(vec![1.0, 2.0], vec![5.0, 5.0], -3.0, 1.0, true);
        skip.delta_u = vec![3.0, 3.0];
        m.apply(&skip).unwrap();
        assert_eq!(m.b_inv(), &SymMatrix::identity(2));
        assert_eq!(m.u(), &[3.0, 3.0]);
        assert_eq!(m.g(), &[1.0, 2.0]);
        assert_eq!(m.x(), &[2.0, 1.0]);
        assert_eq!(m.t(), 1);
    }

    #[test]
    fn malformed_message_leaves_state_untouched() {
        let mut m = MasterState::init(&[SymMatrix::identity(2)], &[0.0, 0.0], &[vec![0.0, 0.0]]).unwrap();
        let before = m.clone();
        assert!(m.apply(&msg(vec![1.0], vec![1.0], 1.0, 1.0, false)).is_err());
        assert!(m.apply(&msg(vec![f64::NAN, 0.0], vec![1.0, 0.0], 1.0, 1.0, false)).is_err());
        assert_eq!(m.x(), before.x());
        assert_eq!(m.t(), 0);
    }

    #[test]
    fn degenerate_denominator_falls_back_to_refactorization() {
        // n = 1, B = I, y = 0, q = e1, β = 1: β − qᵀw = 0 and the aggregate
        // itself turns singular, so the fallback must fail loudly.
        let mut m = MasterState::init(&[SymMatrix::identity(2)], &[0.0, 0.0], &[vec![0.0, 0.0]]).unwrap();
        assert!(m.apply(&msg(vec![0.0, 0.0], vec![1.0, 0.0], 1.0, 1.0, false)).is_err());
        assert_eq!(m.t(), 0);

        // n = 2, B = 2I: U = ½I, w = ½e1 and β − qᵀw = ½·1e-13, below the
        // relative tolerance while the aggregate stays (barely) PD.
        let mut m = MasterState::init(
            &[SymMatrix::identity(2), SymMatrix::identity(2)],
            &[0.0, 0.0],
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let beta = 0.5 * (1.0 + 1e-13);
        let out = m.apply(&msg(vec![0.0, 0.0], vec![1.0, 0.0], 1.0, beta, false)).unwrap();
        assert!(out.refactorized);
        assert_eq!(m.refactorizations(), 1);
        let direct = SymMatrix::from_diagonal(&[2.0 - 1.0 / beta, 2.0]).spd_inverse().unwrap();
        assert!(m.b_inv().max_abs_diff(&direct) <= 1e-12 * direct.get(0, 0));
    }

    #[test]
    fn inverse_tracks_direct_aggregate() {
        let syn = synth_logistic(31, 3, 6, 40, 30.0, 0.05);
        let problem = syn.problem().unwrap();
        let x0 = vec![0.0; 6];
        let mut workers: Vec<WorkerState> = (0..3)
            .map(|i| WorkerState::init(i as u32, problem.local(i), InitMode::LocalSmoothness, &x0).unwrap())
            .collect();
        let b0s: Vec<_> = workers.iter().map(|w| w.hessian_approx().clone()).collect();
        let grads: Vec<_> = workers.iter().map(|w| w.grad_z().to_vec()).collect();
        let mut m = MasterState::init(&b0s, &x0, &grads).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let i = rng.random_range(0..3);
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let msg = workers[i].compute(&x, problem.local(i)).unwrap();
            m.apply(&msg).unwrap();
        }
        let mut direct = SymMatrix::zeros(6);
        for w in &workers {
            direct.add_assign(w.hessian_approx()).unwrap();
        }
        let prod = m.b_inv().mat_mul(&direct).unwrap();
        let mut err = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let e = prod[i * 6 + j] - if i == j { 1.0 } else { 0.0 };
                err += e * e;
            }
        }
        assert!(err.sqrt() <= 1e-6, "drift {}", err.sqrt());
        assert!(m.b_inv().asymmetry() == 0.0);
    }

    #[test]
    fn step_clip_limits_motion() {
        let mut m = MasterState::init(&[SymMatrix::identity(2)], &[0.0, 0.0], &[vec![0.0, 0.0]])
            .unwrap()
            .with_max_step(Some(0.5));
        let mut skip = msg(vec![-3.0, -4.0], vec![0.0, 0.0], 0.0, 0.0, true);
        skip.delta_u = vec![0.0, 0.0];
        let out = m.apply(&skip).unwrap();
        assert!(out.clipped);
        assert!((linalg::norm(m.x()) - 0.5).abs() < 1e-15);
    }
}
