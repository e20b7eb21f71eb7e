//! Brute-force recomputations used to certify the incremental code paths.
//! Everything here is `O(p³)` or worse per call and meant for tests and
//! diagnostics only.

use crate::bfgs::{init_hessian_approx, InitMode, WorkerState, CURVATURE_THRESHOLD, STEP_FLOOR};
use crate::linalg::{self, LinalgError, SymMatrix, Vector};
use crate::objective::{LocalObjective, ObjectiveError, Problem};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Bfgs(#[from] crate::bfgs::BfgsError),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Aggregates rebuilt from worker states.
#[derive(Debug, Clone, PartialEq)]
pub struct Recomputed {
    pub b: SymMatrix,
    pub u: Vector,
    pub g: Vector,
    pub x: Vector,
}

/// Sums `B_i`, `B_i z_i` and `∇f_i(z_i)` from scratch and solves
/// `(Σ B_i) x = u − g` by factorization. Gradients are re-evaluated from the
/// objectives, not taken from the workers' caches.
pub fn recompute_master(workers: &[WorkerState], problem: &Problem) -> Result<Recomputed> {
    if workers.len() != problem.n_workers() {
        return Err(OracleError::Contract(format!(
            "{} worker states for {} objectives",
            workers.len(),
            problem.n_workers()
        )));
    }
    let p = problem.dim();
    let mut b = SymMatrix::zeros(p);
    let mut u = vec![0.0; p];
    let mut g = vec![0.0; p];
    for (w, f) in workers.iter().zip(problem.locals()) {
        b.add_assign(w.hessian_approx())?;
        linalg::axpy(1.0, &w.hessian_approx().mat_vec(w.z())?, &mut u);
        linalg::axpy(1.0, &f.grad(w.z())?, &mut g);
    }
    let x = linalg::spd_factor_solve(&b, &linalg::sub(&u, &g))?;
    Ok(Recomputed { b, u, g, x })
}

/// `‖B_inv · Σ B_i − I‖_F`.
pub fn check_inverse(b_inv: &SymMatrix, workers: &[WorkerState]) -> Result<f64> {
    let p = b_inv.dim();
    let mut sum = SymMatrix::zeros(p);
    for w in workers {
        sum.add_assign(w.hessian_approx())?;
    }
    let prod = b_inv.mat_mul(&sum)?;
    let mut acc = 0.0;
    for i in 0..p {
        for j in 0..p {
            let e = prod[i * p + j] - if i == j { 1.0 } else { 0.0 };
            acc += e * e;
        }
    }
    Ok(acc.sqrt())
}

fn check_step(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(OracleError::Contract(format!("step must be positive and finite, got {h}")));
    }
    Ok(())
}

/// Central differences of the objective value, one coordinate at a time.
pub fn finite_diff_grad(f: &LocalObjective, x: &[f64], h: f64) -> Result<Vector> {
    check_step(h)?;
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let up = f.value(&probe)?;
        probe[k] = x[k] - h;
        let down = f.value(&probe)?;
        probe[k] = x[k];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Central differences of the analytic gradient, symmetrized.
pub fn finite_diff_hessian(f: &LocalObjective, x: &[f64], h: f64) -> Result<SymMatrix> {
    check_step(h)?;
    let p = x.len();
    let mut data = vec![0.0; p * p];
    let mut probe = x.to_vec();
    for k in 0..p {
        probe[k] = x[k] + h;
        let up = f.grad(&probe)?;
        probe[k] = x[k] - h;
        let down = f.grad(&probe)?;
        probe[k] = x[k];
        for i in 0..p {
            data[i * p + k] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    Ok(SymMatrix::from_row_major(p, data)?)
}

/// Re-executes the method literally from a worker schedule, keeping every
/// `B_i` explicitly and solving for each iterate from scratch.
///
/// At time `t` worker `schedule[t − 1]` folds in the iterate it was sent at
/// its previous exchange (`x⁰` for its first one), then the master sets
/// `x^t = (Σ B_i)⁻¹ (Σ B_i z_i − Σ ∇f_i(z_i))`. Returns `x⁰, x¹, …`.
pub fn replay_reference(schedule: &[usize], problem: &Problem, init: InitMode, x0: &[f64]) -> Result<Vec<Vector>> {
    let n = problem.n_workers();
    if let Some(&w) = schedule.iter().find(|&&w| w >= n) {
        return Err(OracleError::Contract(format!("schedule names worker {w} of {n}")));
    }
    let mut bs = problem
        .locals()
        .iter()
        .map(|f| init_hessian_approx(init, f, x0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut zs = vec![x0.to_vec(); n];
    let mut sent = vec![x0.to_vec(); n];
    let mut iterates = vec![x0.to_vec()];

    for &i in schedule {
        let f = problem.local(i);
        let s = linalg::sub(&sent[i], &zs[i]);
        let y = linalg::sub(&f.grad(&sent[i])?, &f.grad(&zs[i])?);
        let bs_vec = bs[i].mat_vec(&s)?;
        let sy = linalg::dot(&s, &y);
        let sbs = linalg::dot(&s, &bs_vec);
        let short = linalg::norm(&s) <= STEP_FLOOR * linalg::norm(&sent[i]).max(linalg::norm(&zs[i]));
        if !short && sy > CURVATURE_THRESHOLD * linalg::dot(&s, &s) && sbs > 0.0 {
            let mut next = bs[i].clone();
            next.rank_one_update_mut(&y, 1.0 / sy)?;
            next.rank_one_update_mut(&bs_vec, -1.0 / sbs)?;
            bs[i] = next;
        }
        zs[i] = sent[i].clone();

        let p = problem.dim();
        let mut b = SymMatrix::zeros(p);
        let mut rhs = vec![0.0; p];
        for (k, fk) in problem.locals().iter().enumerate() {
            b.add_assign(&bs[k])?;
            linalg::axpy(1.0, &bs[k].mat_vec(&zs[k])?, &mut rhs);
            linalg::axpy(-1.0, &fk.grad(&zs[k])?, &mut rhs);
        }
        let x = linalg::spd_factor_solve(&b, &rhs)?;
        sent[i] = x.clone();
        iterates.push(x);
    }
    Ok(iterates)
}

/// Delay and epoch quantities rebuilt by direct search over a schedule, with
/// counts of violations of the epoch/delay relations.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLawReport {
    /// `T_1 = 0, T_2, …`
    pub epoch_starts: Vec<u64>,
    /// `D` of the acting worker at each `t ≥ 1`.
    pub double_delays: Vec<u64>,
    /// Epoch index of each `t ≥ 1`.
    pub epochs: Vec<usize>,
    /// Largest delay of any worker at any time.
    pub max_delay: u64,
    /// Times `t` and workers `i` with `t − D_i^t ∉ [T_m, t)` although
    /// `t ∈ [T_{m+1}, T_{m+2})`.
    pub window_violations: usize,
    /// Epochs longer than `2·max_delay + 1`, or starts beyond
    /// `(2·max_delay + 1)·m`. The first epoch may take one step more: the
    /// broadcast at `t = 0` is not an update, so every worker needs two real
    /// ones, the first of which can come as late as `max_delay + 1`.
    pub length_violations: usize,
    /// Times (once every worker has reported) with mean delay below `(n − 1)/2`.
    pub mean_delay_violations: usize,
    /// How many times the mean-delay bound was checked.
    pub mean_delay_checks: usize,
}

impl EpochLawReport {
    pub fn violations(&self) -> usize {
        self.window_violations + self.length_violations + self.mean_delay_violations
    }
}

/// Latest and second latest update of `worker` at or before `t`, 0 if none.
fn last_two(schedule: &[usize], worker: usize, t: usize) -> (u64, u64) {
    let mut found = schedule[..t].iter().enumerate().rev().filter(|(_, &w)| w == worker).map(|(s, _)| s as u64 + 1);
    let last = found.next().unwrap_or(0);
    let prev = found.next().unwrap_or(0);
    (last, prev)
}

pub fn check_epoch_laws(n: usize, schedule: &[usize]) -> EpochLawReport {
    let horizon = schedule.len();
    // Epoch boundaries straight from the definition: the first t with two
    // updates of every worker on the closed interval [T_m, t].
    let mut starts = vec![0u64];
    loop {
        let from = *starts.last().unwrap() as usize;
        let mut counts = vec![0usize; n];
        let mut next = None;
        for t in from.max(1)..=horizon {
            counts[schedule[t - 1]] += 1;
            if counts.iter().all(|&c| c >= 2) {
                next = Some(t as u64);
                break;
            }
        }
        match next {
            Some(t) => starts.push(t),
            None => break,
        }
    }
    let epoch_of = |t: u64| starts.iter().filter(|&&s| s <= t).count();

    let mut report = EpochLawReport {
        epoch_starts: starts.clone(),
        double_delays: Vec::with_capacity(horizon),
        epochs: Vec::with_capacity(horizon),
        max_delay: 0,
        window_violations: 0,
        length_violations: 0,
        mean_delay_violations: 0,
        mean_delay_checks: 0,
    };
    let mut everyone_seen = vec![false; n];
    for t in 0..=horizon {
        if t >= 1 {
            let w = schedule[t - 1];
            everyone_seen[w] = true;
            let (_, prev) = last_two(schedule, w, t);
            report.double_delays.push(t as u64 - prev);
            report.epochs.push(epoch_of(t as u64));
        }
        let mut delay_sum = 0u64;
        let m = epoch_of(t as u64);
        for i in 0..n {
            let (last, prev) = last_two(schedule, i, t);
            let d = t as u64 - last;
            delay_sum += d;
            report.max_delay = report.max_delay.max(d);
            // t lies in [T_m, T_{m+1}); the window check applies from m ≥ 2.
            if m >= 2 {
                let lo = starts[m - 2];
                if !(lo <= prev && prev < t as u64) {
                    report.window_violations += 1;
                }
            }
        }
        if everyone_seen.iter().all(|&s| s) {
            report.mean_delay_checks += 1;
            if (delay_sum as f64) / (n as f64) < (n as f64 - 1.0) / 2.0 {
                report.mean_delay_violations += 1;
            }
        }
    }
    let bound = 2 * report.max_delay + 1;
    for (k, pair) in starts.windows(2).enumerate() {
        let allowed = if k == 0 { bound + 1 } else { bound };
        if pair[1] - pair[0] > allowed {
            report.length_violations += 1;
        }
        // pair[1] is T_{k+2}.
        if pair[1] > bound * (k as u64 + 2) {
            report.length_violations += 1;
        }
    }
    report
}
