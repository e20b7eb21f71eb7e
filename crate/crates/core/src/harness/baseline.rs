use super::Result;
use crate::linalg;
use crate::objective::Problem;
use crate::runtime::{Reference, StopReason, Trace, TraceRow, TraceSummary};

/// Centralized gradient descent with step `1/L`, `L` found by backtracking.
///
/// Each iteration first halves `L`, then doubles it until
/// `f(x − ∇f/L) ≤ f(x) − ‖∇f‖²/(2L)`. One iteration needs every worker's
/// gradient, so it is charged `n` updates: row `k` of the trace has
/// `t = k·n`.
pub fn gradient_descent(
    problem: &Problem,
    reference: Option<&Reference>,
    max_iterations: u64,
    target_subopt: Option<f64>,
) -> Result<Trace> {
    let n = problem.n_workers() as u64;
    let mut x = vec![0.0; problem.dim()];
    let mut fx = problem.value(&x)?;
    let mut lipschitz = 1.0;
    let metrics = |x: &[f64], fx: f64| match reference {
        Some(r) => (fx - r.f_star, linalg::norm(&linalg::sub(x, &r.x_star))),
        None => (f64::NAN, f64::NAN),
    };
    let (subopt0, residual0) = metrics(&x, fx);
    let mut trace = Trace {
        n_workers: problem.n_workers(),
        rows: Vec::new(),
        iterates: vec![x.clone()],
        epoch_starts: vec![0],
        summary: TraceSummary {
            updates: 0,
            epochs_completed: 0,
            final_subopt: subopt0,
            final_residual: residual0,
            target_reached_at: None,
            refactorizations: 0,
            skipped_updates: 0,
            wall_s: 0.0,
            stop: StopReason::MaxUpdates,
        },
    };

    for k in 1..=max_iterations {
        let g = problem.grad(&x)?;
        let gg = linalg::dot(&g, &g);
        lipschitz *= 0.5;
        let (next, f_next) = loop {
            let mut trial = x.clone();
            linalg::axpy(-1.0 / lipschitz, &g, &mut trial);
            let ft = problem.value(&trial)?;
            if ft <= fx - gg / (2.0 * lipschitz) || gg == 0.0 {
                break (trial, ft);
            }
            lipschitz *= 2.0;
        };
        x = next;
        fx = f_next;
        let (subopt, residual) = metrics(&x, fx);
        let t = k * n;
        trace.rows.push(TraceRow {
            t,
            wall_s: k as f64,
            worker: 0,
            d: 0,
            double_delay: n,
            // Every iteration touches each worker once, so two iterations
            // make an epoch.
            epoch: (k as usize).div_ceil(2),
            subopt,
            residual,
        });
        trace.iterates.push(x.clone());
        let s = &mut trace.summary;
        s.updates = t;
        s.final_subopt = subopt;
        s.final_residual = residual;
        s.wall_s = k as f64;
        s.epochs_completed = k as usize / 2;
        if target_subopt.is_some_and(|target| subopt <= target) {
            s.target_reached_at = Some(t);
            s.stop = StopReason::TargetReached;
            break;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::reference_optimum;
    use crate::objective::{synth_logistic, synth_quadratic};

    #[test]
    fn well_conditioned_quadratic_converges() {
        let problem = synth_quadratic(1, 2, 4, 1.0);
        let r = reference_optimum(&problem).unwrap();
        let trace = gradient_descent(&problem, Some(&r), 10_000, Some(1e-12)).unwrap();
        assert_eq!(trace.summary.stop, StopReason::TargetReached);
    }

    #[test]
    fn objective_never_increases() {
        let problem = synth_logistic(2, 3, 6, 40, 100.0, 0.05).problem().unwrap();
        let r = reference_optimum(&problem).unwrap();
        let trace = gradient_descent(&problem, Some(&r), 300, None).unwrap();
        assert!(trace.rows.windows(2).all(|w| w[1].subopt <= w[0].subopt));
        assert_eq!(trace.rows.last().unwrap().t, 900);
    }
}
