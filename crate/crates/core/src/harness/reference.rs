use super::{HarnessError, Result};
use crate::linalg;
use crate::objective::Problem;
use crate::runtime::Reference;

pub const GRADIENT_TOLERANCE: f64 = 1e-12;
const MAX_NEWTON_STEPS: usize = 200;
const ARMIJO: f64 = 1e-4;

/// Damped Newton on the pooled objective, run until `‖∇f‖ ≤ 1e−12`.
///
/// Backtracking halves the step until the Armijo condition holds. Once the
/// predicted decrease is below what `f` can resolve the full step is taken,
/// since close to the optimum the comparison is pure rounding noise.
pub fn reference_optimum(problem: &Problem) -> Result<Reference> {
    let mut x = vec![0.0; problem.dim()];
    let mut fx = problem.value(&x)?;
    for _ in 0..MAX_NEWTON_STEPS {
        let g = problem.grad(&x)?;
        if linalg::norm(&g) <= GRADIENT_TOLERANCE {
            return Ok(Reference { x_star: x, f_star: fx });
        }
        let h = problem.hessian(&x)?;
        let dir = linalg::scale(-1.0, &linalg::spd_factor_solve(&h, &g)?);
        let slope = linalg::dot(&g, &dir);
        let resolvable = -slope > 1e-13 * fx.abs().max(1.0);
        let mut step = 1.0;
        loop {
            let mut trial = x.clone();
            linalg::axpy(step, &dir, &mut trial);
            let ft = problem.value(&trial)?;
            if !resolvable || ft <= fx + ARMIJO * step * slope {
                x = trial;
                fx = ft;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(HarnessError::NoConvergence("line search stalled".into()));
            }
        }
    }
    let gnorm = linalg::norm(&problem.grad(&x)?);
    if gnorm <= GRADIENT_TOLERANCE {
        return Ok(Reference { x_star: x, f_star: fx });
    }
    Err(HarnessError::NoConvergence(format!(
        "gradient norm {gnorm:e} after {MAX_NEWTON_STEPS} Newton steps"
    )))
}
