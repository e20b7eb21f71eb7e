use super::{HarnessError, Result};
use crate::runtime::TraceRow;
use std::fmt::Write as _;

/// One completed epoch of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub m: usize,
    pub start: u64,
    /// Largest `‖x^t − x*‖` over `t ∈ [T_m, T_{m+1})`.
    pub max_residual: f64,
    /// `max_residual(m + 1) / max_residual(m)`, when epoch `m + 1` is complete too.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub epochs: Vec<EpochStats>,
    pub last_k: usize,
    /// The last `last_k` ratios are strictly decreasing.
    pub monotone_last_k: bool,
    /// Geometric rate `exp(slope)` of a least-squares fit of
    /// `ln max_residual` against `m` over the first half of the epochs.
    pub early_rate: f64,
}

impl Analysis {
    pub fn ratios(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.ratio).collect()
    }

    pub fn last_ratios(&self) -> Vec<f64> {
        let r = self.ratios();
        r[r.len().saturating_sub(self.last_k)..].to_vec()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,T_m,max_residual,rho\n");
        for e in &self.epochs {
            let _ = write!(out, "{},{},{:e},", e.m, e.start, e.max_residual);
            match e.ratio {
                Some(r) => {
                    let _ = writeln!(out, "{r:e}");
                }
                None => out.push_str("nan\n"),
            }
        }
        let _ = writeln!(out, "# monotone_last_{}={}", self.last_k, self.monotone_last_k);
        let _ = writeln!(out, "# early_rate={:e}", self.early_rate);
        out
    }
}

/// Per-epoch maximal residuals and their successive ratios. Only epochs
/// whose successor has started count as completed; at least three are
/// needed.
pub fn analyze_rows(rows: &[TraceRow], last_k: usize) -> Result<Analysis> {
    if rows.iter().any(|r| r.residual.is_nan()) {
        return Err(HarnessError::Analysis("trace has no residuals (reference unknown)".into()));
    }
    let mut epochs: Vec<EpochStats> = Vec::new();
    for r in rows {
        match epochs.last_mut() {
            Some(e) if e.m == r.epoch => e.max_residual = e.max_residual.max(r.residual),
            Some(e) if r.epoch < e.m => {
                return Err(HarnessError::Analysis(format!("epoch index decreases at t = {}", r.t)));
            }
            _ => epochs.push(EpochStats {
                m: r.epoch,
                start: if r.epoch == 1 { 0 } else { r.t },
                max_residual: r.residual,
                ratio: None,
            }),
        }
    }
    // The last epoch seen has not been closed.
    epochs.pop();
    if epochs.len() < 3 {
        return Err(HarnessError::Analysis(format!(
            "{} completed epochs, at least 3 needed",
            epochs.len()
        )));
    }
    for k in 0..epochs.len() - 1 {
        epochs[k].ratio = Some(epochs[k + 1].max_residual / epochs[k].max_residual);
    }

    let ratios: Vec<f64> = epochs.iter().filter_map(|e| e.ratio).collect();
    let tail = &ratios[ratios.len().saturating_sub(last_k)..];
    let monotone_last_k = tail.len() == last_k.min(ratios.len()) && tail.windows(2).all(|w| w[1] < w[0]);

    let early = &epochs[..(epochs.len() / 2).max(2)];
    let (xs, ys): (Vec<f64>, Vec<f64>) = early.iter().map(|e| (e.m as f64, e.max_residual.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(Analysis {
        epochs,
        last_k,
        monotone_last_k,
        early_rate: (sxy / sxx).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One row per epoch boundary plus one inside, with the given maxima.
    fn rows_from(maxima: &[f64]) -> Vec<TraceRow> {
        let mut rows = Vec::new();
        let mut t = 0;
        for (k, &m) in maxima.iter().enumerate() {
            for r in [m, 0.5 * m] {
                t += 1;
                rows.push(TraceRow {
                    t,
                    wall_s: t as f64,
                    worker: 0,
                    d: 0,
                    double_delay: 1,
                    epoch: k + 1,
                    subopt: 0.0,
                    residual: r,
                });
            }
        }
        rows
    }

    #[test]
    fn geometric_residuals_give_constant_ratio() {
        let maxima: Vec<f64> = (0..8).map(|m| 0.3f64.powi(m)).collect();
        let a = analyze_rows(&rows_from(&maxima), 3).unwrap();
        assert_eq!(a.epochs.len(), 7);
        for r in a.ratios() {
            assert!((r - 0.3).abs() < 1e-12);
        }
        assert!((a.early_rate - 0.3).abs() < 1e-9);
        assert!(!a.monotone_last_k);
    }

    #[test]
    fn superlinear_residuals_give_decreasing_ratios() {
        let maxima: Vec<f64> = (1..9).map(|m: i32| 0.5f64.powi(m * m)).collect();
        let a = analyze_rows(&rows_from(&maxima), 3).unwrap();
        let r = a.ratios();
        assert!(r.windows(2).all(|w| w[1] < w[0]));
        assert!(a.monotone_last_k);
    }

    #[test]
    fn too_few_epochs_refused() {
        assert!(analyze_rows(&rows_from(&[1.0, 0.5, 0.25]), 3).is_err());
        let mut rows = rows_from(&[1.0, 0.5, 0.25, 0.1, 0.01]);
        rows[0].residual = f64::NAN;
        assert!(analyze_rows(&rows, 3).is_err());
    }
}
