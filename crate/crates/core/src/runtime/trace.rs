use crate::linalg::Vector;
use std::fmt::Write as _;

pub const CSV_HEADER: &str = "t,wall_s,worker,d,D,epoch,subopt,residual";

/// One master update.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    /// Simulated clock in the simulator, seconds since start over TCP.
    pub wall_s: f64,
    pub worker: usize,
    /// Delay of the acting worker at `t − 1`, i.e. how many master updates
    /// it missed since its previous exchange.
    pub d: u64,
    /// Gap between the acting worker's previous exchange and `t`.
    pub double_delay: u64,
    pub epoch: usize,
    /// `f(x^t) − f*`, NaN when no reference is known.
    pub subopt: f64,
    /// `‖x^t − x*‖`, NaN when no reference is known.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxUpdates,
    TargetReached,
    ScheduleExhausted,
    Aborted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub updates: u64,
    /// Epochs whose closing boundary has been observed.
    pub epochs_completed: usize,
    pub final_subopt: f64,
    pub final_residual: f64,
    pub target_reached_at: Option<u64>,
    pub refactorizations: u64,
    pub skipped_updates: u64,
    pub wall_s: f64,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub n_workers: usize,
    pub rows: Vec<TraceRow>,
    /// `iterates[t]` is `x^t`; `iterates[0]` is the starting point.
    pub iterates: Vec<Vector>,
    /// `T_1 = 0, T_2, …` as emitted so far.
    pub epoch_starts: Vec<u64>,
    pub summary: TraceSummary,
}

fn fmt_float(out: &mut String, v: f64) {
    // Both forms print the shortest digits that parse back to `v`.
    if v.is_nan() {
        out.push_str("nan");
    } else if v == 0.0 || (1e-4..1e15).contains(&v.abs()) {
        let _ = write!(out, "{v}");
    } else {
        let _ = write!(out, "{v:e}");
    }
}

impl Trace {
    /// Acting worker per logical time, starting at `t = 1`.
    pub fn schedule(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.worker).collect()
    }

    pub fn final_iterate(&self) -> &[f64] {
        self.iterates.last().expect("trace always holds x⁰")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},", r.t);
            fmt_float(&mut out, r.wall_s);
            let _ = write!(out, ",{},{},{},{},", r.worker, r.d, r.double_delay, r.epoch);
            fmt_float(&mut out, r.subopt);
            out.push(',');
            fmt_float(&mut out, r.residual);
            out.push('\n');
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "workers = {}", self.n_workers);
        let _ = writeln!(out, "updates = {}", s.updates);
        let _ = writeln!(out, "epochs_completed = {}", s.epochs_completed);
        let _ = writeln!(out, "final_subopt = {}", s.final_subopt);
        let _ = writeln!(out, "final_residual = {}", s.final_residual);
        match s.target_reached_at {
            Some(t) => {
                let _ = writeln!(out, "updates_to_target = {t}");
                // Index of the epoch the target was hit in, partial one included.
                if let Some(row) = self.rows.iter().rev().find(|r| r.t == t) {
                    let _ = writeln!(out, "epochs_to_target = {}", row.epoch);
                }
            }
            None => out.push_str("updates_to_target = none\n"),
        }
        let _ = writeln!(out, "refactorizations = {}", s.refactorizations);
        let _ = writeln!(out, "skipped_updates = {}", s.skipped_updates);
        let _ = writeln!(out, "wall_s = {}", s.wall_s);
        let _ = writeln!(out, "stop = {:?}", s.stop);
        out
    }
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct CsvError {
    pub line: usize,
    pub msg: String,
}

fn parse_float(tok: &str) -> Result<f64, String> {
    if tok == "nan" {
        Ok(f64::NAN)
    } else {
        tok.parse().map_err(|_| format!("bad number {tok:?}"))
    }
}

/// Reads rows written by [`Trace::to_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>, CsvError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(CsvError {
                line: 1,
                msg: format!("expected header {CSV_HEADER:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| CsvError { line: idx + 1, msg };
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| format!("bad integer {s:?}"));
        rows.push(TraceRow {
            t: int(f[0]).map_err(err)?,
            wall_s: parse_float(f[1]).map_err(err)?,
            worker: int(f[2]).map_err(err)? as usize,
            d: int(f[3]).map_err(err)?,
            double_delay: int(f[4]).map_err(err)?,
            epoch: int(f[5]).map_err(err)? as usize,
            subopt: parse_float(f[6]).map_err(err)?,
            residual: parse_float(f[7]).map_err(err)?,
        });
    }
    Ok(rows)
}
