//! Two drivers for the same master/worker state machines: a deterministic
//! discrete-event simulator and a TCP deployment.

mod sim;
mod tcp;
mod trace;

pub use sim::{run_simulated, DelayModel, SimConfig, Simulator};
pub use tcp::{run_master_tcp, run_worker_tcp, MasterConfig, WorkerConfig};
pub use trace::{parse_trace_csv, CsvError, StopReason, Trace, TraceRow, TraceSummary, CSV_HEADER};

use crate::bfgs::BfgsError;
use crate::linalg::{self, Vector};
use crate::objective::{ObjectiveError, Problem};
use crate::protocol::ProtocolError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Bfgs(#[from] BfgsError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("startup failed: {0}")]
    Startup(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("worker {worker} disconnected")]
    Disconnected { worker: usize },
    /// The run stopped early; the trace up to the failure is kept for
    /// diagnosis.
    #[error("run aborted at t = {}: {source}", .trace.summary.updates)]
    Aborted {
        source: Box<RuntimeError>,
        trace: Box<Trace>,
    },
}

pub type Result<T> = std::result::Result<T, RuntimeError>;

/// Known minimizer of the pooled objective, used for trace metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x_star: Vector,
    pub f_star: f64,
}

/// When a run stops: after `max_updates` master updates, or as soon as the
/// suboptimality drops to `target_subopt` (needs a reference).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Termination {
    pub max_updates: u64,
    pub target_subopt: Option<f64>,
}

impl Termination {
    pub fn updates(max_updates: u64) -> Self {
        Self {
            max_updates,
            target_subopt: None,
        }
    }
}

/// `(f(x) − f*, ‖x − x*‖)`, both NaN without a reference.
pub(crate) fn metrics(problem: &Problem, reference: Option<&Reference>, x: &[f64]) -> Result<(f64, f64)> {
    match reference {
        Some(r) => {
            let subopt = problem.value(x)? - r.f_star;
            let residual = linalg::norm(&linalg::sub(x, &r.x_star));
            Ok((subopt, residual))
        }
        None => Ok((f64::NAN, f64::NAN)),
    }
}

/// Bookkeeping shared by both drivers: ledger, epochs, metrics and rows.
pub(crate) struct Recorder<'a> {
    problem: &'a Problem,
    reference: Option<&'a Reference>,
    termination: Termination,
    ledger: crate::protocol::DelayLedger,
    epochs: crate::protocol::EpochTracker,
    trace: Trace,
}

impl<'a> Recorder<'a> {
    pub(crate) fn new(
        problem: &'a Problem,
        reference: Option<&'a Reference>,
        termination: Termination,
        x0: &[f64],
    ) -> Result<Self> {
        if termination.target_subopt.is_some() && reference.is_none() {
            return Err(RuntimeError::Config(
                "a suboptimality target needs a reference optimum".into(),
            ));
        }
        let n = problem.n_workers();
        let (subopt, residual) = metrics(problem, reference, x0)?;
        Ok(Self {
            problem,
            reference,
            termination,
            ledger: crate::protocol::DelayLedger::new(n),
            epochs: crate::protocol::EpochTracker::new(n),
            trace: Trace {
                n_workers: n,
                rows: Vec::new(),
                iterates: vec![x0.to_vec()],
                epoch_starts: vec![0],
                summary: TraceSummary {
                    updates: 0,
                    epochs_completed: 0,
                    final_subopt: subopt,
                    final_residual: residual,
                    target_reached_at: None,
                    refactorizations: 0,
                    skipped_updates: 0,
                    wall_s: 0.0,
                    stop: StopReason::MaxUpdates,
                },
            },
        })
    }

    pub(crate) fn ledger(&self) -> &crate::protocol::DelayLedger {
        &self.ledger
    }

    pub(crate) fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Records the master update at `t` and reports whether the run should
    /// stop.
    pub(crate) fn record(
        &mut self,
        t: u64,
        worker: usize,
        wall_s: f64,
        x: &[f64],
        skipped: bool,
        refactorized: bool,
    ) -> Result<Option<StopReason>> {
        let before = self.ledger.last_update(worker);
        let (_, double_delay) = self.ledger.on_update(worker, t)?;
        if let Some(start) = self.epochs.on_update(worker, t)? {
            self.trace.epoch_starts.push(start);
        }
        let (subopt, residual) = metrics(self.problem, self.reference, x)?;
        self.trace.rows.push(TraceRow {
            t,
            wall_s,
            worker,
            d: t - 1 - before,
            double_delay,
            epoch: self.epochs.epoch(),
            subopt,
            residual,
        });
        self.trace.iterates.push(x.to_vec());
        let s = &mut self.trace.summary;
        s.updates = t;
        s.epochs_completed = self.trace.epoch_starts.len() - 1;
        s.final_subopt = subopt;
        s.final_residual = residual;
        s.wall_s = wall_s;
        s.skipped_updates += u64::from(skipped);
        s.refactorizations += u64::from(refactorized);

        if let Some(target) = self.termination.target_subopt {
            if subopt <= target {
                s.target_reached_at = Some(t);
                s.stop = StopReason::TargetReached;
                return Ok(Some(StopReason::TargetReached));
            }
        }
        if t >= self.termination.max_updates {
            s.stop = StopReason::MaxUpdates;
            return Ok(Some(StopReason::MaxUpdates));
        }
        Ok(None)
    }

    pub(crate) fn finish(mut self, stop: StopReason) -> Trace {
        self.trace.summary.stop = stop;
        self.trace
    }

    pub(crate) fn abort(mut self, source: RuntimeError) -> RuntimeError {
        self.trace.summary.stop = StopReason::Aborted;
        RuntimeError::Aborted {
            source: Box::new(source),
            trace: Box::new(self.trace),
        }
    }
}
