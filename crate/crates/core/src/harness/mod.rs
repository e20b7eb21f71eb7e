//! Experiment orchestration behind the command-line tool.

mod analyze;
mod baseline;
mod cmd;
mod config;
mod reference;

pub use analyze::{analyze_rows, Analysis, EpochStats};
pub use baseline::gradient_descent;
pub use cmd::{cmd_analyze, cmd_baseline_gd, cmd_master, cmd_reference, cmd_run, cmd_worker, RunReport, LAST_K};
pub use config::{load_config, parse_config, Experiment, ProblemSource, RawConfig, RuntimeChoice, OUT_DIR_ENV};
pub use reference::{reference_optimum, GRADIENT_TOLERANCE};

use crate::linalg::LinalgError;
use crate::objective::ObjectiveError;
use crate::runtime::RuntimeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config error at `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("analysis refused: {0}")]
    Analysis(String),
    #[error("did not converge: {0}")]
    NoConvergence(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
