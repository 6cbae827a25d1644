//! Failure windows, robustness sweeps, metric/error correlation and loop-closure
//! threshold estimation on top of recorded or live runs.

mod correlate;
mod failures;
mod loops;
mod report;
mod sweep;

pub use correlate::*;
pub use failures::*;
pub use loops::*;
pub use report::*;
pub use sweep::*;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{associate, DatasetError, Trajectory, DEFAULT_MAX_GAP_NS};
use crate::perturbation::ConfigError;
use crate::runner::{AlgorithmCommand, RunRecord, RunnerError, SessionOptions};
use crate::trajectory_metrics::{ate_rmse, error_series, AlignmentMode, ErrorOptions, ErrorSeries, TrajectoryError};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("baseline run failed: {0}")]
    Baseline(String),
    #[error("no valid loop pairs; rejected: {rejected:?}")]
    InvalidPairs { rejected: Vec<(u64, u64)> },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// What to run and how to score it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTarget {
    pub command: AlgorithmCommand,
    pub dataset: PathBuf,
    pub session: SessionOptions,
    pub max_gap_ns: u64,
    pub errors: ErrorOptions,
}

impl BenchTarget {
    pub fn new(command: AlgorithmCommand, dataset: impl Into<PathBuf>) -> Self {
        BenchTarget {
            command,
            dataset: dataset.into(),
            session: SessionOptions::default(),
            max_gap_ns: DEFAULT_MAX_GAP_NS,
            errors: ErrorOptions::default(),
        }
    }
}

/// Why a run could not be scored.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("no estimates")]
    NoEstimates,
    #[error("no estimate within the association gap of the reference")]
    NoOverlap,
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// ATE RMSE of a run against `reference`.
pub fn score_ate(run: &RunRecord, reference: &Trajectory, max_gap_ns: u64, mode: AlignmentMode) -> Result<f64, ScoreError> {
    let est = run.estimate_trajectory().ok_or(ScoreError::NoEstimates)?;
    let pairs = associate(&est, reference, max_gap_ns).map_err(|_| ScoreError::NoOverlap)?;
    Ok(ate_rmse(&est, reference, &pairs, mode)?.rmse_m)
}

/// Full per-frame error series of a run against `reference`.
pub fn score_series(run: &RunRecord, reference: &Trajectory, max_gap_ns: u64, opts: ErrorOptions) -> Result<ErrorSeries, ScoreError> {
    let est = run.estimate_trajectory().ok_or(ScoreError::NoEstimates)?;
    let pairs = associate(&est, reference, max_gap_ns).map_err(|_| ScoreError::NoOverlap)?;
    Ok(error_series(&est, reference, &pairs, opts)?)
}

pub(crate) fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, DiagnosticsError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if jobs > 0 {
        b = b.num_threads(jobs);
    }
    b.build().map_err(|e| DiagnosticsError::Pool(e.to_string()))
}
