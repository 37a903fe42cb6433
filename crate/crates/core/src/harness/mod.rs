//! Seeded experiment orchestration: configs, sweeps, convergence detection,
//! result tables and plots.

pub mod checks;
pub mod config;
pub mod convergence;
pub mod experiment;
pub mod plot;
pub mod results;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bounds::BoundsError;
use crate::diagnostics::DimensionMismatch;
use crate::env::{GapReport, GridError, RareError};
use crate::learner::LearnerError;
use crate::mdp::MdpError;

pub use config::{EnvironmentRef, ExperimentConfig, QCriterion};
pub use convergence::{detect_q_convergence, detect_score_convergence, ScoreCrossing};
pub use experiment::{
    load_environment, run_experiment, run_rare_experiment, run_schedule_comparison, ComparisonReport,
    ExperimentReport, LoadedEnv, RareReport, THREADS_ENV,
};
pub use results::{aggregate, AggregateRow, Measure, ResultRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("no distances logged; supply Q* and a log stride")]
    MissingQStar,
    #[error("unequal budgets: {0}")]
    Budget(String),
    #[error("rare instance fails the gap check: min gap {} < {}", .0.min_gap, .0.d0_required)]
    GapCheck(GapReport),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Rare(#[from] RareError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
