//! Tabular Q-learning with uniform experience replay.
//!
//! The crate covers the learners (asynchronous and synchronous), the replay
//! buffer and covering-constant estimator, sample-complexity bound
//! calculators, the grid-world and rare-experience environments, noise
//! diagnostics, and a seeded experiment harness.

pub mod bounds;
pub mod diagnostics;
pub mod env;
pub mod harness;
pub mod learner;
pub mod mdp;
pub mod replay;
pub mod rng;

pub use bounds::{BoundParams, BoundReport, BoundsError, RelaxedBound};
pub use learner::{
    run, run_async, run_sync, LearnerConfig, LearnerError, ReplaySchedule, RunTrace, StepKind,
};
pub use mdp::{
    bellman_backup, optimal_q, sample_step, validate_mdp, MdpError, QTable, RewardSpec, TabularMdp,
    ValidationReport,
};
pub use replay::{covering_constant, ReplayBuffer, Transition, Visit};
