//! Experiment configuration documents (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::bounds::rare_horizon;
use crate::learner::{ReplaySchedule, DEFAULT_EXPLORE_RATE};

/// Where the MDP of an experiment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentRef {
    /// `layout` is a shipped layout name (`medium`, `hard`) or a path to a
    /// layout file, resolved against the config file's directory.
    Grid { layout: String, gamma: f64 },
    /// MDP JSON document.
    Mdp { path: PathBuf },
    /// Shipped rare-experience instance. The horizon is
    /// `T' = max(20000, 100 t)`; `eps_rare` defaults to `1.73 / (T' p)` with
    /// `p` measured by a pilot run.
    Rare {
        #[serde(default = "default_rare_t")]
        t: u64,
        #[serde(default)]
        eps_rare: Option<f64>,
    },
    /// Random MDP drawn from `instance_seed`.
    Random {
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        #[serde(default)]
        stochastic_rewards: bool,
        #[serde(default)]
        instance_seed: u64,
    },
}

fn default_rare_t() -> u64 {
    200
}

impl EnvironmentRef {
    /// Parses the compact command-line form:
    /// `grid:<layout>`, `mdp:<path>`, `rare[:<eps>]`,
    /// `random:<states>x<actions>[:<seed>]`.
    pub fn parse_compact(text: &str, gamma: f64) -> Result<Self, HarnessError> {
        let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
        let bad = || HarnessError::Config(format!("cannot parse environment {text:?}"));
        match kind {
            "grid" if !rest.is_empty() => Ok(Self::Grid {
                layout: rest.to_string(),
                gamma,
            }),
            "mdp" if !rest.is_empty() => Ok(Self::Mdp { path: rest.into() }),
            "rare" => Ok(Self::Rare {
                t: default_rare_t(),
                eps_rare: if rest.is_empty() {
                    None
                } else {
                    Some(rest.parse().map_err(|_| bad())?)
                },
            }),
            "random" => {
                let (dims, seed) = rest.split_once(':').unwrap_or((rest, "0"));
                let (s, a) = dims.split_once('x').ok_or_else(bad)?;
                Ok(Self::Random {
                    n_states: s.parse().map_err(|_| bad())?,
                    n_actions: a.parse().map_err(|_| bad())?,
                    gamma,
                    stochastic_rewards: false,
                    instance_seed: seed.parse().map_err(|_| bad())?,
                })
            }
            _ => Err(bad()),
        }
    }

    pub fn rare_horizon(&self) -> Option<u64> {
        match self {
            Self::Rare { t, .. } => Some(rare_horizon(*t)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerTemplate {
    pub q_init: f64,
    pub explore_rate: f64,
    /// Iteration cap per run.
    pub horizon: u64,
    pub sync: bool,
    /// Distance logging stride; required for Q-convergence detection.
    pub log_stride: u64,
}

impl Default for LearnerTemplate {
    fn default() -> Self {
        Self {
            q_init: 0.0,
            explore_rate: DEFAULT_EXPLORE_RATE,
            horizon: 1_000_000,
            sync: false,
            log_stride: 0,
        }
    }
}

/// Sweep cells: the product `m × k` (any `m = 0` collapses to a single
/// no-replay cell), followed by any explicit schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub m: Vec<usize>,
    pub k: Vec<usize>,
    pub schedules: Vec<ReplaySchedule>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            m: vec![0],
            k: vec![1],
            schedules: Vec::new(),
        }
    }
}

impl SweepAxes {
    pub fn cells(&self) -> Vec<ReplaySchedule> {
        let mut cells = Vec::new();
        for &m in &self.m {
            for &k in &self.k {
                let cell = if m == 0 {
                    ReplaySchedule::None
                } else {
                    ReplaySchedule::Constant { m, k }
                };
                if !cells.contains(&cell) {
                    cells.push(cell);
                }
            }
        }
        cells.extend(self.schedules.iter().cloned());
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QCriterion {
    /// Sup-norm distance to Q*.
    Distance,
    /// Sup-norm change between consecutive logged tables.
    Change,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub score_threshold: Option<f64>,
    /// End each run at the first episode meeting the score threshold.
    pub stop_at_score: bool,
    pub q_threshold: f64,
    pub q_criterion: QCriterion,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            score_threshold: None,
            stop_at_score: true,
            q_threshold: 1e-4,
            q_criterion: QCriterion::Distance,
        }
    }
}

/// Greedy evaluation after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    /// Step cap per rollout; 0 means the number of states.
    pub rollout_steps: usize,
    /// 0 disables evaluation.
    pub episodes: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            rollout_steps: 0,
            episodes: 1,
        }
    }
}

/// Two-arm schedule comparison at a fixed iteration budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub total_budget: u64,
    pub replay_budget: u64,
    pub interval: usize,
    /// Replay updates per interval for the constant arm.
    pub constant_m: usize,
    /// Explicit arms replacing the default constant/increasing pair.
    pub arms: Option<Vec<ReplaySchedule>>,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            total_budget: 75_000,
            replay_budget: 25_000,
            interval: 100,
            constant_m: 50,
            arms: None,
        }
    }
}

impl ComparisonConfig {
    /// The constant arm and a linear ramp spending the same replay budget
    /// over the same number of replay events.
    pub fn arms(&self) -> Result<Vec<ReplaySchedule>, HarnessError> {
        if let Some(arms) = &self.arms {
            return Ok(arms.clone());
        }
        if self.interval == 0 || self.replay_budget > self.total_budget {
            return Err(HarnessError::Config(
                "comparison needs interval >= 1 and replay budget <= total budget".into(),
            ));
        }
        let online = self.total_budget - self.replay_budget;
        let events = (online / self.interval as u64) as usize;
        if events == 0 {
            return Err(HarnessError::Config(
                "online budget shorter than one interval".into(),
            ));
        }
        Ok(vec![
            ReplaySchedule::Constant {
                m: self.constant_m,
                k: self.interval,
            },
            ReplaySchedule::linear_ramp(self.interval, events, self.replay_budget as usize),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RareConfig {
    pub post_replay_iterations: u64,
    pub d0: f64,
    /// Target accuracy after post-hoc replay.
    pub psi: f64,
}

impl Default for RareConfig {
    fn default() -> Self {
        Self {
            post_replay_iterations: 100_000,
            d0: 1.0,
            psi: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub rows: Option<PathBuf>,
    pub aggregate: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub base_seed: u64,
    pub repetitions: usize,
    pub environment: EnvironmentRef,
    #[serde(default)]
    pub learner: LearnerTemplate,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub eval: EvalProtocol,
    #[serde(default)]
    pub comparison: ComparisonConfig,
    #[serde(default)]
    pub rare: RareConfig,
    #[serde(default)]
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.repetitions == 0 {
            return fail("repetitions must be >= 1".into());
        }
        if let Some(thr) = self.convergence.score_threshold {
            if !thr.is_finite() {
                return fail("score threshold must be finite".into());
            }
        }
        if !(self.convergence.q_threshold.is_finite() && self.convergence.q_threshold >= 0.0) {
            return fail("q threshold must be finite and nonnegative".into());
        }
        if self.learner.horizon == 0 {
            return fail("horizon must be >= 1".into());
        }
        if self.sweep.m.is_empty() || self.sweep.k.is_empty() {
            return fail("sweep axes m and k must be nonempty".into());
        }
        if self.sweep.k.contains(&0) {
            return fail("sweep k values must be >= 1".into());
        }
        for cell in self.sweep.cells() {
            cell.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if !(self.rare.d0.is_finite() && self.rare.d0 > 0.0 && self.rare.psi.is_finite()) {
            return fail("rare d0 and psi must be finite, d0 > 0".into());
        }
        Ok(())
    }
}
