//! Exact finite MDPs: representation, validation, simulation and the Bellman
//! optimality operator.
//!
//! Transition rows are stored dense, indexed `(s, a, s')`, which is plenty for
//! the few-hundred-state problems this crate targets.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on probability sums. Layouts and compositions are built exactly,
/// so this only has to absorb floating-point summation error.
pub const PROB_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("dimension mismatch: expected {expected} entries, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("state-action pair ({s},{a}) out of range for {n_states}x{n_actions} MDP")]
    InvalidPair {
        s: usize,
        a: usize,
        n_states: usize,
        n_actions: usize,
    },
    #[error("invalid MDP: {0}")]
    Invalid(ValidationReport),
    #[error("malformed MDP document: {0}")]
    Document(String),
}

/// Reward model attached to every state-action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSpec {
    /// `r(s, a)` stored row-major, `n_states * n_actions` entries.
    Deterministic(Vec<f64>),
    /// One finite-support distribution per pair, row-major.
    Stochastic(Vec<RewardDistribution>),
}

/// Finite-support reward distribution as `(value, probability)` outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDistribution {
    pub outcomes: Vec<(f64, f64)>,
}

impl RewardDistribution {
    pub fn constant(value: f64) -> Self {
        Self {
            outcomes: vec![(value, 1.0)],
        }
    }

    pub fn mean(&self) -> f64 {
        self.outcomes.iter().map(|(v, p)| v * p).sum()
    }

    fn sample(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for &(v, p) in &self.outcomes {
            acc += p;
            if u < acc {
                return v;
            }
        }
        // u landed in the rounding slack above the cumulative sum
        self.outcomes
            .iter()
            .rev()
            .find(|(_, p)| *p > 0.0)
            .map(|(v, _)| *v)
            .unwrap_or(0.0)
    }
}

/// A finite tabular MDP.
///
/// Episodic environments mark goal states; any action taken in a goal state
/// ends the current episode. Continuing tasks leave `goal_states` empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<f64>,
    rewards: RewardSpec,
    gamma: f64,
    r_max: f64,
    start_state: usize,
    goal_states: Vec<usize>,
}

/// A single defect found by [`validate_mdp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroStates,
    ZeroActions,
    GammaOutOfRange(f64),
    NegativeRewardBound(f64),
    TransitionShape {
        expected: usize,
        actual: usize,
    },
    RewardShape {
        expected: usize,
        actual: usize,
    },
    EntryOutOfRange {
        s: usize,
        a: usize,
        next: usize,
        p: f64,
    },
    RowSum {
        s: usize,
        a: usize,
        sum: f64,
    },
    RewardExceedsBound {
        s: usize,
        a: usize,
        value: f64,
        r_max: f64,
    },
    RewardProbability {
        s: usize,
        a: usize,
        sum: f64,
    },
    StartOutOfRange(usize),
    GoalOutOfRange(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroStates => write!(f, "no states"),
            Violation::ZeroActions => write!(f, "no actions"),
            Violation::GammaOutOfRange(g) => write!(f, "gamma {g} not in (0,1)"),
            Violation::NegativeRewardBound(r) => write!(f, "r_max {r} is negative"),
            Violation::TransitionShape { expected, actual } => {
                write!(f, "transition tensor has {actual} entries, expected {expected}")
            }
            Violation::RewardShape { expected, actual } => {
                write!(f, "reward table has {actual} entries, expected {expected}")
            }
            Violation::EntryOutOfRange { s, a, next, p } => {
                write!(f, "row ({s},{a}) entry {next} = {p} outside [0,1]")
            }
            Violation::RowSum { s, a, sum } => write!(f, "row ({s},{a}) sums to {sum}"),
            Violation::RewardExceedsBound { s, a, value, r_max } => {
                write!(f, "reward {value} at ({s},{a}) exceeds bound r_max = {r_max}")
            }
            Violation::RewardProbability { s, a, sum } => {
                write!(f, "reward distribution at ({s},{a}) sums to {sum}")
            }
            Violation::StartOutOfRange(s) => write!(f, "start state {s} out of range"),
            Violation::GoalOutOfRange(s) => write!(f, "goal state {s} out of range"),
        }
    }
}

/// Result of [`validate_mdp`]; empty means valid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl TabularMdp {
    /// Builds an MDP and rejects it unless every invariant holds.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: RewardSpec,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self, MdpError> {
        let mdp = Self::new_unchecked(n_states, n_actions, transitions, rewards, gamma, r_max);
        mdp.checked()
    }

    /// Builds an MDP without validation. Use [`validate_mdp`] to inspect it.
    pub fn new_unchecked(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: RewardSpec,
        gamma: f64,
        r_max: f64,
    ) -> Self {
        Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
            r_max,
            start_state: 0,
            goal_states: Vec::new(),
        }
    }

    /// Deterministic MDP from a successor table and a reward table, both
    /// row-major over `(s, a)`.
    pub fn deterministic(
        n_states: usize,
        n_actions: usize,
        next: &[usize],
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self, MdpError> {
        let pairs = n_states * n_actions;
        if next.len() != pairs {
            return Err(MdpError::DimensionMismatch {
                expected: pairs,
                actual: next.len(),
            });
        }
        let mut transitions = vec![0.0; pairs * n_states];
        for (pair, &s_next) in next.iter().enumerate() {
            if s_next >= n_states {
                return Err(MdpError::InvalidPair {
                    s: s_next,
                    a: 0,
                    n_states,
                    n_actions,
                });
            }
            transitions[pair * n_states + s_next] = 1.0;
        }
        let r_max = rewards.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        Self::new(
            n_states,
            n_actions,
            transitions,
            RewardSpec::Deterministic(rewards),
            gamma,
            r_max,
        )
    }

    pub fn with_start(mut self, start: usize) -> Self {
        self.start_state = start;
        self
    }

    pub fn with_goals(mut self, goals: Vec<usize>) -> Self {
        self.goal_states = goals;
        self
    }

    fn checked(self) -> Result<Self, MdpError> {
        let report = validate_mdp(&self);
        if report.is_ok() {
            Ok(self)
        } else {
            Err(MdpError::Invalid(report))
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn rewards(&self) -> &RewardSpec {
        &self.rewards
    }

    pub fn start_state(&self) -> usize {
        self.start_state
    }

    pub fn goal_states(&self) -> &[usize] {
        &self.goal_states
    }

    pub fn is_goal(&self, s: usize) -> bool {
        self.goal_states.contains(&s)
    }

    /// `R_max / (1 - gamma)`.
    pub fn v_max(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }

    /// A copy with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self, MdpError> {
        let mut out = self.clone();
        out.gamma = gamma;
        out.checked()
    }

    pub fn check_pair(&self, s: usize, a: usize) -> Result<(), MdpError> {
        if s < self.n_states && a < self.n_actions {
            Ok(())
        } else {
            Err(MdpError::InvalidPair {
                s,
                a,
                n_states: self.n_states,
                n_actions: self.n_actions,
            })
        }
    }

    /// Distribution over successor states of `(s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.row(s, a)[next]
    }

    /// Expected reward `R(s, a)`.
    pub fn mean_reward(&self, s: usize, a: usize) -> f64 {
        let idx = s * self.n_actions + a;
        match &self.rewards {
            RewardSpec::Deterministic(r) => r[idx],
            RewardSpec::Stochastic(d) => d[idx].mean(),
        }
    }

    /// True when every transition row is one-hot and every reward is fixed.
    pub fn is_deterministic(&self) -> bool {
        let rewards_fixed = match &self.rewards {
            RewardSpec::Deterministic(_) => true,
            RewardSpec::Stochastic(d) => d
                .iter()
                .all(|dist| dist.outcomes.iter().filter(|(_, p)| *p > 0.0).count() <= 1),
        };
        rewards_fixed
            && (0..self.n_states).all(|s| (0..self.n_actions).all(|a| self.row(s, a).contains(&1.0)))
    }

    /// `(HQ)(s, a)` for a single pair.
    pub fn backup_pair(&self, q: &[f64], s: usize, a: usize) -> f64 {
        let future: f64 = self
            .row(s, a)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(next, &p)| p * max_action_value(q, self.n_actions, next))
            .sum();
        self.mean_reward(s, a) + self.gamma * future
    }
}

pub(crate) fn max_action_value(q: &[f64], n_actions: usize, s: usize) -> f64 {
    q[s * n_actions..(s + 1) * n_actions]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Checks every structural invariant of `mdp`, naming each offending row.
pub fn validate_mdp(mdp: &TabularMdp) -> ValidationReport {
    let mut violations = Vec::new();
    if mdp.n_states == 0 {
        violations.push(Violation::ZeroStates);
    }
    if mdp.n_actions == 0 {
        violations.push(Violation::ZeroActions);
    }
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        violations.push(Violation::GammaOutOfRange(mdp.gamma));
    }
    if !(mdp.r_max >= 0.0) {
        violations.push(Violation::NegativeRewardBound(mdp.r_max));
    }
    let pairs = mdp.n_states * mdp.n_actions;
    let expected = pairs * mdp.n_states;
    if mdp.transitions.len() != expected {
        violations.push(Violation::TransitionShape {
            expected,
            actual: mdp.transitions.len(),
        });
    } else {
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let row = mdp.row(s, a);
                for (next, &p) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&p) {
                        violations.push(Violation::EntryOutOfRange { s, a, next, p });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOLERANCE {
                    violations.push(Violation::RowSum { s, a, sum });
                }
            }
        }
    }
    let reward_len = match &mdp.rewards {
        RewardSpec::Deterministic(r) => r.len(),
        RewardSpec::Stochastic(d) => d.len(),
    };
    if reward_len != pairs {
        violations.push(Violation::RewardShape {
            expected: pairs,
            actual: reward_len,
        });
    } else {
        let bound = mdp.r_max;
        for idx in 0..pairs {
            let (s, a) = (idx / mdp.n_actions, idx % mdp.n_actions);
            match &mdp.rewards {
                RewardSpec::Deterministic(r) => {
                    if r[idx].abs() > bound {
                        violations.push(Violation::RewardExceedsBound {
                            s,
                            a,
                            value: r[idx],
                            r_max: bound,
                        });
                    }
                }
                RewardSpec::Stochastic(d) => {
                    let dist = &d[idx];
                    let sum: f64 = dist.outcomes.iter().map(|(_, p)| p).sum();
                    if (sum - 1.0).abs() > PROB_TOLERANCE
                        || dist.outcomes.iter().any(|(_, p)| !(0.0..=1.0).contains(p))
                    {
                        violations.push(Violation::RewardProbability { s, a, sum });
                    }
                    if let Some(&(value, _)) = dist.outcomes.iter().find(|(v, p)| *p > 0.0 && v.abs() > bound)
                    {
                        violations.push(Violation::RewardExceedsBound {
                            s,
                            a,
                            value,
                            r_max: bound,
                        });
                    }
                }
            }
        }
    }
    if mdp.n_states > 0 && mdp.start_state >= mdp.n_states {
        violations.push(Violation::StartOutOfRange(mdp.start_state));
    }
    for &g in &mdp.goal_states {
        if g >= mdp.n_states {
            violations.push(Violation::GoalOutOfRange(g));
        }
    }
    ValidationReport { violations }
}

/// One application of the Bellman optimality operator to a row-major Q table.
pub fn bellman_backup(mdp: &TabularMdp, q: &[f64]) -> Result<Vec<f64>, MdpError> {
    if q.len() != mdp.n_pairs() {
        return Err(MdpError::DimensionMismatch {
            expected: mdp.n_pairs(),
            actual: q.len(),
        });
    }
    let maxes: Vec<f64> = (0..mdp.n_states)
        .map(|s| max_action_value(q, mdp.n_actions, s))
        .collect();
    let mut out = Vec::with_capacity(q.len());
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let future: f64 = mdp
                .row(s, a)
                .iter()
                .zip(&maxes)
                .filter(|(&p, _)| p > 0.0)
                .map(|(p, m)| p * m)
                .sum();
            out.push(mdp.mean_reward(s, a) + mdp.gamma * future);
        }
    }
    Ok(out)
}

/// Value iteration from the zero table until successive iterates differ by at
/// most `tol * (1 - gamma) / gamma`, which puts the result within `tol` of Q*.
pub fn optimal_q(mdp: &TabularMdp, tol: f64) -> QTable {
    assert!(tol > 0.0, "tolerance must be positive");
    let gamma = mdp.gamma;
    let stop = tol * (1.0 - gamma) / gamma;
    let mut q = vec![0.0; mdp.n_pairs()];
    loop {
        let next = bellman_backup(mdp, &q).expect("dimensions are internal");
        let diff = sup_norm_diff(&next, &q);
        q = next;
        if diff <= stop {
            break;
        }
    }
    QTable::from_values(mdp.n_states, mdp.n_actions, q)
}

pub(crate) fn sup_norm_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Draws `(reward, next_state)` for `(s, a)`.
///
/// Always consumes exactly two uniform draws from `rng` (successor, then
/// reward), so trajectories are reproducible per seed whatever the model.
pub fn sample_step<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    s: usize,
    a: usize,
    rng: &mut R,
) -> Result<(f64, usize), MdpError> {
    mdp.check_pair(s, a)?;
    let u_next: f64 = rng.random();
    let u_reward: f64 = rng.random();
    let row = mdp.row(s, a);
    let mut acc = 0.0;
    let mut next = None;
    for (idx, &p) in row.iter().enumerate() {
        acc += p;
        if u_next < acc {
            next = Some(idx);
            break;
        }
    }
    let next = next.unwrap_or_else(|| row.iter().rposition(|&p| p > 0.0).unwrap_or(0));
    let idx = s * mdp.n_actions + a;
    let reward = match &mdp.rewards {
        RewardSpec::Deterministic(r) => r[idx],
        RewardSpec::Stochastic(d) => d[idx].sample(u_reward),
    };
    Ok((reward, next))
}

/// Q values with per-pair update counts `n(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
    counts: Vec<u64>,
}

impl QTable {
    /// Every entry set to `init`, every count zero.
    pub fn new(n_states: usize, n_actions: usize, init: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![init; n_states * n_actions],
            counts: vec![0; n_states * n_actions],
        }
    }

    pub fn for_mdp(mdp: &TabularMdp, init: f64) -> Self {
        Self::new(mdp.n_states, mdp.n_actions, init)
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_states * n_actions);
        Self {
            n_states,
            n_actions,
            counts: vec![0; values.len()],
            values,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        self.values[s * self.n_actions + a] = value;
    }

    pub fn count(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.n_actions + a]
    }

    pub(crate) fn bump_count(&mut self, s: usize, a: usize) -> u64 {
        let c = &mut self.counts[s * self.n_actions + a];
        *c += 1;
        *c
    }

    pub fn state_values(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max_value(&self, s: usize) -> f64 {
        max_action_value(&self.values, self.n_actions, s)
    }

    /// Argmax over actions, ties to the lowest index.
    pub fn greedy_action(&self, s: usize) -> usize {
        let row = self.state_values(s);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn matches(&self, mdp: &TabularMdp) -> bool {
        self.n_states == mdp.n_states && self.n_actions == mdp.n_actions
    }
}

/// Plain-data mirror of [`TabularMdp`] used for the JSON document format.
///
/// `transitions[s][a]` is the successor distribution of `(s, a)`;
/// `rewards` is either `{"deterministic": [[r; A]; S]}` or
/// `{"stochastic": [[[[value, prob], ...]; A]; S]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub r_max: f64,
    #[serde(default)]
    pub start_state: usize,
    #[serde(default)]
    pub goal_states: Vec<usize>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: RewardDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardDocument {
    Deterministic(Vec<Vec<f64>>),
    Stochastic(Vec<Vec<Vec<(f64, f64)>>>),
}

impl From<&TabularMdp> for MdpDocument {
    fn from(mdp: &TabularMdp) -> Self {
        let (ns, na) = (mdp.n_states, mdp.n_actions);
        let transitions = (0..ns)
            .map(|s| (0..na).map(|a| mdp.row(s, a).to_vec()).collect())
            .collect();
        let rewards = match &mdp.rewards {
            RewardSpec::Deterministic(r) => {
                RewardDocument::Deterministic(r.chunks(na).map(|c| c.to_vec()).collect())
            }
            RewardSpec::Stochastic(d) => RewardDocument::Stochastic(
                d.chunks(na)
                    .map(|c| c.iter().map(|dist| dist.outcomes.clone()).collect())
                    .collect(),
            ),
        };
        Self {
            n_states: ns,
            n_actions: na,
            gamma: mdp.gamma,
            r_max: mdp.r_max,
            start_state: mdp.start_state,
            goal_states: mdp.goal_states.clone(),
            transitions,
            rewards,
        }
    }
}

impl MdpDocument {
    /// Flattens the document without validating it.
    pub fn into_unchecked(self) -> Result<TabularMdp, MdpError> {
        let (ns, na) = (self.n_states, self.n_actions);
        if self.transitions.len() != ns || self.transitions.iter().any(|r| r.len() != na) {
            return Err(MdpError::Document(format!(
                "transitions must be nested {ns} x {na} x {ns}"
            )));
        }
        let transitions: Vec<f64> = self.transitions.into_iter().flatten().flatten().collect();
        let rewards = match self.rewards {
            RewardDocument::Deterministic(r) => RewardSpec::Deterministic(r.into_iter().flatten().collect()),
            RewardDocument::Stochastic(d) => RewardSpec::Stochastic(
                d.into_iter()
                    .flatten()
                    .map(|outcomes| RewardDistribution { outcomes })
                    .collect(),
            ),
        };
        Ok(TabularMdp {
            n_states: ns,
            n_actions: na,
            transitions,
            rewards,
            gamma: self.gamma,
            r_max: self.r_max,
            start_state: self.start_state,
            goal_states: self.goal_states,
        })
    }

    pub fn into_mdp(self) -> Result<TabularMdp, MdpError> {
        self.into_unchecked()?.checked()
    }
}

impl TabularMdp {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MdpDocument::from(self)).expect("plain data serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let doc: MdpDocument = serde_json::from_str(text).map_err(|e| MdpError::Document(e.to_string()))?;
        doc.into_mdp()
    }
}
