//! Q-learning with uniform experience replay, asynchronous and synchronous.
//!
//! Online and replay updates share one iteration counter and one set of
//! per-pair update counts, so the learning rate `1 / n(s, a)` counts every
//! update a pair has received.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{sup_distance, NoiseAccumulator};
use crate::mdp::{sample_step, sup_norm_diff, MdpError, QTable, TabularMdp};
use crate::replay::{ReplayBuffer, ReplayError, Transition, Visit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("invalid learner configuration: {0}")]
    Config(String),
    #[error("learning rate undefined for zero updates")]
    ZeroCount,
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("Q table is {got_states}x{got_actions}, MDP is {want_states}x{want_actions}")]
    Shape {
        got_states: usize,
        got_actions: usize,
        want_states: usize,
        want_actions: usize,
    },
}

/// When replay happens and how much of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplaySchedule {
    None,
    /// `m` replay updates after every `k` online steps.
    Constant {
        m: usize,
        k: usize,
    },
    /// After the j-th block of `interval` online steps, `batch_sizes[j]`
    /// replay updates. Once the list is exhausted no further replay happens.
    IncreasingBatches {
        interval: usize,
        batch_sizes: Vec<usize>,
    },
}

impl ReplaySchedule {
    pub fn validate(&self) -> Result<(), LearnerError> {
        match self {
            ReplaySchedule::None => Ok(()),
            ReplaySchedule::Constant { m, k } if *m >= 1 && *k >= 1 => Ok(()),
            ReplaySchedule::Constant { m, k } => Err(LearnerError::Config(format!(
                "constant schedule needs M >= 1 and K >= 1, got M = {m}, K = {k}"
            ))),
            ReplaySchedule::IncreasingBatches {
                interval,
                batch_sizes,
            } => {
                if *interval == 0 {
                    return Err(LearnerError::Config("batch interval must be >= 1".into()));
                }
                if batch_sizes.is_empty() {
                    return Err(LearnerError::Config("batch sizes must be nonempty".into()));
                }
                if batch_sizes.windows(2).any(|w| w[1] < w[0]) {
                    return Err(LearnerError::Config("batch sizes must be nondecreasing".into()));
                }
                Ok(())
            }
        }
    }

    /// `events` batches growing linearly in the event index, summing exactly
    /// to `budget`. The floor remainder goes to the last batches so the
    /// sequence stays nondecreasing.
    pub fn linear_ramp(interval: usize, events: usize, budget: usize) -> Self {
        assert!(events >= 1, "ramp needs at least one event");
        let weight_total = (events * (events + 1) / 2) as f64;
        let mut sizes: Vec<usize> = (0..events)
            .map(|j| ((j + 1) as f64 * budget as f64 / weight_total).floor() as usize)
            .collect();
        let assigned: usize = sizes.iter().sum();
        let mut rest = budget - assigned;
        let mut j = events;
        while rest > 0 {
            j = if j == 0 { events - 1 } else { j - 1 };
            sizes[j] += 1;
            rest -= 1;
        }
        ReplaySchedule::IncreasingBatches {
            interval,
            batch_sizes: sizes,
        }
    }

    /// Replay updates due right after the `online`-th online step.
    pub fn replay_due(&self, online: u64) -> usize {
        match self {
            ReplaySchedule::None => 0,
            ReplaySchedule::Constant { m, k } => {
                if online.is_multiple_of(*k as u64) {
                    *m
                } else {
                    0
                }
            }
            ReplaySchedule::IncreasingBatches {
                interval,
                batch_sizes,
            } => {
                let interval = *interval as u64;
                if !online.is_multiple_of(interval) {
                    return 0;
                }
                let event = (online / interval - 1) as usize;
                batch_sizes.get(event).copied().unwrap_or(0)
            }
        }
    }

    /// Total replay updates the schedule can ever issue, if bounded.
    pub fn replay_budget(&self) -> Option<usize> {
        match self {
            ReplaySchedule::None => Some(0),
            ReplaySchedule::Constant { .. } => None,
            ReplaySchedule::IncreasingBatches { batch_sizes, .. } => Some(batch_sizes.iter().sum()),
        }
    }

    /// Short label used in result tables.
    pub fn tag(&self) -> String {
        match self {
            ReplaySchedule::None => "none".into(),
            ReplaySchedule::Constant { m, k } => format!("constant(m={m};k={k})"),
            ReplaySchedule::IncreasingBatches {
                interval,
                batch_sizes,
            } => format!(
                "increasing(interval={interval};events={};total={})",
                batch_sizes.len(),
                batch_sizes.iter().sum::<usize>()
            ),
        }
    }

    pub fn m_k(&self) -> (usize, Option<usize>) {
        match self {
            ReplaySchedule::None => (0, None),
            ReplaySchedule::Constant { m, k } => (*m, Some(*k)),
            ReplaySchedule::IncreasingBatches { interval, .. } => (0, Some(*interval)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub gamma: f64,
    /// Initial constant `c0` for every Q entry.
    pub q_init: f64,
    pub explore_rate: f64,
    pub schedule: ReplaySchedule,
    /// Total iterations, online plus replay (rounds for the synchronous
    /// learner).
    pub horizon: u64,
    pub sync: bool,
    pub seed: u64,
    /// Distance-to-Q* logging stride in iterations; 0 disables logging.
    pub log_stride: u64,
    /// Stop as soon as an episode finishes with at least this score.
    pub stop_at_score: Option<f64>,
    /// Count transitions between these two states in either direction.
    pub bridge: Option<(usize, usize)>,
    /// Track the accumulated noise `W` and sample `max |W|` at this stride.
    pub noise_stride: Option<u64>,
}

pub const DEFAULT_EXPLORE_RATE: f64 = 0.1;

impl LearnerConfig {
    /// Asynchronous, no replay, `q_init = 0`, default exploration.
    pub fn for_mdp(mdp: &TabularMdp, horizon: u64, seed: u64) -> Self {
        Self {
            gamma: mdp.gamma(),
            q_init: 0.0,
            explore_rate: DEFAULT_EXPLORE_RATE,
            schedule: ReplaySchedule::None,
            horizon,
            sync: false,
            seed,
            log_stride: 0,
            stop_at_score: None,
            bridge: None,
            noise_stride: None,
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(LearnerError::Config(format!("gamma {} not in (0,1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.explore_rate) {
            return Err(LearnerError::Config(format!(
                "explore rate {} not in [0,1]",
                self.explore_rate
            )));
        }
        if self.horizon == 0 {
            return Err(LearnerError::Config("horizon must be >= 1".into()));
        }
        if !self.q_init.is_finite() {
            return Err(LearnerError::Config("q_init must be finite".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Online,
    Replay,
}

/// One completed episode: its score and the step counters when it ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub score: f64,
    pub online_steps: u64,
    pub total_steps: u64,
}

/// Periodic snapshot: sup-norm distance to Q* and the sup-norm change of Q
/// since the previous snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub iteration: u64,
    pub distance: f64,
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrace {
    pub accumulator: NoiseAccumulator,
    /// `(iteration, max over pairs |W|)`.
    pub samples: Vec<(u64, f64)>,
}

/// Everything recorded during one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub q: QTable,
    pub buffer: ReplayBuffer,
    pub kinds: Vec<StepKind>,
    /// Online visits; empty for synchronous runs, which touch every pair
    /// each round.
    pub visits: Vec<Visit>,
    pub episodes: Vec<EpisodeRecord>,
    pub distances: Vec<DistanceRecord>,
    pub online_steps: u64,
    pub replay_steps: u64,
    pub bridge_crossings: u64,
    pub skipped_replay_events: u64,
    /// Largest `|Q(s, a)|` held at any point of the run.
    pub peak_q_norm: f64,
    pub noise: Option<NoiseTrace>,
}

impl RunTrace {
    pub fn total_steps(&self) -> u64 {
        self.online_steps + self.replay_steps
    }
}

/// `1 / n`.
pub fn alpha(n: u64) -> Result<f64, LearnerError> {
    if n == 0 {
        Err(LearnerError::ZeroCount)
    } else {
        Ok(1.0 / n as f64)
    }
}

/// Increments `n(s, a)` and moves `Q(s, a)` toward
/// `r + gamma * max_a' Q(s', a')` with step `1 / n(s, a)`.
pub fn q_update(q: &mut QTable, t: &Transition, gamma: f64) -> Result<(), LearnerError> {
    if t.s >= q.n_states() || t.a >= q.n_actions() || t.s_next >= q.n_states() {
        return Err(MdpError::InvalidPair {
            s: t.s,
            a: t.a,
            n_states: q.n_states(),
            n_actions: q.n_actions(),
        }
        .into());
    }
    apply_update(q, t, q.max_value(t.s_next), gamma);
    Ok(())
}

/// Returns `(alpha, new value)`.
fn apply_update(q: &mut QTable, t: &Transition, next_max: f64, gamma: f64) -> (f64, f64) {
    let n = q.bump_count(t.s, t.a);
    let step = 1.0 / n as f64;
    let target = t.r + gamma * next_max;
    let value = (1.0 - step) * q.get(t.s, t.a) + step * target;
    q.set(t.s, t.a, value);
    (step, value)
}

/// Epsilon-greedy: one uniform draw decides whether to explore, a second
/// picks the exploratory action. Greedy ties go to the lowest action.
pub fn select_action<R: Rng + ?Sized>(q: &QTable, s: usize, explore_rate: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if u < explore_rate {
        rng.random_range(0..q.n_actions())
    } else {
        q.greedy_action(s)
    }
}

fn check_shape(q: &QTable, mdp: &TabularMdp) -> Result<(), LearnerError> {
    if q.matches(mdp) {
        Ok(())
    } else {
        Err(LearnerError::Shape {
            got_states: q.n_states(),
            got_actions: q.n_actions(),
            want_states: mdp.n_states(),
            want_actions: mdp.n_actions(),
        })
    }
}

/// Shared bookkeeping for both learners.
struct Recorder<'a> {
    q_star: Option<&'a [f64]>,
    log_stride: u64,
    last_logged: Option<Vec<f64>>,
    distances: Vec<DistanceRecord>,
    peak: f64,
    noise: Option<(u64, NoiseTrace)>,
}

impl<'a> Recorder<'a> {
    fn new(config: &LearnerConfig, q: &QTable, q_star: Option<&'a QTable>) -> Self {
        let noise = config.noise_stride.map(|stride| {
            (
                stride.max(1),
                NoiseTrace {
                    accumulator: NoiseAccumulator::new(q.n_states(), q.n_actions()),
                    samples: Vec::new(),
                },
            )
        });
        let mut rec = Self {
            q_star: q_star.map(|t| t.values()),
            log_stride: config.log_stride,
            last_logged: None,
            distances: Vec::new(),
            peak: q.sup_norm(),
            noise,
        };
        rec.log(0, q);
        rec
    }

    fn log(&mut self, t: u64, q: &QTable) {
        let Some(star) = self.q_star else { return };
        if self.log_stride == 0 {
            return;
        }
        let change = self
            .last_logged
            .as_deref()
            .map_or(f64::INFINITY, |prev| sup_norm_diff(q.values(), prev));
        self.distances.push(DistanceRecord {
            iteration: t,
            distance: sup_distance(q.values(), star).expect("shape checked up front"),
            change,
        });
        self.last_logged = Some(q.values().to_vec());
    }

    fn after_iteration(&mut self, t: u64, q: &QTable, done: bool) {
        if self.log_stride > 0
            && (t.is_multiple_of(self.log_stride) || done)
            && self.distances.last().map(|d| d.iteration) != Some(t)
        {
            self.log(t, q);
        }
        if let Some((stride, trace)) = &mut self.noise {
            if (t.is_multiple_of(*stride) || done) && trace.samples.last().map(|s| s.0) != Some(t) {
                trace.samples.push((t, trace.accumulator.max_abs()));
            }
        }
    }

    fn noise(&mut self, mdp: &TabularMdp, q: &QTable, tr: &Transition, step: f64) {
        if let Some((_, trace)) = &mut self.noise {
            let w = crate::diagnostics::noise_sample(mdp, q.values(), tr);
            trace.accumulator.accumulate(tr.s, tr.a, w, step);
        }
    }
}

/// Asynchronous Q-learning with uniform experience replay.
///
/// The agent starts in the MDP's start state. Each online step acts
/// epsilon-greedily, updates, and stores the transition; after every online
/// step the schedule decides how many uniform replay updates follow. An
/// action taken in a goal state closes the current episode.
pub fn run_async(
    mdp: &TabularMdp,
    config: &LearnerConfig,
    q_star: Option<&QTable>,
) -> Result<RunTrace, LearnerError> {
    config.validate()?;
    if config.sync {
        return Err(LearnerError::Config("run_async called with sync = true".into()));
    }
    if let Some(star) = q_star {
        check_shape(star, mdp)?;
    }
    let gamma = config.gamma;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q = QTable::for_mdp(mdp, config.q_init);
    let mut buffer = ReplayBuffer::new(mdp.n_states(), mdp.n_actions());
    let mut rec = Recorder::new(config, &q, q_star);

    let horizon = config.horizon;
    let mut kinds = Vec::with_capacity(horizon.min(1 << 24) as usize);
    let mut visits = Vec::new();
    let mut episodes = Vec::new();
    let (mut t, mut online, mut replay) = (0u64, 0u64, 0u64);
    let (mut bridges, mut skipped) = (0u64, 0u64);
    let mut score = 0.0;
    let mut state = mdp.start_state();

    'outer: while t < horizon {
        let a = select_action(&q, state, config.explore_rate, &mut rng);
        let (r, next) = sample_step(mdp, state, a, &mut rng)?;
        let tr = Transition::new(state, a, r, next);
        t += 1;
        online += 1;
        rec.noise(mdp, &q, &tr, 1.0 / (q.count(state, a) + 1) as f64);
        let next_max = q.max_value(next);
        let (_, value) = apply_update(&mut q, &tr, next_max, gamma);
        rec.peak = rec.peak.max(value.abs());
        buffer.push(tr)?;
        kinds.push(StepKind::Online);
        visits.push(Visit {
            iteration: t,
            s: state as u32,
            a: a as u32,
        });
        if let Some((b1, b2)) = config.bridge {
            if (state == b1 && next == b2) || (state == b2 && next == b1) {
                bridges += 1;
            }
        }
        score += r;
        let mut stop = false;
        if mdp.is_goal(state) {
            episodes.push(EpisodeRecord {
                score,
                online_steps: online,
                total_steps: t,
            });
            stop = config.stop_at_score.is_some_and(|thr| score >= thr);
            score = 0.0;
        }
        state = next;
        rec.after_iteration(t, &q, t >= horizon || stop);
        if stop {
            break;
        }

        let due = config.schedule.replay_due(online);
        for _ in 0..due {
            if t >= horizon {
                break 'outer;
            }
            // cannot trigger once an online step has been stored
            let Ok(tr) = buffer.sample_uniform(&mut rng) else {
                skipped += 1;
                break;
            };
            t += 1;
            replay += 1;
            rec.noise(mdp, &q, &tr, 1.0 / (q.count(tr.s, tr.a) + 1) as f64);
            let next_max = q.max_value(tr.s_next);
            let (_, value) = apply_update(&mut q, &tr, next_max, gamma);
            rec.peak = rec.peak.max(value.abs());
            kinds.push(StepKind::Replay);
            rec.after_iteration(t, &q, t >= horizon);
        }
    }

    Ok(RunTrace {
        peak_q_norm: rec.peak,
        distances: rec.distances,
        noise: rec.noise.map(|(_, n)| n),
        q,
        buffer,
        kinds,
        visits,
        episodes,
        online_steps: online,
        replay_steps: replay,
        bridge_crossings: bridges,
        skipped_replay_events: skipped,
    })
}

/// Synchronous Q-learning with experience replay.
///
/// Each online round samples every pair from the model in `(s, a)`-major
/// order, updates all of them against the previous round's Q, and stores the
/// transitions. Replay rounds update every pair from its own memories.
pub fn run_sync(
    mdp: &TabularMdp,
    config: &LearnerConfig,
    q_star: Option<&QTable>,
) -> Result<RunTrace, LearnerError> {
    config.validate()?;
    if !config.sync {
        return Err(LearnerError::Config("run_sync called with sync = false".into()));
    }
    if let Some(star) = q_star {
        check_shape(star, mdp)?;
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = config.gamma;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q = QTable::for_mdp(mdp, config.q_init);
    let mut buffer = ReplayBuffer::new(ns, na);
    let mut rec = Recorder::new(config, &q, q_star);
    let mut kinds = Vec::new();
    let (mut t, mut online, mut replay) = (0u64, 0u64, 0u64);
    let mut maxes = vec![0.0; ns];

    let mut round = |q: &mut QTable,
                     buffer: &mut ReplayBuffer,
                     rec: &mut Recorder,
                     rng: &mut ChaCha8Rng,
                     kind: StepKind|
     -> Result<(), LearnerError> {
        for (s, m) in maxes.iter_mut().enumerate() {
            *m = q.max_value(s);
        }
        let snapshot = rec.noise.is_some().then(|| q.values().to_vec());
        for s in 0..ns {
            for a in 0..na {
                let tr = match kind {
                    StepKind::Online => {
                        let (r, next) = sample_step(mdp, s, a, rng)?;
                        Transition::new(s, a, r, next)
                    }
                    StepKind::Replay => buffer.sample_for_pair(s, a, rng)?,
                };
                if let (Some(prev), Some((_, trace))) = (&snapshot, &mut rec.noise) {
                    let w = crate::diagnostics::noise_sample(mdp, prev, &tr);
                    trace
                        .accumulator
                        .accumulate(s, a, w, 1.0 / (q.count(s, a) + 1) as f64);
                }
                let (_, value) = apply_update(q, &tr, maxes[tr.s_next], gamma);
                rec.peak = rec.peak.max(value.abs());
                if kind == StepKind::Online {
                    buffer.push(tr)?;
                }
            }
        }
        Ok(())
    };

    'outer: while t < config.horizon {
        round(&mut q, &mut buffer, &mut rec, &mut rng, StepKind::Online)?;
        t += 1;
        online += 1;
        kinds.push(StepKind::Online);
        rec.after_iteration(t, &q, t >= config.horizon);
        for _ in 0..config.schedule.replay_due(online) {
            if t >= config.horizon {
                break 'outer;
            }
            round(&mut q, &mut buffer, &mut rec, &mut rng, StepKind::Replay)?;
            t += 1;
            replay += 1;
            kinds.push(StepKind::Replay);
            rec.after_iteration(t, &q, t >= config.horizon);
        }
    }

    Ok(RunTrace {
        peak_q_norm: rec.peak,
        distances: rec.distances,
        noise: rec.noise.map(|(_, n)| n),
        q,
        buffer,
        kinds,
        visits: Vec::new(),
        episodes: Vec::new(),
        online_steps: online,
        replay_steps: replay,
        bridge_crossings: 0,
        skipped_replay_events: 0,
    })
}

/// Dispatches on `config.sync`.
pub fn run(
    mdp: &TabularMdp,
    config: &LearnerConfig,
    q_star: Option<&QTable>,
) -> Result<RunTrace, LearnerError> {
    if config.sync {
        run_sync(mdp, config, q_star)
    } else {
        run_async(mdp, config, q_star)
    }
}

/// `iterations` uniform replay updates with no environment interaction.
pub fn post_hoc_replay<R: Rng + ?Sized>(
    q: &mut QTable,
    buffer: &ReplayBuffer,
    iterations: u64,
    rng: &mut R,
    gamma: f64,
) -> Result<(), LearnerError> {
    if buffer.is_empty() {
        return Err(ReplayError::Empty.into());
    }
    for _ in 0..iterations {
        let tr = buffer.sample_uniform(rng)?;
        q_update(q, &tr, gamma)?;
    }
    Ok(())
}

/// Follows the greedy policy from the start state for at most `max_steps`
/// steps; returns the number of steps taken to enter a goal state.
pub fn greedy_rollout<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    q: &QTable,
    max_steps: usize,
    rng: &mut R,
) -> Result<Option<usize>, LearnerError> {
    check_shape(q, mdp)?;
    let mut state = mdp.start_state();
    if mdp.is_goal(state) {
        return Ok(Some(0));
    }
    for step in 1..=max_steps {
        let (_, next) = sample_step(mdp, state, q.greedy_action(state), rng)?;
        if mdp.is_goal(next) {
            return Ok(Some(step));
        }
        state = next;
    }
    Ok(None)
}
