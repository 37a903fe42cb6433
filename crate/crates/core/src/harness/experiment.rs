use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{EnvironmentRef, ExperimentConfig};
use super::convergence::{detect_q_convergence, detect_score_convergence};
use super::results::{aggregate, mean_sem, AggregateRow, Measure, ResultRow};
use super::HarnessError;
use crate::bounds::{prob_bridge_counts, rare_epsilon, BridgeProbabilities};
use crate::diagnostics::sup_distance;
use crate::env::rare::shipped_instance;
use crate::env::{compose_rare, gap_check, grid_to_mdp, parse_grid, random_mdp, shipped_grid};
use crate::env::{GapReport, RandomMdpSpec};
use crate::learner::{greedy_rollout, post_hoc_replay, run, LearnerConfig, ReplaySchedule, RunTrace};
use crate::mdp::{optimal_q, sample_step, QTable, TabularMdp};
use crate::replay::covering_constant;
use crate::rng::derive_seed;

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "REPLAY_QLAB_THREADS";

/// Value-iteration tolerance used for every Q* in the harness.
pub const Q_STAR_TOL: f64 = 1e-10;

/// A loaded environment with its exact solution.
#[derive(Debug, Clone)]
pub struct LoadedEnv {
    pub mdp: TabularMdp,
    pub q_star: QTable,
    pub bridge: Option<(usize, usize)>,
    pub rare: Option<RareSetup>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RareSetup {
    pub t_prime: u64,
    pub p_hat: f64,
    pub eps_rare: f64,
    #[serde(skip)]
    pub m1: TabularMdp,
    #[serde(skip)]
    pub m2: TabularMdp,
}

pub fn load_environment(env: &EnvironmentRef, base_dir: &Path) -> Result<LoadedEnv, HarnessError> {
    let mut bridge = None;
    let mut rare = None;
    let mdp = match env {
        EnvironmentRef::Grid { layout, gamma } => {
            let text = match shipped_grid(layout) {
                Some(text) => text.to_string(),
                None => {
                    let path = base_dir.join(layout);
                    std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?
                }
            };
            grid_to_mdp(&parse_grid(&text)?, *gamma)?
        }
        EnvironmentRef::Mdp { path } => {
            let path = base_dir.join(path);
            let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
            TabularMdp::from_json(&text)?
        }
        EnvironmentRef::Rare { t, eps_rare } => {
            let t_prime = crate::bounds::rare_horizon(*t);
            let p_hat = pilot_bridge_frequency(t_prime)?;
            let eps = match eps_rare {
                Some(e) => *e,
                None => rare_epsilon(t_prime, p_hat)?,
            };
            let spec = shipped_instance(eps);
            let m3 = compose_rare(&spec)?;
            bridge = Some((spec.s1, spec.offset() + spec.s2));
            rare = Some(RareSetup {
                t_prime,
                p_hat,
                eps_rare: eps,
                m1: spec.m1,
                m2: spec.m2,
            });
            m3
        }
        EnvironmentRef::Random {
            n_states,
            n_actions,
            gamma,
            stochastic_rewards,
            instance_seed,
        } => {
            let spec = RandomMdpSpec {
                n_states: *n_states,
                n_actions: *n_actions,
                gamma: *gamma,
                stochastic_rewards: *stochastic_rewards,
            };
            if spec.n_states == 0 || spec.n_actions == 0 || !(spec.gamma > 0.0 && spec.gamma < 1.0) {
                return Err(HarnessError::Config(format!("invalid random MDP spec {spec:?}")));
            }
            random_mdp(&spec, &mut ChaCha8Rng::seed_from_u64(*instance_seed))
        }
    };
    let q_star = optimal_q(&mdp, Q_STAR_TOL);
    Ok(LoadedEnv {
        mdp,
        q_star,
        bridge,
        rare,
    })
}

/// Fraction of `t_prime` steps the decoupled shipped instance spends in its
/// bridge state, measured by simulation.
fn pilot_bridge_frequency(t_prime: u64) -> Result<f64, HarnessError> {
    let spec = shipped_instance(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut state = spec.m1.start_state();
    let mut hits = 0u64;
    for _ in 0..t_prime {
        if state == spec.s1 {
            hits += 1;
        }
        state = sample_step(&spec.m1, state, 0, &mut rng)?.1;
    }
    Ok(hits as f64 / t_prime as f64)
}

/// Worker pool sized by `REPLAY_QLAB_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
            HarnessError::Config(format!("{THREADS_ENV}={value:?} is not a positive integer"))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

/// Runs `f` over `jobs` on `pool`; output order follows `jobs`.
fn fan_out<J, T, F>(pool: &rayon::ThreadPool, jobs: &[J], f: F) -> Result<Vec<T>, HarnessError>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T, HarnessError> + Sync + Send,
{
    pool.install(|| jobs.par_iter().map(&f).collect())
}

fn learner_config(
    config: &ExperimentConfig,
    env: &LoadedEnv,
    schedule: &ReplaySchedule,
    horizon: u64,
    seed: u64,
) -> LearnerConfig {
    let t = &config.learner;
    let conv = &config.convergence;
    LearnerConfig {
        gamma: env.mdp.gamma(),
        q_init: t.q_init,
        explore_rate: t.explore_rate,
        schedule: schedule.clone(),
        horizon,
        sync: t.sync,
        seed,
        log_stride: t.log_stride,
        stop_at_score: conv.score_threshold.filter(|_| conv.stop_at_score),
        bridge: env.bridge,
        noise_stride: None,
    }
}

fn evaluate(
    config: &ExperimentConfig,
    env: &LoadedEnv,
    q: &QTable,
    seed: u64,
) -> Result<Option<bool>, HarnessError> {
    let episodes = config.eval.episodes;
    if episodes == 0 || env.mdp.goal_states().is_empty() {
        return Ok(None);
    }
    let steps = match config.eval.rollout_steps {
        0 => env.mdp.n_states(),
        n => n,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    for _ in 0..episodes {
        if greedy_rollout(&env.mdp, q, steps, &mut rng)?.is_none() {
            return Ok(Some(false));
        }
    }
    Ok(Some(true))
}

fn result_row(
    config: &ExperimentConfig,
    env: &LoadedEnv,
    schedule: &ReplaySchedule,
    run_index: usize,
    seed: u64,
    trace: &RunTrace,
) -> Result<ResultRow, HarnessError> {
    let conv = &config.convergence;
    let crossing = conv
        .score_threshold
        .map(|thr| detect_score_convergence(&trace.episodes, thr));
    let (online_to_score, total_to_score) = match crossing {
        None => (Measure::NotMeasured, Measure::NotMeasured),
        Some(Some(c)) => (Measure::Value(c.online_steps), Measure::Value(c.total_steps)),
        Some(None) => (Measure::Censored, Measure::Censored),
    };
    let q_conv = if trace.distances.is_empty() {
        Measure::NotMeasured
    } else {
        Measure::from_detection(
            true,
            detect_q_convergence(&trace.distances, conv.q_threshold, conv.q_criterion)?,
        )
    };
    let c_hat = if trace.visits.is_empty() {
        None
    } else {
        covering_constant(&trace.visits, env.mdp.n_states(), env.mdp.n_actions()).ok()
    };
    let (m, k) = schedule.m_k();
    Ok(ResultRow {
        run_index,
        seed,
        m,
        k,
        schedule: schedule.tag(),
        online_steps_to_score: online_to_score,
        total_steps_to_score: total_to_score,
        total_steps_to_qconv: q_conv,
        reached_goal: evaluate(config, env, &trace.q, seed)?,
        bridge_count: env.bridge.map(|_| trace.bridge_crossings),
        final_distance: Some(sup_distance(trace.q.values(), env.q_star.values())?),
        c_hat,
        online_steps: trace.online_steps,
        total_steps: trace.total_steps(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub cells: Vec<String>,
    pub rows: Vec<ResultRow>,
    pub aggregate: Vec<AggregateRow>,
}

/// Every sweep cell times every repetition.
///
/// Repetition `i` is labelled with seed `base_seed + i` and its learner rng
/// is seeded with `derive_seed(base_seed, i)`; all cells share the stream
/// of a given repetition. Results are ordered cell-major regardless of the
/// number of worker threads.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentReport, HarnessError> {
    run_experiment_on(&worker_pool()?, config, base_dir)
}

/// [`run_experiment`] on a caller-supplied pool.
pub fn run_experiment_on(
    pool: &rayon::ThreadPool,
    config: &ExperimentConfig,
    base_dir: &Path,
) -> Result<ExperimentReport, HarnessError> {
    config.validate()?;
    let env = load_environment(&config.environment, base_dir)?;
    let cells = config.sweep.cells();
    let reps = config.repetitions;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..reps).map(move |r| (c, r)))
        .collect();
    let rows = fan_out(pool, &jobs, |&(c, rep)| {
        let schedule = &cells[c];
        let rng_seed = derive_seed(config.base_seed, rep as u64);
        let lc = learner_config(config, &env, schedule, config.learner.horizon, rng_seed);
        let trace = run(&env.mdp, &lc, Some(&env.q_star))?;
        result_row(
            config,
            &env,
            schedule,
            c * reps + rep,
            config.base_seed.wrapping_add(rep as u64),
            &trace,
        )
    })?;
    Ok(ExperimentReport {
        name: config.name.clone(),
        cells: cells.iter().map(ReplaySchedule::tag).collect(),
        aggregate: aggregate(&rows),
        rows,
    })
}

/// Online and replay iterations a schedule executes within `horizon`.
pub fn schedule_budget(schedule: &ReplaySchedule, horizon: u64) -> (u64, u64) {
    let (mut t, mut online, mut replay) = (0u64, 0u64, 0u64);
    while t < horizon {
        t += 1;
        online += 1;
        let due = schedule.replay_due(online) as u64;
        let taken = due.min(horizon - t);
        t += taken;
        replay += taken;
    }
    (online, replay)
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmSummary {
    pub schedule: String,
    pub runs: usize,
    pub successes: usize,
    pub fraction: f64,
    pub sem: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub name: String,
    pub total_budget: u64,
    pub online_budget: u64,
    pub replay_budget: u64,
    pub arms: Vec<ArmSummary>,
    pub rows: Vec<ResultRow>,
    /// Per-arm summaries of the row metrics, including training-time score
    /// crossings when a score threshold is configured.
    pub aggregate: Vec<AggregateRow>,
}

/// Refuses arms whose online or replay iteration counts differ, or whose
/// replay count differs from the configured budget.
pub fn check_equal_budgets(
    arms: &[ReplaySchedule],
    total: u64,
    replay_budget: u64,
) -> Result<(u64, u64), HarnessError> {
    let budgets: Vec<(u64, u64)> = arms.iter().map(|a| schedule_budget(a, total)).collect();
    let first = *budgets
        .first()
        .ok_or_else(|| HarnessError::Config("comparison needs at least one arm".into()))?;
    for (arm, b) in arms.iter().zip(&budgets) {
        if *b != first || b.1 != replay_budget {
            return Err(HarnessError::Budget(format!(
                "arm {} executes {} online / {} replay iterations; expected {} replay and equal budgets across arms",
                arm.tag(),
                b.0,
                b.1,
                replay_budget
            )));
        }
    }
    Ok(first)
}

/// Trains every arm for the full budget per seed, then evaluates greedy
/// rollouts from the start state.
pub fn run_schedule_comparison(
    config: &ExperimentConfig,
    base_dir: &Path,
) -> Result<ComparisonReport, HarnessError> {
    config.validate()?;
    let cmp = &config.comparison;
    let arms = cmp.arms()?;
    let (online_budget, replay_budget) = check_equal_budgets(&arms, cmp.total_budget, cmp.replay_budget)?;
    let env = load_environment(&config.environment, base_dir)?;
    if env.mdp.goal_states().is_empty() {
        return Err(HarnessError::Config(
            "schedule comparison needs an episodic environment".into(),
        ));
    }
    let mut eval_config = config.clone();
    eval_config.eval.episodes = eval_config.eval.episodes.max(1);
    eval_config.convergence.stop_at_score = false;
    let reps = config.repetitions;
    let jobs: Vec<(usize, usize)> = (0..arms.len())
        .flat_map(|c| (0..reps).map(move |r| (c, r)))
        .collect();
    let rows = fan_out(&worker_pool()?, &jobs, |&(c, rep)| {
        let schedule = &arms[c];
        let rng_seed = derive_seed(config.base_seed, rep as u64);
        let lc = learner_config(&eval_config, &env, schedule, cmp.total_budget, rng_seed);
        let trace = run(&env.mdp, &lc, None)?;
        result_row(
            &eval_config,
            &env,
            schedule,
            c * reps + rep,
            config.base_seed.wrapping_add(rep as u64),
            &trace,
        )
    })?;
    let arms = arms
        .iter()
        .map(|arm| {
            let tag = arm.tag();
            let hits: Vec<f64> = rows
                .iter()
                .filter(|r| r.schedule == tag)
                .map(|r| f64::from(u8::from(r.reached_goal == Some(true))))
                .collect();
            let (mean, sem) = mean_sem(&hits);
            ArmSummary {
                schedule: tag,
                runs: hits.len(),
                successes: hits.iter().filter(|&&h| h == 1.0).count(),
                fraction: mean.unwrap_or(0.0),
                sem,
            }
        })
        .collect();
    Ok(ComparisonReport {
        name: config.name.clone(),
        total_budget: cmp.total_budget,
        online_budget,
        replay_budget,
        arms,
        aggregate: aggregate(&rows),
        rows,
    })
}

/// One seed of the rare-experience experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RareRun {
    pub seed: u64,
    pub bridge_count: u64,
    pub online_distance: f64,
    pub post_distance: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalBridgeCounts {
    pub p_n0: f64,
    pub p_n1: f64,
    pub p_n2: f64,
    pub p_n_ge2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RareReport {
    pub name: String,
    pub setup: RareSetup,
    pub gap: GapReport,
    pub analytic: BridgeProbabilities,
    pub empirical: EmpiricalBridgeCounts,
    /// Runs per bridge count, index = N.
    pub n_histogram: Vec<usize>,
    pub d0: f64,
    pub psi: f64,
    pub post_replay_iterations: u64,
    pub runs_with_n_le2: usize,
    /// Among runs with N ≤ 2, the fraction with some pair at least D0/2
    /// from Q3* after online training.
    pub far_fraction_n_le2: Option<f64>,
    /// Fraction of all runs within ψ of Q3* after post-hoc replay.
    pub within_psi_fraction: Option<f64>,
    pub median_online_distance: f64,
    pub median_post_distance: Option<f64>,
    pub runs: Vec<RareRun>,
    pub rows: Vec<ResultRow>,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Online-only training for `T'` steps per seed, followed by post-hoc
/// replay on a copy of the learned table.
pub fn run_rare_experiment(config: &ExperimentConfig, base_dir: &Path) -> Result<RareReport, HarnessError> {
    config.validate()?;
    let env = load_environment(&config.environment, base_dir)?;
    let setup = env
        .rare
        .clone()
        .ok_or_else(|| HarnessError::Config("rare experiment needs a rare environment".into()))?;
    let rc = &config.rare;
    let gap = gap_check(&setup.m1, &setup.m2, &env.mdp, rc.d0);
    if !gap.holds {
        return Err(HarnessError::GapCheck(gap));
    }
    let reps: Vec<usize> = (0..config.repetitions).collect();
    let schedule = ReplaySchedule::None;
    let mut rows_config = config.clone();
    rows_config.convergence.score_threshold = None;
    rows_config.learner.log_stride = 0;
    let results = fan_out(&worker_pool()?, &reps, |&rep| {
        let rng_seed = derive_seed(config.base_seed, rep as u64);
        let seed = config.base_seed.wrapping_add(rep as u64);
        let mut lc = learner_config(&rows_config, &env, &schedule, setup.t_prime, rng_seed);
        lc.stop_at_score = None;
        let trace = run(&env.mdp, &lc, None)?;
        let online_distance = sup_distance(trace.q.values(), env.q_star.values())?;
        let post_distance = if rc.post_replay_iterations > 0 {
            let mut q = trace.q.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, 2));
            post_hoc_replay(
                &mut q,
                &trace.buffer,
                rc.post_replay_iterations,
                &mut rng,
                env.mdp.gamma(),
            )?;
            Some(sup_distance(q.values(), env.q_star.values())?)
        } else {
            None
        };
        let mut row = result_row(&rows_config, &env, &schedule, rep, seed, &trace)?;
        row.final_distance = post_distance.or(Some(online_distance));
        Ok((
            RareRun {
                seed,
                bridge_count: trace.bridge_crossings,
                online_distance,
                post_distance,
            },
            row,
        ))
    })?;
    let (runs, rows): (Vec<RareRun>, Vec<ResultRow>) = results.into_iter().unzip();

    let n = runs.len() as f64;
    let max_n = runs.iter().map(|r| r.bridge_count).max().unwrap_or(0) as usize;
    let mut n_histogram = vec![0usize; max_n + 1];
    for r in &runs {
        n_histogram[r.bridge_count as usize] += 1;
    }
    let freq = |i: usize| n_histogram.get(i).copied().unwrap_or(0) as f64 / n;
    let empirical = EmpiricalBridgeCounts {
        p_n0: freq(0),
        p_n1: freq(1),
        p_n2: freq(2),
        p_n_ge2: runs.iter().filter(|r| r.bridge_count >= 2).count() as f64 / n,
    };
    let low: Vec<&RareRun> = runs.iter().filter(|r| r.bridge_count <= 2).collect();
    let far_fraction_n_le2 = (!low.is_empty())
        .then(|| low.iter().filter(|r| r.online_distance >= rc.d0 / 2.0).count() as f64 / low.len() as f64);
    let post: Vec<f64> = runs.iter().filter_map(|r| r.post_distance).collect();
    let within_psi_fraction =
        (!post.is_empty()).then(|| post.iter().filter(|&&d| d <= rc.psi).count() as f64 / post.len() as f64);
    let mut online: Vec<f64> = runs.iter().map(|r| r.online_distance).collect();
    let mut post_sorted = post.clone();
    Ok(RareReport {
        name: config.name.clone(),
        analytic: prob_bridge_counts(setup.t_prime, setup.eps_rare, setup.p_hat),
        gap,
        empirical,
        n_histogram,
        d0: rc.d0,
        psi: rc.psi,
        post_replay_iterations: rc.post_replay_iterations,
        runs_with_n_le2: low.len(),
        far_fraction_n_le2,
        within_psi_fraction,
        median_online_distance: median(&mut online).unwrap_or(f64::NAN),
        median_post_distance: median(&mut post_sorted),
        setup,
        runs,
        rows,
    })
}
