//! Runtime instrumentation of the noise decomposition.
//!
//! Everything here is measured against the true model, so these helpers only
//! make sense for runs where the MDP is known.

use thiserror::Error;

use crate::mdp::{max_action_value, TabularMdp};
use crate::replay::{PairStats, ReplayBuffer, Transition};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("dimension mismatch: {left} vs {right} entries")]
pub struct DimensionMismatch {
    pub left: usize,
    pub right: usize,
}

/// `w = r + gamma * max_a' q(s', a') - (Hq)(s, a)` under the true model.
pub fn noise_sample(mdp: &TabularMdp, q: &[f64], t: &Transition) -> f64 {
    let target = t.r + mdp.gamma() * max_action_value(q, mdp.n_actions(), t.s_next);
    target - mdp.backup_pair(q, t.s, t.a)
}

/// Per-pair accumulated noise `W <- (1 - alpha) W + alpha w`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseAccumulator {
    n_actions: usize,
    w: Vec<f64>,
    counts: Vec<u64>,
    epoch_start: u64,
}

impl NoiseAccumulator {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_actions,
            w: vec![0.0; n_states * n_actions],
            counts: vec![0; n_states * n_actions],
            epoch_start: 0,
        }
    }

    /// Zeroes every pair and marks `t_k` as the start of a new epoch.
    pub fn reset(&mut self, t_k: u64) {
        self.w.iter_mut().for_each(|x| *x = 0.0);
        self.counts.iter_mut().for_each(|x| *x = 0);
        self.epoch_start = t_k;
    }

    pub fn accumulate(&mut self, s: usize, a: usize, w: f64, alpha: f64) {
        debug_assert!(alpha > 0.0 && alpha <= 1.0);
        let idx = s * self.n_actions + a;
        self.w[idx] = (1.0 - alpha) * self.w[idx] + alpha * w;
        self.counts[idx] += 1;
    }

    pub fn value(&self, s: usize, a: usize) -> f64 {
        self.w[s * self.n_actions + a]
    }

    pub fn count(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.n_actions + a]
    }

    pub fn epoch_start(&self) -> u64 {
        self.epoch_start
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn max_abs(&self) -> f64 {
        self.w.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// `max |q - q_star|` over all pairs.
pub fn sup_distance(q: &[f64], q_star: &[f64]) -> Result<f64, DimensionMismatch> {
    if q.len() != q_star.len() {
        return Err(DimensionMismatch {
            left: q.len(),
            right: q_star.len(),
        });
    }
    Ok(q.iter()
        .zip(q_star)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// How far the buffer's empirical model of one pair is from the true one.
#[derive(Debug, Clone, PartialEq)]
pub enum Drift {
    NoData,
    Observed {
        reward_gap: f64,
        total_variation: f64,
        count: usize,
    },
}

pub fn buffer_drift(buffer: &ReplayBuffer, mdp: &TabularMdp, s: usize, a: usize) -> Drift {
    match buffer.empirical_stats(s, a) {
        PairStats::NoData => Drift::NoData,
        PairStats::Observed {
            mean_reward,
            next_state,
            count,
        } => {
            let tv = 0.5
                * next_state
                    .iter()
                    .zip(mdp.row(s, a))
                    .map(|(x, p)| (x - p).abs())
                    .sum::<f64>();
            Drift::Observed {
                reward_gap: (mean_reward - mdp.mean_reward(s, a)).abs(),
                total_variation: tv,
                count,
            }
        }
    }
}

/// Hoeffding-style envelope `4 (2 R_max + 2 gamma V_max) / sqrt(n)` on the
/// running noise average after `n` online samples.
pub fn noise_envelope(mdp: &TabularMdp, n: u64) -> f64 {
    4.0 * (2.0 * mdp.r_max() + 2.0 * mdp.gamma() * mdp.v_max()) / (n as f64).sqrt()
}
