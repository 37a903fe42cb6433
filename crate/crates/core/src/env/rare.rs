//! Two sub-MDPs joined only through one bridge state each.

use serde::Serialize;
use thiserror::Error;

use crate::mdp::{optimal_q, MdpError, RewardDistribution, RewardSpec, TabularMdp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RareError {
    #[error("components disagree on {0}")]
    Mismatch(&'static str),
    #[error("bridge probability {0} not in [0,1]")]
    Epsilon(f64),
    #[error("state {state} out of range in component {component}")]
    State { component: u8, state: usize },
    #[error("row ({state},{action}) of component {component} is not deterministic")]
    NonDeterministic {
        component: u8,
        state: usize,
        action: usize,
    },
    #[error("bridge state {state} of component {component} exposes more than one action")]
    BridgeActions { component: u8, state: usize },
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// Components `m1`, `m2` with bridge states `s1`, `s2`. From `s1` the
/// composite moves to `s2` with probability `eps_rare`, else to `fallback1`;
/// symmetrically for `s2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RareMdpSpec {
    pub m1: TabularMdp,
    pub m2: TabularMdp,
    pub s1: usize,
    pub s2: usize,
    pub eps_rare: f64,
    pub fallback1: usize,
    pub fallback2: usize,
}

impl RareMdpSpec {
    pub fn validate(&self) -> Result<(), RareError> {
        if self.m1.n_actions() != self.m2.n_actions() {
            return Err(RareError::Mismatch("action count"));
        }
        if self.m1.gamma() != self.m2.gamma() {
            return Err(RareError::Mismatch("discount"));
        }
        if !(0.0..=1.0).contains(&self.eps_rare) {
            return Err(RareError::Epsilon(self.eps_rare));
        }
        for (component, mdp, bridge, fallback) in [
            (1u8, &self.m1, self.s1, self.fallback1),
            (2u8, &self.m2, self.s2, self.fallback2),
        ] {
            for state in [bridge, fallback] {
                if state >= mdp.n_states() {
                    return Err(RareError::State { component, state });
                }
            }
            for s in (0..mdp.n_states()).filter(|&s| s != bridge) {
                for a in 0..mdp.n_actions() {
                    if !mdp.row(s, a).contains(&1.0) {
                        return Err(RareError::NonDeterministic {
                            component,
                            state: s,
                            action: a,
                        });
                    }
                }
            }
            let single = (1..mdp.n_actions()).all(|a| {
                mdp.row(bridge, a) == mdp.row(bridge, 0)
                    && mdp.mean_reward(bridge, a) == mdp.mean_reward(bridge, 0)
            });
            if !single {
                return Err(RareError::BridgeActions {
                    component,
                    state: bridge,
                });
            }
        }
        Ok(())
    }

    /// Composite index of a component-2 state.
    pub fn offset(&self) -> usize {
        self.m1.n_states()
    }
}

/// Builds the composite over the disjoint union of the two state spaces;
/// component 2 states follow those of component 1. The start state is that
/// of component 1.
pub fn compose_rare(spec: &RareMdpSpec) -> Result<TabularMdp, RareError> {
    spec.validate()?;
    let (n1, n2, na) = (spec.m1.n_states(), spec.m2.n_states(), spec.m1.n_actions());
    let n = n1 + n2;
    let mut transitions = vec![0.0; n * na * n];
    let mut rewards = Vec::with_capacity(n * na);
    let eps = spec.eps_rare;
    for (mdp, base, bridge, fallback, other) in [
        (&spec.m1, 0, spec.s1, spec.fallback1, n1 + spec.s2),
        (&spec.m2, n1, spec.s2, spec.fallback2, spec.s1),
    ] {
        for s in 0..mdp.n_states() {
            for a in 0..na {
                let row = &mut transitions[((base + s) * na + a) * n..][..n];
                if s == bridge {
                    row[base + fallback] += 1.0 - eps;
                    row[other] += eps;
                } else {
                    row[base..base + mdp.n_states()].copy_from_slice(mdp.row(s, a));
                }
                rewards.push(pair_reward(mdp, s, a));
            }
        }
    }
    let rewards = if rewards.iter().all(|d| d.outcomes.len() == 1) {
        RewardSpec::Deterministic(rewards.iter().map(|d| d.outcomes[0].0).collect())
    } else {
        RewardSpec::Stochastic(rewards)
    };
    let r_max = spec.m1.r_max().max(spec.m2.r_max());
    Ok(
        TabularMdp::new(n, na, transitions, rewards, spec.m1.gamma(), r_max)?
            .with_start(spec.m1.start_state()),
    )
}

fn pair_reward(mdp: &TabularMdp, s: usize, a: usize) -> RewardDistribution {
    match mdp.rewards() {
        RewardSpec::Deterministic(r) => RewardDistribution::constant(r[s * mdp.n_actions() + a]),
        RewardSpec::Stochastic(d) => d[s * mdp.n_actions() + a].clone(),
    }
}

/// Separation between each component's own optimal values and the
/// composite's, on that component's pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub min_gap_m1: f64,
    pub min_gap_m2: f64,
    pub min_gap: f64,
    pub d0_required: f64,
    pub holds: bool,
}

pub fn gap_check(m1: &TabularMdp, m2: &TabularMdp, m3: &TabularMdp, d0_required: f64) -> GapReport {
    const TOL: f64 = 1e-10;
    let q1 = optimal_q(m1, TOL);
    let q2 = optimal_q(m2, TOL);
    let q3 = optimal_q(m3, TOL);
    let na = m1.n_actions();
    let gap = |q: &[f64], base: usize| {
        q.iter()
            .enumerate()
            .map(|(i, v)| (v - q3.values()[base * na + i]).abs())
            .fold(f64::INFINITY, f64::min)
    };
    let min_gap_m1 = gap(q1.values(), 0);
    let min_gap_m2 = gap(q2.values(), m1.n_states());
    let min_gap = min_gap_m1.min(min_gap_m2);
    GapReport {
        min_gap_m1,
        min_gap_m2,
        min_gap,
        d0_required,
        holds: min_gap >= d0_required,
    }
}

/// Discount of the shipped instance.
pub const SHIPPED_GAMMA: f64 = 0.9;
/// Large reward hidden in component 2 of the shipped instance.
pub const SHIPPED_HIGH_REWARD: f64 = 1000.0;
/// Gap the shipped instance is built to clear.
pub const SHIPPED_D0: f64 = 1.0;

/// Two deterministic 4-state loops with a single action per state. The
/// first pays 1 once per lap, the second pays [`SHIPPED_HIGH_REWARD`].
/// Both bridges sit at local state 0 and fall back to local state 1, so on
/// either side the bridge state recurs every fourth step.
pub fn shipped_instance(eps_rare: f64) -> RareMdpSpec {
    let lap = |reward: f64| {
        TabularMdp::deterministic(4, 1, &[1, 2, 3, 0], vec![0.0, 0.0, reward, 0.0], SHIPPED_GAMMA)
            .expect("loop is valid")
    };
    RareMdpSpec {
        m1: lap(1.0),
        m2: lap(SHIPPED_HIGH_REWARD),
        s1: 0,
        s2: 0,
        eps_rare,
        fallback1: 1,
        fallback2: 1,
    }
}

/// Long-run fraction of steps spent in a bridge state for the shipped
/// instance.
pub const SHIPPED_BRIDGE_FREQUENCY: f64 = 0.25;
