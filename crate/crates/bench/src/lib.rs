//! Fixtures shared by the criterion benches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use replay_qlab::env::{grid_to_mdp, parse_grid, random_mdp, shipped_grid, RandomMdpSpec};
use replay_qlab::{LearnerConfig, ReplaySchedule, TabularMdp};

/// A shipped grid at the discount the experiments use.
pub fn grid(name: &str) -> TabularMdp {
    let spec = parse_grid(shipped_grid(name).expect("shipped layout")).expect("layout parses");
    grid_to_mdp(&spec, 0.95).expect("grid converts")
}

pub fn random(n_states: usize, n_actions: usize, seed: u64) -> TabularMdp {
    let spec = RandomMdpSpec {
        n_states,
        n_actions,
        gamma: 0.9,
        stochastic_rewards: true,
    };
    random_mdp(&spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Asynchronous run config with constant replay `(m, k)`, or none for
/// `m = 0`.
pub fn learner(mdp: &TabularMdp, horizon: u64, m: usize, k: usize) -> LearnerConfig {
    let mut config = LearnerConfig::for_mdp(mdp, horizon, 1);
    config.q_init = -19.0;
    config.schedule = if m == 0 {
        ReplaySchedule::None
    } else {
        ReplaySchedule::Constant { m, k }
    };
    config
}
