use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{RewardDistribution, RewardSpec, TabularMdp};

/// Family of random MDPs: successor rows drawn uniformly from the simplex,
/// mean rewards uniform on `[0, 1]`.
///
/// With `stochastic_rewards` each pair pays `0` or `2 R(s, a)` with equal
/// probability, which keeps the mean at `R(s, a)` and `r_max` at 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    #[serde(default)]
    pub stochastic_rewards: bool,
}

pub fn random_mdp<R: Rng + ?Sized>(spec: &RandomMdpSpec, rng: &mut R) -> TabularMdp {
    let (ns, na) = (spec.n_states, spec.n_actions);
    let mut transitions = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        // normalised exponentials are uniform on the simplex
        let raw: Vec<f64> = (0..ns).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = raw.iter().sum();
        let mut row: Vec<f64> = raw.iter().map(|x| x / total).collect();
        // push the float residue into the largest entry
        let residue = 1.0 - row.iter().sum::<f64>();
        let big = (0..ns).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap_or(0);
        row[big] += residue;
        transitions.extend(row);
    }
    let means: Vec<f64> = (0..ns * na).map(|_| rng.random::<f64>()).collect();
    let (rewards, r_max) = if spec.stochastic_rewards {
        (
            RewardSpec::Stochastic(
                means
                    .iter()
                    .map(|&m| RewardDistribution {
                        outcomes: vec![(0.0, 0.5), (2.0 * m, 0.5)],
                    })
                    .collect(),
            ),
            2.0,
        )
    } else {
        (RewardSpec::Deterministic(means), 1.0)
    };
    TabularMdp::new(ns, na, transitions, rewards, spec.gamma, r_max).expect("generator produces valid MDPs")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::validate_mdp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_mdps_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for stochastic_rewards in [false, true] {
            let spec = RandomMdpSpec {
                n_states: 7,
                n_actions: 3,
                gamma: 0.9,
                stochastic_rewards,
            };
            for _ in 0..20 {
                assert!(validate_mdp(&random_mdp(&spec, &mut rng)).is_ok());
            }
        }
    }
}
