//! Unbounded transition memory with uniform sampling.
//!
//! Nothing is ever evicted, so buffer positions are stable and the per-pair
//! index stays valid for the lifetime of the buffer.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("replay buffer is empty")]
    Empty,
    #[error("no stored transitions for pair ({s},{a})")]
    NoMemories { s: usize, a: usize },
    #[error("transition ({s},{a}) -> {s_next} out of range for {n_states}x{n_actions} buffer")]
    InvalidTransition {
        s: usize,
        a: usize,
        s_next: usize,
        n_states: usize,
        n_actions: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

impl Transition {
    pub fn new(s: usize, a: usize, r: f64, s_next: usize) -> Self {
        Self { s, a, r, s_next }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    n_states: usize,
    n_actions: usize,
    store: Vec<Transition>,
    pair_index: Vec<Vec<usize>>,
}

impl ReplayBuffer {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            store: Vec::new(),
            pair_index: vec![Vec::new(); n_states * n_actions],
        }
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.store
    }

    /// Number of stored transitions of `(s, a)`.
    pub fn pair_count(&self, s: usize, a: usize) -> usize {
        self.pair_index[s * self.n_actions + a].len()
    }

    /// Positions in the store holding transitions of `(s, a)`.
    pub fn pair_positions(&self, s: usize, a: usize) -> &[usize] {
        &self.pair_index[s * self.n_actions + a]
    }

    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        if t.s >= self.n_states || t.a >= self.n_actions || t.s_next >= self.n_states {
            return Err(ReplayError::InvalidTransition {
                s: t.s,
                a: t.a,
                s_next: t.s_next,
                n_states: self.n_states,
                n_actions: self.n_actions,
            });
        }
        self.pair_index[t.s * self.n_actions + t.a].push(self.store.len());
        self.store.push(t);
        Ok(())
    }

    /// One transition, every stored position equally likely.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Transition, ReplayError> {
        if self.store.is_empty() {
            return Err(ReplayError::Empty);
        }
        Ok(self.store[rng.random_range(0..self.store.len())])
    }

    /// Uniform over the stored transitions of `(s, a)` only.
    pub fn sample_for_pair<R: Rng + ?Sized>(
        &self,
        s: usize,
        a: usize,
        rng: &mut R,
    ) -> Result<Transition, ReplayError> {
        let positions = self
            .pair_index
            .get(s * self.n_actions + a)
            .filter(|_| s < self.n_states && a < self.n_actions)
            .ok_or(ReplayError::NoMemories { s, a })?;
        if positions.is_empty() {
            return Err(ReplayError::NoMemories { s, a });
        }
        Ok(self.store[positions[rng.random_range(0..positions.len())]])
    }

    /// Empirical reward mean and successor distribution of `(s, a)`.
    pub fn empirical_stats(&self, s: usize, a: usize) -> PairStats {
        let positions = match self.pair_index.get(s * self.n_actions + a) {
            Some(p) if !p.is_empty() && s < self.n_states && a < self.n_actions => p,
            _ => return PairStats::NoData,
        };
        let count = positions.len();
        let mut next = vec![0.0; self.n_states];
        let mut reward_sum = 0.0;
        for &pos in positions {
            let t = &self.store[pos];
            reward_sum += t.r;
            next[t.s_next] += 1.0;
        }
        for p in &mut next {
            *p /= count as f64;
        }
        PairStats::Observed {
            mean_reward: reward_sum / count as f64,
            next_state: next,
            count,
        }
    }
}

/// Empirical statistics for one pair; `NoData` before its first visit.
#[derive(Debug, Clone, PartialEq)]
pub enum PairStats {
    NoData,
    Observed {
        mean_reward: f64,
        next_state: Vec<f64>,
        count: usize,
    },
}

/// One online visit `(iteration, s, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub iteration: u64,
    pub s: u32,
    pub a: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoverageError {
    #[error("covering assumption violated: pair ({s},{a}) never visited")]
    NeverVisited { s: usize, a: usize },
}

/// Tightest covering constant consistent with a visit log.
///
/// Window lengths are measured in iterations, so a log whose iterations are
/// interleaved with replay steps is charged for the gaps. Every iteration
/// between the first and last logged visit is tried as a window start; starts
/// whose window would run off the end of the log are ignored. The result is
/// `n_states * n_actions / L_max`.
pub fn covering_constant(visits: &[Visit], n_states: usize, n_actions: usize) -> Result<f64, CoverageError> {
    let pairs = n_states * n_actions;
    let pair_of = |v: &Visit| v.s as usize * n_actions + v.a as usize;

    let mut seen = vec![false; pairs];
    for v in visits {
        seen[pair_of(v)] = true;
    }
    if let Some(missing) = seen.iter().position(|&x| !x) {
        return Err(CoverageError::NeverVisited {
            s: missing / n_actions,
            a: missing % n_actions,
        });
    }

    // Two pointers: for each left end j find the smallest right end covering
    // every pair in visits[j..=r].
    let mut counts = vec![0usize; pairs];
    let mut distinct = 0;
    let mut right = 0; // exclusive
    let mut longest = 0u64;
    for left in 0..visits.len() {
        while distinct < pairs && right < visits.len() {
            let p = pair_of(&visits[right]);
            if counts[p] == 0 {
                distinct += 1;
            }
            counts[p] += 1;
            right += 1;
        }
        if distinct < pairs {
            break;
        }
        let end = visits[right - 1].iteration;
        // worst start inside (previous visit, this visit]
        let start = if left == 0 {
            visits[0].iteration
        } else {
            visits[left - 1].iteration + 1
        };
        longest = longest.max(end - start + 1);

        let p = pair_of(&visits[left]);
        counts[p] -= 1;
        if counts[p] == 0 {
            distinct -= 1;
        }
    }
    Ok(pairs as f64 / longest as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(s: usize, a: usize, r: f64, s_next: usize) -> Transition {
        Transition::new(s, a, r, s_next)
    }

    #[test]
    fn push_updates_partition() {
        let mut buf = ReplayBuffer::new(3, 2);
        buf.push(t(0, 0, 0.0, 1)).unwrap();
        assert_eq!((buf.len(), buf.pair_count(0, 0)), (1, 1));
        for _ in 0..9 {
            buf.push(t(0, 0, 0.0, 1)).unwrap();
        }
        assert_eq!(buf.pair_count(0, 0), 10);
        buf.push(t(1, 1, 0.0, 2)).unwrap();
        buf.push(t(2, 0, 0.0, 0)).unwrap();
        let total: usize = (0..3)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| buf.pair_count(s, a))
            .sum();
        assert_eq!(total, buf.len());
        assert!(buf.push(t(3, 0, 0.0, 0)).is_err());
        assert!(buf.push(t(0, 0, 0.0, 7)).is_err());
    }

    #[test]
    fn sampling_errors() {
        let buf = ReplayBuffer::new(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(buf.sample_uniform(&mut rng), Err(ReplayError::Empty));
        assert_eq!(
            buf.sample_for_pair(1, 1, &mut rng),
            Err(ReplayError::NoMemories { s: 1, a: 1 })
        );
    }

    #[test]
    fn single_memory_is_returned() {
        let mut buf = ReplayBuffer::new(2, 1);
        buf.push(t(1, 0, 0.5, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(buf.sample_uniform(&mut rng).unwrap(), t(1, 0, 0.5, 0));
        assert_eq!(buf.sample_for_pair(1, 0, &mut rng).unwrap(), t(1, 0, 0.5, 0));
    }

    #[test]
    fn uniform_frequencies() {
        let mut buf = ReplayBuffer::new(4, 1);
        for s in 0..4 {
            buf.push(t(s, 0, 0.0, 0)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut hits = [0usize; 4];
        for _ in 0..n {
            hits[buf.sample_uniform(&mut rng).unwrap().s] += 1;
        }
        for h in hits {
            assert!((h as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn duplicate_heavy_buffer() {
        let mut buf = ReplayBuffer::new(2, 1);
        for _ in 0..9 {
            buf.push(t(0, 0, 0.0, 0)).unwrap();
        }
        buf.push(t(1, 0, 0.0, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let x = (0..n)
            .filter(|_| buf.sample_uniform(&mut rng).unwrap().s == 0)
            .count();
        assert!((x as f64 / n as f64 - 0.9).abs() < 0.01);
    }

    #[test]
    fn per_pair_sampling_mean() {
        let mut buf = ReplayBuffer::new(2, 2);
        for _ in 0..3 {
            buf.push(t(0, 1, 0.0, 0)).unwrap();
        }
        buf.push(t(0, 1, 1.0, 1)).unwrap();
        // other pairs must never leak into the sample
        buf.push(t(1, 0, 100.0, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| buf.sample_for_pair(0, 1, &mut rng).unwrap().r)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.25).abs() < 0.01);
    }

    #[test]
    fn sampling_is_pure_and_reproducible() {
        let mut buf = ReplayBuffer::new(3, 1);
        for s in 0..3 {
            buf.push(t(s, 0, s as f64, 0)).unwrap();
        }
        let snapshot = buf.clone();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| buf.sample_uniform(&mut rng).unwrap().s)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_eq!(buf, snapshot);
    }

    #[test]
    fn empirical_stats_means() {
        let mut buf = ReplayBuffer::new(2, 1);
        assert_eq!(buf.empirical_stats(0, 0), PairStats::NoData);
        buf.push(t(0, 0, 1.0, 0)).unwrap();
        buf.push(t(0, 0, 3.0, 1)).unwrap();
        match buf.empirical_stats(0, 0) {
            PairStats::Observed {
                mean_reward,
                next_state,
                count,
            } => {
                assert_eq!(mean_reward, 2.0);
                assert_eq!(next_state, vec![0.5, 0.5]);
                assert_eq!(count, 2);
            }
            PairStats::NoData => panic!("expected data"),
        }
    }

    fn log(pairs: &[(u32, u32)]) -> Vec<Visit> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(s, a))| Visit {
                iteration: i as u64 + 1,
                s,
                a,
            })
            .collect()
    }

    /// Brute force: every iteration start, scan forward until covered.
    fn covering_brute(visits: &[Visit], pairs: usize, n_actions: usize) -> f64 {
        let first = visits[0].iteration;
        let last = visits.last().unwrap().iteration;
        let mut longest = 0;
        for start in first..=last {
            let mut seen = vec![false; pairs];
            let mut left = pairs;
            for v in visits.iter().filter(|v| v.iteration >= start) {
                let p = v.s as usize * n_actions + v.a as usize;
                if !seen[p] {
                    seen[p] = true;
                    left -= 1;
                    if left == 0 {
                        longest = longest.max(v.iteration - start + 1);
                        break;
                    }
                }
            }
        }
        pairs as f64 / longest as f64
    }

    #[test]
    fn perfect_cycle_covers_with_one() {
        let cycle: Vec<(u32, u32)> = (0..5).flat_map(|_| [(0, 0), (0, 1), (1, 0), (1, 1)]).collect();
        assert_eq!(covering_constant(&log(&cycle), 2, 2).unwrap(), 1.0);
    }

    #[test]
    fn worst_window_two_pairs() {
        // A B A A B: worst window for B is A A B
        let v = log(&[(0, 0), (1, 0), (0, 0), (0, 0), (1, 0)]);
        let c = covering_constant(&v, 2, 1).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c, covering_brute(&v, 2, 1));
    }

    #[test]
    fn missing_pair_violates() {
        let v = log(&[(0, 0), (0, 0)]);
        assert_eq!(
            covering_constant(&v, 2, 1),
            Err(CoverageError::NeverVisited { s: 1, a: 0 })
        );
    }

    #[test]
    fn replay_gaps_are_charged() {
        // online visits at iterations 1, 4, 7, ... as with M = 2, K = 1
        let v: Vec<Visit> = (0..30)
            .map(|i| Visit {
                iteration: 3 * i as u64 + 1,
                s: (i % 3) as u32,
                a: 0,
            })
            .collect();
        let c = covering_constant(&v, 3, 1).unwrap();
        assert!((c - 1.0 / 3.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn two_pointer_matches_brute_force(
            raw in proptest::collection::vec((0u32..3, 1u64..4), 6..60)
        ) {
            let mut it = 0;
            let visits: Vec<Visit> = raw
                .iter()
                .map(|&(p, gap)| {
                    it += gap;
                    Visit { iteration: it, s: p, a: 0 }
                })
                .collect();
            match covering_constant(&visits, 3, 1) {
                Ok(c) => proptest::prop_assert_eq!(c, covering_brute(&visits, 3, 1)),
                Err(_) => proptest::prop_assert!((0..3).any(|p| !raw.iter().any(|r| r.0 == p))),
            }
        }
    }
}
