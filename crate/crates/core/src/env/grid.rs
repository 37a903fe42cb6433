//! Text grid worlds.
//!
//! Layout format (version 1): newline-separated rows of equal length over
//! the alphabet `#` wall, `.` free, `S` start, `G` goal, with exactly one `S`
//! and one `G`. A single trailing newline is optional.

use std::collections::VecDeque;

use thiserror::Error;

use crate::mdp::{MdpError, RewardSpec, TabularMdp};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("empty layout")]
    Empty,
    #[error("row {row} has length {len}, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
    #[error("unknown character {ch:?} at row {row}, column {col}")]
    UnknownChar { ch: char, row: usize, col: usize },
    #[error("layout needs exactly one {which}, found {count}")]
    Marker { which: &'static str, count: usize },
    #[error("goal is unreachable from start")]
    Unreachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Wall,
    Start,
    Goal,
}

/// Movement actions, in action-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    fn delta(self) -> (isize, isize) {
        match self {
            Move::Up => (-1, 0),
            Move::Down => (1, 0),
            Move::Left => (0, -1),
            Move::Right => (0, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    start: (usize, usize),
    goal: (usize, usize),
    /// State index of every non-wall cell, row-major.
    state_ids: Vec<Option<usize>>,
    n_free: usize,
}

pub fn parse_grid(text: &str) -> Result<GridSpec, GridError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Err(GridError::Empty);
    }
    let rows: Vec<&str> = body.split('\n').collect();
    let width = rows[0].chars().count();
    let mut cells = Vec::with_capacity(width * rows.len());
    let (mut starts, mut goals) = (Vec::new(), Vec::new());
    for (r, line) in rows.iter().enumerate() {
        let len = line.chars().count();
        if len != width {
            return Err(GridError::Ragged {
                row: r,
                len,
                expected: width,
            });
        }
        for (c, ch) in line.chars().enumerate() {
            cells.push(match ch {
                '#' => Cell::Wall,
                '.' => Cell::Free,
                'S' => {
                    starts.push((r, c));
                    Cell::Start
                }
                'G' => {
                    goals.push((r, c));
                    Cell::Goal
                }
                other => {
                    return Err(GridError::UnknownChar {
                        ch: other,
                        row: r,
                        col: c,
                    })
                }
            });
        }
    }
    if width == 0 {
        return Err(GridError::Empty);
    }
    if starts.len() != 1 {
        return Err(GridError::Marker {
            which: "start",
            count: starts.len(),
        });
    }
    if goals.len() != 1 {
        return Err(GridError::Marker {
            which: "goal",
            count: goals.len(),
        });
    }
    let mut next_id = 0;
    let state_ids = cells
        .iter()
        .map(|c| {
            (*c != Cell::Wall).then(|| {
                next_id += 1;
                next_id - 1
            })
        })
        .collect();
    let spec = GridSpec {
        width,
        height: rows.len(),
        cells,
        start: starts[0],
        goal: goals[0],
        state_ids,
        n_free: next_id,
    };
    if spec.shortest_path().is_none() {
        return Err(GridError::Unreachable);
    }
    Ok(spec)
}

impl GridSpec {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn start(&self) -> (usize, usize) {
        self.start
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn state_of(&self, row: usize, col: usize) -> Option<usize> {
        self.state_ids[row * self.width + col]
    }

    pub fn cell_of(&self, state: usize) -> (usize, usize) {
        let idx = self
            .state_ids
            .iter()
            .position(|id| *id == Some(state))
            .expect("state index in range");
        (idx / self.width, idx % self.width)
    }

    /// Destination of `mv` from `(row, col)`; walls and edges block.
    pub fn step(&self, (row, col): (usize, usize), mv: Move) -> (usize, usize) {
        let (dr, dc) = mv.delta();
        let (nr, nc) = (row as isize + dr, col as isize + dc);
        if nr < 0 || nc < 0 || nr >= self.height as isize || nc >= self.width as isize {
            return (row, col);
        }
        let (nr, nc) = (nr as usize, nc as usize);
        if self.cell(nr, nc) == Cell::Wall {
            (row, col)
        } else {
            (nr, nc)
        }
    }

    /// Moves on the shortest start-to-goal path, by breadth-first search.
    pub fn shortest_path(&self) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.cells.len()];
        let mut queue = VecDeque::new();
        dist[self.start.0 * self.width + self.start.1] = 0;
        queue.push_back(self.start);
        while let Some(pos) = queue.pop_front() {
            let d = dist[pos.0 * self.width + pos.1];
            if pos == self.goal {
                return Some(d);
            }
            for mv in Move::ALL {
                let next = self.step(pos, mv);
                let idx = next.0 * self.width + next.1;
                if dist[idx] == usize::MAX {
                    dist[idx] = d + 1;
                    queue.push_back(next);
                }
            }
        }
        None
    }
}

/// Deterministic episodic MDP over the free cells.
///
/// Every step from a non-goal cell costs −1, including the one entering the
/// goal and bumps into walls or edges, which leave the agent in place. Any
/// action in the goal costs 0 and returns the agent to the start.
pub fn grid_to_mdp(spec: &GridSpec, gamma: f64) -> Result<TabularMdp, MdpError> {
    let n = spec.n_free;
    let start = spec.state_of(spec.start.0, spec.start.1).expect("start is free");
    let goal = spec.state_of(spec.goal.0, spec.goal.1).expect("goal is free");
    let mut transitions = vec![0.0; n * 4 * n];
    let mut rewards = vec![0.0; n * 4];
    for row in 0..spec.height {
        for col in 0..spec.width {
            let Some(s) = spec.state_of(row, col) else {
                continue;
            };
            for mv in Move::ALL {
                let a = mv as usize;
                let (next, r) = if s == goal {
                    (start, 0.0)
                } else {
                    let (nr, nc) = spec.step((row, col), mv);
                    (spec.state_of(nr, nc).expect("moves land on free cells"), -1.0)
                };
                transitions[(s * 4 + a) * n + next] = 1.0;
                rewards[s * 4 + a] = r;
            }
        }
    }
    Ok(
        TabularMdp::new(n, 4, transitions, RewardSpec::Deterministic(rewards), gamma, 1.0)?
            .with_start(start)
            .with_goals(vec![goal]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{optimal_q, sample_step, validate_mdp, QTable};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smallest_grid() {
        let spec = parse_grid("SG").unwrap();
        assert_eq!(spec.n_free(), 2);
        assert_eq!((spec.start(), spec.goal()), ((0, 0), (0, 1)));
        let mdp = grid_to_mdp(&spec, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (s, g) = (spec.state_of(0, 0).unwrap(), spec.state_of(0, 1).unwrap());
        assert_eq!(
            sample_step(&mdp, s, Move::Right as usize, &mut rng).unwrap(),
            (-1.0, g)
        );
        for a in 0..4 {
            assert_eq!(sample_step(&mdp, g, a, &mut rng).unwrap(), (0.0, s));
        }
    }

    #[test]
    fn detour_around_wall() {
        let spec = parse_grid("S#\n.G\n").unwrap();
        assert_eq!(spec.n_free(), 3);
        assert_eq!(spec.shortest_path(), Some(2));
        let mdp = grid_to_mdp(&spec, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = spec.state_of(0, 0).unwrap();
        assert_eq!(
            sample_step(&mdp, s, Move::Right as usize, &mut rng).unwrap(),
            (-1.0, s)
        );
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_grid("S#G"), Err(GridError::Unreachable));
        assert!(matches!(
            parse_grid("S.\n.G."),
            Err(GridError::Ragged { row: 1, .. })
        ));
        assert!(matches!(
            parse_grid("SxG"),
            Err(GridError::UnknownChar { ch: 'x', .. })
        ));
        assert!(matches!(
            parse_grid("S.G\nS.."),
            Err(GridError::Marker {
                which: "start",
                count: 2
            })
        ));
        assert!(matches!(
            parse_grid("S.."),
            Err(GridError::Marker {
                which: "goal",
                count: 0
            })
        ));
        assert_eq!(parse_grid(""), Err(GridError::Empty));
    }

    #[test]
    fn corridor_optimal_score() {
        let spec = parse_grid("S.G").unwrap();
        let mdp = grid_to_mdp(&spec, 0.9).unwrap();
        assert!(validate_mdp(&mdp).is_ok());
        let star = optimal_q(&mdp, 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut state, mut score) = (mdp.start_state(), 0.0);
        while !mdp.is_goal(state) {
            let (r, next) = sample_step(&mdp, state, star.greedy_action(state), &mut rng).unwrap();
            score += r;
            state = next;
        }
        let (r, _) = sample_step(&mdp, state, 0, &mut rng).unwrap();
        assert_eq!(score + r, -2.0);
    }

    #[test]
    fn greedy_optimal_policy_reaches_goal() {
        let spec = parse_grid(crate::env::MEDIUM_GRID).unwrap();
        let mdp = grid_to_mdp(&spec, 0.95).unwrap();
        let star = optimal_q(&mdp, 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let steps = crate::learner::greedy_rollout(&mdp, &star, mdp.n_states(), &mut rng).unwrap();
        assert_eq!(steps, spec.shortest_path());
        let zero = QTable::for_mdp(&mdp, 0.0);
        assert!(zero.matches(&mdp));
    }
}
