//! Environment constructors: grid worlds, rare-experience composites and
//! random tabular MDPs.

pub mod grid;
pub mod random;
pub mod rare;

pub use grid::{grid_to_mdp, parse_grid, Cell, GridError, GridSpec, Move};
pub use random::{random_mdp, RandomMdpSpec};
pub use rare::{compose_rare, gap_check, shipped_instance, GapReport, RareError, RareMdpSpec};

/// Shipped 20×20 layout with a 32-step shortest path.
pub const MEDIUM_GRID: &str = include_str!("../../../../grids/medium.txt");
/// Shipped 20×20 layout with a 37-step shortest path.
pub const HARD_GRID: &str = include_str!("../../../../grids/hard.txt");

/// Looks up a shipped layout by name.
pub fn shipped_grid(name: &str) -> Option<&'static str> {
    match name {
        "medium" => Some(MEDIUM_GRID),
        "hard" => Some(HARD_GRID),
        _ => None,
    }
}
