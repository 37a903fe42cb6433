//! Shipped environments, file formats and the rare composition.

use std::path::Path;

use approx::assert_abs_diff_eq;
use replay_qlab::env::{compose_rare, grid_to_mdp, parse_grid, shipped_grid, shipped_instance, GridError};
use replay_qlab::harness::{load_environment, EnvironmentRef};
use replay_qlab::{optimal_q, run, validate_mdp, LearnerConfig, TabularMdp};

fn repo_root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

/// Follows the greedy policy of `q` on a deterministic MDP.
fn greedy_steps_to_goal(mdp: &TabularMdp, q: &replay_qlab::QTable, from: usize) -> Option<usize> {
    let mut s = from;
    for step in 0..=mdp.n_states() {
        if mdp.is_goal(s) {
            return Some(step);
        }
        let a = q.greedy_action(s);
        s = mdp.row(s, a).iter().position(|&p| p == 1.0)?;
    }
    None
}

#[test]
fn shipped_grids_are_episodic() {
    for (name, path_len) in [("medium", 32), ("hard", 37)] {
        let spec = parse_grid(shipped_grid(name).unwrap()).unwrap();
        assert_eq!(spec.shortest_path(), Some(path_len), "{name}");
        let mdp = grid_to_mdp(&spec, 0.95).unwrap();
        assert!(validate_mdp(&mdp).is_ok());
        let star = optimal_q(&mdp, 1e-10);
        for s in 0..mdp.n_states() {
            let steps = greedy_steps_to_goal(&mdp, &star, s);
            assert!(
                steps.is_some_and(|n| n <= mdp.n_states()),
                "{name}: state {s} loops"
            );
        }
        assert_eq!(
            greedy_steps_to_goal(&mdp, &star, mdp.start_state()),
            Some(path_len)
        );
    }
}

#[test]
fn grid_files_match_shipped_text() {
    for name in ["medium", "hard"] {
        let text = std::fs::read_to_string(repo_root().join(format!("grids/{name}.txt"))).unwrap();
        assert_eq!(text, shipped_grid(name).unwrap());
    }
}

#[test]
fn trailing_newline_is_optional() {
    let with = parse_grid("S.\n.G\n").unwrap();
    let without = parse_grid("S.\n.G").unwrap();
    assert_eq!(with, without);
    assert!(matches!(parse_grid("S.\n.G.\n"), Err(GridError::Ragged { .. })));
}

#[test]
fn golden_mdp_document() {
    let text = std::fs::read_to_string(repo_root().join("mdps/two_state.json")).unwrap();
    let mdp = TabularMdp::from_json(&text).unwrap();
    let star = optimal_q(&mdp, 1e-12);
    // V(1) = 2 / (1 - 1/2) = 4, V(0) = 1 + 4/2 = 3.
    let expected = [1.5, 3.0, 4.0, 0.5 * (0.5 * 3.0 + 0.5 * 4.0)];
    for (got, want) in star.values().iter().zip(expected) {
        assert_abs_diff_eq!(*got, want, epsilon = 1e-11);
    }
    let again = TabularMdp::from_json(&mdp.to_json()).unwrap();
    assert_eq!(again, mdp);

    let env = EnvironmentRef::Mdp {
        path: "mdps/two_state.json".into(),
    };
    let loaded = load_environment(&env, repo_root()).unwrap();
    assert_eq!(loaded.mdp, mdp);
}

#[test]
fn decoupled_blocks_keep_their_values() {
    let spec = shipped_instance(0.0);
    let joined = compose_rare(&spec).unwrap();
    let star = optimal_q(&joined, 1e-11);
    let q1 = optimal_q(&spec.m1, 1e-11);
    let q2 = optimal_q(&spec.m2, 1e-11);
    let (n1, na) = (spec.m1.n_states(), spec.m1.n_actions());
    for (i, v) in q1.values().iter().enumerate() {
        assert_abs_diff_eq!(star.values()[i], *v, epsilon = 1e-9);
    }
    for (i, v) in q2.values().iter().enumerate() {
        assert_abs_diff_eq!(star.values()[n1 * na + i], *v, epsilon = 1e-8);
    }
}

#[test]
fn bridge_crossings_track_epsilon() {
    let eps = 0.02;
    let spec = shipped_instance(eps);
    let joined = compose_rare(&spec).unwrap();
    let steps = 400_000u64;
    let mut config = LearnerConfig::for_mdp(&joined, steps, 11);
    config.bridge = Some((spec.s1, spec.offset() + spec.s2));
    let trace = run(&joined, &config, None).unwrap();
    // A bridge state recurs every fourth step on either side.
    let trials = steps as f64 / 4.0;
    let expected = eps * trials;
    let sd = (trials * eps * (1.0 - eps)).sqrt();
    let got = trace.bridge_crossings as f64;
    assert!((got - expected).abs() <= 4.0 * sd, "{got} vs {expected} ± {sd}");
}
