//! Drives the built binary from the repository root.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cli(args: &[&str]) -> Output {
    cli_with_env(args, &[])
}

fn cli_with_env(args: &[&str], vars: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_replay-qlab"));
    cmd.args(args)
        .current_dir(repo_root())
        .env_remove("REPLAY_QLAB_THREADS");
    for (k, v) in vars {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

const TINY_SWEEP: &str = r#"
name = "tiny"
base_seed = 3
repetitions = 3

[environment]
kind = "grid"
layout = "medium"
gamma = 0.95

[learner]
q_init = -19.0
horizon = HORIZON

[sweep]
m = [0, 2]
k = [4]

[convergence]
score_threshold = -60.0
"#;

fn tiny_config(dir: &Path, horizon: u64) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY_SWEEP.replace("HORIZON", &horizon.to_string())).unwrap();
    path
}

#[test]
fn bounds_report_json() {
    let out = cli(&[
        "bounds",
        "--gamma",
        "0.9",
        "--rmax",
        "1",
        "--eps1",
        "0.1",
        "--delta",
        "0.1",
        "--c",
        "0.5",
        "--states",
        "4",
        "--actions",
        "2",
        "--m",
        "1",
        "--k",
        "1",
    ]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((report["v_max"].as_f64().unwrap() - 10.0).abs() < 1e-9);
    assert!((report["d0"].as_f64().unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(report["n_epochs"].as_u64(), Some(106));
    assert_eq!(report["label"], "proof-constant bound");
}

#[test]
fn bounds_table_as_csv() {
    let out = cli(&[
        "--format",
        "csv",
        "bounds",
        "--gamma",
        "0.5",
        "--rmax",
        "1",
        "--eps1",
        "0.5",
        "--delta",
        "0.1",
        "--c",
        "0.5",
        "--states",
        "2",
        "--actions",
        "2",
        "--m",
        "1",
        "--k",
        "1",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.starts_with("quantity,value\n"));
    assert!(text.contains("\nn_epochs,9\n"));
}

#[test]
fn invalid_bound_parameters_exit_one() {
    let out = cli(&[
        "bounds",
        "--gamma",
        "1.5",
        "--rmax",
        "1",
        "--eps1",
        "0.1",
        "--delta",
        "0.1",
        "--c",
        "0.5",
        "--states",
        "4",
        "--actions",
        "2",
        "--m",
        "1",
        "--k",
        "1",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn validate_shipped_files() {
    assert_eq!(code(&cli(&["validate", "grids/medium.txt"])), 0);
    assert_eq!(code(&cli(&["validate", "grids/hard.txt"])), 0);
    assert_eq!(code(&cli(&["validate", "mdps/two_state.json"])), 0);
}

#[test]
fn validate_rejects_broken_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("bad.txt");
    std::fs::write(&grid, "S.#\n..\n").unwrap();
    let out = cli(&["validate", grid.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());

    let mdp = dir.path().join("bad.json");
    let text = std::fs::read_to_string(repo_root().join("mdps/two_state.json"))
        .unwrap()
        .replace("[0.5, 0.5]", "[0.5, 0.6]");
    std::fs::write(&mdp, text).unwrap();
    assert_eq!(code(&cli(&["validate", mdp.to_str().unwrap()])), 1);
}

#[test]
fn train_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = ["a.csv", "b.csv"].iter().map(|n| dir.path().join(n)).collect();
    for path in &paths {
        let out = cli(&[
            "train",
            "--env",
            "grid:grids/medium.txt",
            "--m",
            "4",
            "--k",
            "4",
            "--horizon",
            "500000",
            "--seed",
            "7",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(&paths[0]).unwrap();
    assert_eq!(a, std::fs::read(&paths[1]).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("series,index,online_steps,total_steps,value\n"));
    assert!(!text.contains('\r'));
}

#[test]
fn train_json_trace() {
    let out = cli(&[
        "--format",
        "json",
        "train",
        "--env",
        "random:4x2:5",
        "--gamma",
        "0.9",
        "--horizon",
        "5000",
        "--log-stride",
        "1000",
        "--noise-stride",
        "1000",
    ]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["online_steps"].as_u64(), Some(5000));
    // Snapshots at iteration 0 and every 1000 after.
    assert_eq!(doc["distances"].as_array().unwrap().len(), 6);
    assert_eq!(doc["q"].as_array().unwrap().len(), 8);
}

#[test]
fn solve_emits_every_pair() {
    let out = cli(&["solve", "--env", "mdp:mdps/two_state.json"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "state,action,q_star,greedy");
    assert_eq!(lines.len(), 5);
    let fields: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(&fields[..2], ["0", "1"]);
    assert!((fields[2].parse::<f64>().unwrap() - 3.0).abs() < 1e-9);
    assert_eq!(fields[3], "1");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&cli(&["--bogus"])), 1);
    assert_eq!(code(&cli(&["frobnicate"])), 1);
    assert_eq!(
        code(&cli(&["--format", "xml", "validate", "grids/medium.txt"])),
        1
    );
    assert_eq!(code(&cli(&["sweep", "no/such/config.toml"])), 1);
    assert_eq!(code(&cli(&["train", "--env", "maze:x"])), 1);
    assert_eq!(code(&cli(&["--help"])), 0);
}

#[test]
fn sweep_writes_rows_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 60_000);
    let rows = dir.path().join("out/rows.csv");
    let out = cli(&["sweep", config.to_str().unwrap(), "--out", rows.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&rows).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    let aggregate = std::fs::read_to_string(dir.path().join("out/rows_aggregate.csv")).unwrap();
    assert!(aggregate.starts_with("schedule,m,k,metric,"));

    let svg = dir.path().join("plot.svg");
    let out = cli(&[
        "plot",
        dir.path().join("out/rows_aggregate.csv").to_str().unwrap(),
        "--x",
        "m",
        "--y",
        "censored_fraction",
        "--filter",
        "metric=total_steps_to_score",
        "--kind",
        "bar",
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let svg = std::fs::read_to_string(svg).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(!svg.contains("href"));
}

#[test]
fn sweep_seed_flag_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 20_000);
    let cfg = config.to_str().unwrap();
    let one = cli_with_env(&["sweep", cfg], &[("REPLAY_QLAB_THREADS", "1")]);
    let three = cli_with_env(&["sweep", cfg], &[("REPLAY_QLAB_THREADS", "3")]);
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, three.stdout);
    let reseeded = cli(&["--seed", "99", "sweep", cfg]);
    assert_ne!(one.stdout, reseeded.stdout);
    assert_eq!(
        code(&cli_with_env(&["sweep", cfg], &[("REPLAY_QLAB_THREADS", "zero")])),
        1
    );
}

#[test]
fn failed_check_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // Far too short to reach the score threshold, so every cell is censored.
    let config = tiny_config(dir.path(), 300);
    let out = cli(&["--check", "sweep", config.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL"));
}

#[test]
fn sweep_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 20_000);
    let out = cli(&[
        "--format",
        "json",
        "sweep",
        config.to_str().unwrap(),
        "--reps",
        "2",
    ]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn rare_and_schedule_subcommands_run() {
    let dir = tempfile::tempdir().unwrap();
    let rare = cli(&[
        "rare",
        "configs/rare.toml",
        "--reps",
        "5",
        "--out",
        dir.path().join("rare.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&rare), 0, "{}", String::from_utf8_lossy(&rare.stderr));
    let schedules = cli(&[
        "--check",
        "schedules",
        "configs/schedules_medium.toml",
        "--reps",
        "2",
    ]);
    assert_eq!(
        code(&schedules),
        0,
        "{}",
        String::from_utf8_lossy(&schedules.stderr)
    );
    assert!(String::from_utf8_lossy(&schedules.stderr).contains("goal reached"));
}
