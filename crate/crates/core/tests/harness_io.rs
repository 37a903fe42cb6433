//! End-to-end harness behaviour: determinism, CSV schema, censoring and
//! aggregate self-consistency.

use std::path::Path;

use replay_qlab::harness::results::{
    aggregate_to_csv_string, read_rows_csv, rows_to_csv_string, NA, ROW_HEADER,
};
use replay_qlab::harness::{aggregate, run_experiment, ExperimentConfig, Measure};

const SMALL_SWEEP: &str = r#"
name = "small"
base_seed = 7
repetitions = 4

[environment]
kind = "grid"
layout = "medium"
gamma = 0.95

[learner]
q_init = -19.0
horizon = 40000
log_stride = 5000

[sweep]
m = [0, 2]
k = [4]

[convergence]
score_threshold = -60.0
stop_at_score = false
q_threshold = 0.0001

[eval]
episodes = 1
"#;

fn sweep() -> (String, String) {
    let config = ExperimentConfig::from_toml(SMALL_SWEEP).unwrap();
    let report = run_experiment(&config, Path::new(".")).unwrap();
    (
        rows_to_csv_string(&report.rows).unwrap(),
        aggregate_to_csv_string(&report.aggregate).unwrap(),
    )
}

#[test]
fn sweep_is_a_function_of_config_and_seed() {
    assert_eq!(sweep(), sweep());
}

#[test]
fn rows_csv_schema() {
    let (rows, _) = sweep();
    assert!(!rows.contains('\r'));
    let mut lines = rows.lines();
    assert_eq!(lines.next().unwrap(), ROW_HEADER.join(","));
    let data: Vec<&str> = lines.collect();
    assert_eq!(data.len(), 8);
    for line in data {
        assert_eq!(line.split(',').count(), ROW_HEADER.len());
    }
}

#[test]
fn aggregates_recompute_from_emitted_rows() {
    let (rows, emitted) = sweep();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    std::fs::write(&path, &rows).unwrap();
    let parsed = read_rows_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(rows_to_csv_string(&parsed).unwrap(), rows);
    assert_eq!(aggregate_to_csv_string(&aggregate(&parsed)).unwrap(), emitted);
}

#[test]
fn short_horizons_censor_explicitly() {
    let text = SMALL_SWEEP.replace("horizon = 40000", "horizon = 500");
    let config = ExperimentConfig::from_toml(&text).unwrap();
    let report = run_experiment(&config, Path::new(".")).unwrap();
    for row in &report.rows {
        assert_eq!(row.online_steps_to_score, Measure::Censored);
        assert_eq!(row.total_steps_to_qconv, Measure::Censored);
        assert!(row.online_steps <= row.total_steps);
    }
    let csv = rows_to_csv_string(&report.rows).unwrap();
    let header: Vec<&str> = ROW_HEADER.to_vec();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[col("online_steps_to_score")], NA);
        assert_eq!(fields[col("score_censored")], "1");
        assert_eq!(fields[col("qconv_censored")], "1");
    }
}

#[test]
fn online_never_exceeds_total() {
    let config = ExperimentConfig::from_toml(SMALL_SWEEP).unwrap();
    let report = run_experiment(&config, Path::new(".")).unwrap();
    for row in &report.rows {
        assert!(row.online_steps <= row.total_steps);
        if let (Some(online), Some(total)) = (
            row.online_steps_to_score.value(),
            row.total_steps_to_score.value(),
        ) {
            assert!(online <= total);
        }
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"));
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
