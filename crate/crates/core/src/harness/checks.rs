//! Directional checks over experiment reports, shared by the CLI's `--check`
//! mode and the acceptance suite.

use serde::Serialize;

use super::experiment::{ComparisonReport, ExperimentReport, RareReport};
use super::results::ResultRow;
use crate::learner::ReplaySchedule;

/// Number of adjacent pairs breaking a nondecreasing order.
pub fn increase_violations(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}

/// Number of adjacent pairs breaking a nonincreasing order.
pub fn decrease_violations(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityCheck {
    pub k: usize,
    pub m_values: Vec<usize>,
    pub online_means: Vec<f64>,
    pub total_means: Vec<f64>,
    pub online_violations: usize,
    pub total_violations: usize,
    pub pass: bool,
}

fn mean_of(rows: &[&ResultRow], get: fn(&ResultRow) -> Option<u64>) -> f64 {
    let values: Vec<f64> = rows.iter().filter_map(|r| get(r)).map(|v| v as f64).collect();
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Orders the no-replay cell and every constant cell with replay interval
/// `k` by `M`, then counts ordering violations of the mean steps to score:
/// online steps should not increase with `M`, total steps should not
/// decrease. At most `tolerated` violations per ordering pass. A cell with
/// no uncensored run has an undefined mean and fails the check.
pub fn sweep_monotonicity(report: &ExperimentReport, k: usize, tolerated: usize) -> MonotonicityCheck {
    let mut cells: Vec<(usize, Vec<&ResultRow>)> = Vec::new();
    for row in &report.rows {
        let keep = row.schedule == ReplaySchedule::None.tag()
            || row.schedule == (ReplaySchedule::Constant { m: row.m, k }).tag();
        if !keep {
            continue;
        }
        match cells.iter_mut().find(|(m, _)| *m == row.m) {
            Some((_, rows)) => rows.push(row),
            None => cells.push((row.m, vec![row])),
        }
    }
    cells.sort_by_key(|(m, _)| *m);
    let online_means: Vec<f64> = cells
        .iter()
        .map(|(_, rows)| mean_of(rows, |r| r.online_steps_to_score.value()))
        .collect();
    let total_means: Vec<f64> = cells
        .iter()
        .map(|(_, rows)| mean_of(rows, |r| r.total_steps_to_score.value()))
        .collect();
    let online_violations = decrease_violations(&online_means);
    let total_violations = increase_violations(&total_means);
    let defined = online_means.iter().chain(&total_means).all(|v| v.is_finite());
    MonotonicityCheck {
        k,
        m_values: cells.iter().map(|(m, _)| *m).collect(),
        pass: defined && cells.len() >= 2 && online_violations <= tolerated && total_violations <= tolerated,
        online_means,
        total_means,
        online_violations,
        total_violations,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoveringCheck {
    pub checked: usize,
    pub violations: usize,
    /// Runs where some pair was never visited, so no covering constant
    /// exists; they are not counted as violations.
    pub unmeasured: usize,
    pub worst_excess: f64,
    pub pass: bool,
}

/// `c_hat <= K / (M + K) + slack` for every run with constant replay.
pub fn covering_bound(rows: &[ResultRow], slack: f64) -> CoveringCheck {
    let (mut checked, mut violations, mut unmeasured) = (0, 0, 0);
    let mut worst_excess = f64::NEG_INFINITY;
    for row in rows {
        let (m, Some(k)) = (row.m, row.k) else { continue };
        if m == 0 {
            continue;
        }
        let Some(c) = row.c_hat else {
            unmeasured += 1;
            continue;
        };
        checked += 1;
        let excess = c - k as f64 / (m + k) as f64;
        worst_excess = worst_excess.max(excess);
        if excess > slack {
            violations += 1;
        }
    }
    CoveringCheck {
        checked,
        violations,
        unmeasured,
        worst_excess,
        pass: violations == 0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonCheck {
    pub constant_fraction: f64,
    pub increasing_fraction: f64,
    pub pass: bool,
}

/// Increasing-schedule success fraction at least the constant arm's minus
/// `slack`. Expects the default two-arm layout (constant first).
pub fn comparison_direction(report: &ComparisonReport, slack: f64) -> Option<ComparisonCheck> {
    let constant = report.arms.iter().find(|a| a.schedule.starts_with("constant"))?;
    let increasing = report
        .arms
        .iter()
        .find(|a| a.schedule.starts_with("increasing"))?;
    Some(ComparisonCheck {
        constant_fraction: constant.fraction,
        increasing_fraction: increasing.fraction,
        pass: increasing.fraction >= constant.fraction - slack,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RareCheck {
    pub max_probability_gap: f64,
    pub probabilities_pass: bool,
    pub far_fraction_n_le2: Option<f64>,
    pub separation_pass: bool,
    pub within_psi_fraction: Option<f64>,
    pub replay_pass: bool,
}

/// Empirical `P(N = 0, 1, 2)` within `tolerance` of the analytic values;
/// separation and post-replay fractions at least `fraction`.
pub fn rare_checks(report: &RareReport, tolerance: f64, fraction: f64) -> RareCheck {
    let gaps = [
        (report.empirical.p_n0 - report.analytic.p_n0).abs(),
        (report.empirical.p_n1 - report.analytic.p_n1).abs(),
        (report.empirical.p_n2 - report.analytic.p_n2).abs(),
    ];
    let max_probability_gap = gaps.iter().cloned().fold(0.0, f64::max);
    RareCheck {
        max_probability_gap,
        probabilities_pass: max_probability_gap <= tolerance,
        far_fraction_n_le2: report.far_fraction_n_le2,
        separation_pass: report.far_fraction_n_le2.is_some_and(|f| f >= fraction),
        within_psi_fraction: report.within_psi_fraction,
        replay_pass: report.within_psi_fraction.is_some_and(|f| f >= fraction),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::results::Measure;

    #[test]
    fn violation_counts() {
        assert_eq!(increase_violations(&[1.0, 2.0, 2.0, 3.0]), 0);
        assert_eq!(increase_violations(&[1.0, 0.5, 2.0, 1.0]), 2);
        assert_eq!(decrease_violations(&[3.0, 2.0, 2.5, 1.0]), 1);
        assert_eq!(decrease_violations(&[]), 0);
    }

    fn row(m: usize, k: Option<usize>, c_hat: Option<f64>) -> ResultRow {
        ResultRow {
            run_index: 0,
            seed: 0,
            m,
            k,
            schedule: String::new(),
            online_steps_to_score: Measure::NotMeasured,
            total_steps_to_score: Measure::NotMeasured,
            total_steps_to_qconv: Measure::NotMeasured,
            reached_goal: None,
            bridge_count: None,
            final_distance: None,
            c_hat,
            online_steps: 0,
            total_steps: 0,
        }
    }

    #[test]
    fn covering_bound_counts() {
        let rows = vec![
            row(0, None, Some(0.9)),
            row(1, Some(4), Some(0.5)),
            row(4, Some(4), Some(0.56)),
            row(4, Some(4), None),
        ];
        let check = covering_bound(&rows, 0.05);
        assert_eq!((check.checked, check.violations, check.unmeasured), (2, 1, 1));
        assert!(!check.pass);
        assert!((check.worst_excess - 0.06).abs() < 1e-12);
    }
}
