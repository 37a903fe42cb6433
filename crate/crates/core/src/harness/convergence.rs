use serde::{Deserialize, Serialize};

use super::config::QCriterion;
use super::HarnessError;
use crate::learner::{DistanceRecord, EpisodeRecord};

/// First episode meeting a score threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCrossing {
    pub episode: usize,
    pub online_steps: u64,
    pub total_steps: u64,
}

/// `None` means censored: no episode reached the threshold.
pub fn detect_score_convergence(episodes: &[EpisodeRecord], threshold: f64) -> Option<ScoreCrossing> {
    episodes
        .iter()
        .position(|e| e.score >= threshold)
        .map(|i| ScoreCrossing {
            episode: i,
            online_steps: episodes[i].online_steps,
            total_steps: episodes[i].total_steps,
        })
}

/// First logged iteration meeting the threshold, or `None` when censored.
///
/// Fails when nothing was logged, which happens when no Q* was supplied to
/// the run or logging was disabled.
pub fn detect_q_convergence(
    distances: &[DistanceRecord],
    threshold: f64,
    criterion: QCriterion,
) -> Result<Option<u64>, HarnessError> {
    if distances.is_empty() {
        return Err(HarnessError::MissingQStar);
    }
    Ok(distances
        .iter()
        .find(|d| match criterion {
            QCriterion::Distance => d.distance <= threshold,
            QCriterion::Change => d.change <= threshold,
        })
        .map(|d| d.iteration))
}
