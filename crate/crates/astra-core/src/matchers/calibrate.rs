//! Threshold calibration for the similarity matcher: sweep the distinct
//! similarity scores observed on a validation set and keep the threshold
//! maximizing F1, breaking ties toward the smallest threshold (favoring
//! recall).

use std::sync::Arc;

use crate::domain::{MatchLabel, MatchRequest, ToolRegistry};
use crate::gateway::Gateway;

use super::semsim::SemSimMatcher;
use super::{MatcherError, SemSimConfig};

/// One scored validation sample.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationPoint {
    /// Similarity of the requested tool.
    pub score: f64,
    /// Ground-truth label is `correct`.
    pub positive: bool,
    /// The requested tool won the argmax; ineligible points predict
    /// negative at every threshold.
    pub eligible: bool,
}

impl CalibrationPoint {
    pub fn new(score: f64, positive: bool) -> Self {
        Self {
            score,
            positive,
            eligible: true,
        }
    }
}

/// F1-optimal threshold over the observed scores (threshold inclusive:
/// predict positive when eligible and score >= threshold).
pub fn calibrate_from_points(points: &[CalibrationPoint]) -> Result<f64, MatcherError> {
    let has_pos = points.iter().any(|p| p.positive);
    let has_neg = points.iter().any(|p| !p.positive);
    if !has_pos || !has_neg {
        return Err(MatcherError::CalibrationUnderdetermined);
    }

    let mut candidates: Vec<f64> = points.iter().map(|p| p.score).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("scores are not NaN"));
    candidates.dedup();

    let total_pos = points.iter().filter(|p| p.positive).count() as f64;
    let mut best: Option<(f64, f64)> = None; // (f1, threshold)
    for &threshold in &candidates {
        let mut tp = 0_f64;
        let mut fp = 0_f64;
        for p in points {
            if p.eligible && p.score >= threshold {
                if p.positive {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let fn_ = total_pos - tp;
        let denom = 2.0 * tp + fp + fn_;
        let f1 = if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
        // Strictly-greater keeps the smallest threshold on ties.
        if best.is_none_or(|(best_f1, _)| f1 > best_f1) {
            best = Some((f1, threshold));
        }
    }
    Ok(best.expect("candidates non-empty").1)
}

/// Scores a validation set with the similarity pipeline and calibrates.
///
/// `wrong` and `null` labels both count as negatives. The available tool
/// list for each request is the requested tool's own server.
pub fn calibrate_threshold(
    validation: &[MatchRequest],
    registry: Arc<ToolRegistry>,
    gateway: Arc<dyn Gateway>,
    cfg: &SemSimConfig,
) -> Result<f64, MatcherError> {
    let matcher = SemSimMatcher::new(gateway, registry, cfg.clone());
    let mut points = Vec::with_capacity(validation.len());
    for request in validation {
        let score = matcher.score(&request.task.task_text, &request.requested_tool)?;
        points.push(CalibrationPoint {
            score: score.requested_similarity,
            positive: request.label == MatchLabel::Correct,
            eligible: score.argmax_is_requested,
        });
    }
    calibrate_from_points(&points)
}
