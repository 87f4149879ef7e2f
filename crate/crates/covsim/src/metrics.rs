//! Perception quality metrics: importance-weighted loss and recall.
//!
//! Ground truth for a frame is every traffic participant within the
//! evaluation radius of the ego, whether or not anyone can see it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::perception::DetectionSet;
use crate::world::EntityId;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub loss: f64,
    pub recall: f64,
    pub n_ground_truth: usize,
    pub n_detected: usize,
}

/// Summed importance weight of ground-truth objects missing from the fused
/// detection set.
pub fn perception_loss(ground_truth: &BTreeMap<EntityId, f64>, fused: &DetectionSet) -> f64 {
    ground_truth
        .iter()
        .filter(|(id, _)| !fused.contains(id))
        .map(|(_, &w)| w)
        .sum()
}

/// |fused ∩ GT| / |GT|; 1 by convention on an empty ground truth.
pub fn recall(ground_truth: &BTreeMap<EntityId, f64>, fused: &DetectionSet) -> f64 {
    if ground_truth.is_empty() {
        return 1.0;
    }
    let hit = ground_truth.keys().filter(|id| fused.contains(id)).count();
    hit as f64 / ground_truth.len() as f64
}

pub fn frame_metrics(
    ground_truth: &BTreeMap<EntityId, f64>,
    fused: &DetectionSet,
) -> FrameMetrics {
    FrameMetrics {
        loss: perception_loss(ground_truth, fused),
        recall: recall(ground_truth, fused),
        n_ground_truth: ground_truth.len(),
        n_detected: ground_truth.keys().filter(|id| fused.contains(id)).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub frames: usize,
    pub mean_loss: f64,
    pub mean_recall: f64,
}

/// Arithmetic means over a frame stream.
pub fn aggregate(stream: &[FrameMetrics]) -> Result<MetricsSummary, Error> {
    if stream.is_empty() {
        return Err(Error::Domain("cannot aggregate an empty metric stream".into()));
    }
    let n = stream.len() as f64;
    Ok(MetricsSummary {
        frames: stream.len(),
        mean_loss: stream.iter().map(|m| m.loss).sum::<f64>() / n,
        mean_recall: stream.iter().map(|m| m.recall).sum::<f64>() / n,
    })
}

/// Standard deviation across per-seed means (population form).
pub fn across_seed_std(means: &[f64]) -> f64 {
    if means.len() < 2 {
        return 0.0;
    }
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    (means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n).sqrt()
}
