//! Per-clip difficulty blending of upper-body targets, adapted by episode survival.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::motion::MotionDataset;

pub const SURVIVAL_THRESHOLD: f64 = 0.9;
pub const ALPHA_STEP_UP: f64 = 0.05;
pub const ALPHA_STEP_DOWN: f64 = 0.01;

/// `q0 + α (q_target - q0)`, element-wise.
pub fn curriculum_target(q0: &[f64], q_target: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = vec![0.0; q0.len()];
    curriculum_target_into(q0, q_target, alpha, &mut out);
    out
}

pub fn curriculum_target_into(q0: &[f64], q_target: &[f64], alpha: f64, out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(q0).zip(q_target) {
        *o = a + alpha * (b - a);
    }
}

/// `α + 0.05` when the episode survived at least 90% of the maximum time, else `α - 0.01`,
/// clamped to `[alpha_min, 1]`.
pub fn curriculum_update(alpha: f64, survival_fraction: f64, alpha_min: f64) -> f64 {
    let next = if survival_fraction >= SURVIVAL_THRESHOLD {
        alpha + ALPHA_STEP_UP
    } else {
        alpha - ALPHA_STEP_DOWN
    };
    next.clamp(alpha_min, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub alpha_min: f64,
    pub alpha: BTreeMap<String, f64>,
}

impl CurriculumState {
    pub fn new(dataset: &MotionDataset, alpha_init: f64, alpha_min: f64) -> Self {
        let a0 = alpha_init.clamp(alpha_min, 1.0);
        CurriculumState {
            alpha_min,
            alpha: dataset.clips.iter().map(|c| (c.id.clone(), a0)).collect(),
        }
    }

    pub fn get(&self, clip_id: &str) -> f64 {
        self.alpha.get(clip_id).copied().unwrap_or(self.alpha_min)
    }

    pub fn update(&mut self, clip_id: &str, survival_fraction: f64) -> f64 {
        let a = curriculum_update(self.get(clip_id), survival_fraction, self.alpha_min);
        self.alpha.insert(clip_id.to_string(), a);
        a
    }

    pub fn mean(&self) -> f64 {
        if self.alpha.is_empty() {
            return 0.0;
        }
        self.alpha.values().sum::<f64>() / self.alpha.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn update_rule_examples() {
        assert_eq!(curriculum_update(0.5, 0.95, 0.1), 0.55);
        assert_eq!(curriculum_update(0.5, 0.5, 0.1), 0.49);
        assert_eq!(curriculum_update(0.98, 1.0, 0.1), 1.0);
        assert_eq!(curriculum_update(0.105, 0.0, 0.1), 0.1);
    }

    #[test]
    fn blend_examples() {
        assert_eq!(curriculum_target(&[0.2], &[0.6], 0.0), vec![0.2]);
        assert_eq!(curriculum_target(&[0.2], &[0.6], 1.0), vec![0.6]);
        assert!((curriculum_target(&[0.2], &[0.6], 0.5)[0] - 0.4).abs() < 1e-15);
    }
}
