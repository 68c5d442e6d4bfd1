//! Keyframe selection from correspondence statistics.

use crate::scene_sim::Correspondence;

#[derive(Debug, Clone, Copy)]
pub struct KeyframeSelectConfig {
    /// Promote when the mean correspondence displacement exceeds this.
    pub flow_threshold_px: f64,
    /// Promote when the surviving-correspondence fraction drops below this.
    pub min_inlier_fraction: f64,
}

impl Default for KeyframeSelectConfig {
    fn default() -> Self {
        KeyframeSelectConfig {
            flow_threshold_px: 16.0,
            min_inlier_fraction: 0.6,
        }
    }
}

/// Decides whether the current frame becomes a keyframe relative to the last
/// one. `attempted` is the number of candidate pixels before in-image and
/// validity filtering.
pub fn select_keyframe(
    correspondences: &[Correspondence],
    attempted: usize,
    cfg: &KeyframeSelectConfig,
) -> bool {
    if attempted == 0 {
        return true;
    }
    let inlier_fraction = correspondences.len() as f64 / attempted as f64;
    if inlier_fraction < cfg.min_inlier_fraction {
        return true;
    }
    if correspondences.is_empty() {
        return true;
    }
    let mean_flow = correspondences
        .iter()
        .map(|c| (c.pixel_j - c.pixel_i).norm())
        .sum::<f64>()
        / correspondences.len() as f64;
    mean_flow > cfg.flow_threshold_px
}
