//! Keyframes: the unit of data exchanged between tracking and mapping.

use crate::geometry::{CameraIntrinsics, Pose};
use crate::image::{DepthMap, RgbImage};

/// Why a frame was promoted to a keyframe.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelectionInfo {
    pub mean_flow_px: f64,
    pub inlier_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub frame_index: usize,
    pub timestamp: f64,
    /// Estimated camera-to-world pose.
    pub pose: Pose,
    pub rgb: RgbImage,
    pub prior_depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
    pub selection: SelectionInfo,
}
