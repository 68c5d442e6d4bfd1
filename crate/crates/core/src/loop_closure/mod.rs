//! Loop closure in four stages: covisibility-based candidate detection, Sim3
//! estimation from matched 3D points, geometric plus temporal verification,
//! and pose-graph optimization over Sim3 to remove accumulated drift.

mod detect;
mod pose_graph;
mod sim3_estimate;
mod verify;

pub use detect::{detect_candidates, DetectConfig};
pub use pose_graph::{pose_graph_optimize, PgEdge, PgoResult, PoseGraph};
pub use sim3_estimate::{estimate_sim3, estimate_sim3_robust, Sim3Estimate};
pub use verify::{KeyframeObs, LoopVerifier, VerifyConfig, VerifyOutcome};

use nalgebra::{UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::Pose;

#[derive(Debug, Error)]
pub enum LoopClosureError {
    #[error("need at least 3 point pairs, got {0}")]
    TooFewPairs(usize),
    #[error("point configuration is degenerate (collinear or coincident)")]
    Degenerate,
    #[error("pose graph is not connected over odometry edges")]
    Disconnected,
}

/// A 7-DoF similarity transform: `x ↦ scale · R · x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3 {
    pub fn identity() -> Self {
        Sim3 {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        assert!(scale > 0.0, "similarity scale must be positive");
        Sim3 {
            scale,
            rotation,
            translation,
        }
    }

    pub fn from_pose(pose: &Pose) -> Self {
        Sim3::new(1.0, pose.rotation, pose.translation)
    }

    /// Drops the scale, keeping the rigid part.
    pub fn to_pose(&self) -> Pose {
        Pose::new(self.rotation, self.translation)
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * x) + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3 {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Sim3 {
        let rot_inv = self.rotation.inverse();
        Sim3 {
            scale: 1.0 / self.scale,
            rotation: rot_inv,
            translation: -(1.0 / self.scale) * (rot_inv * self.translation),
        }
    }

    /// Chart coordinates [translation, rotation log, ln scale]; zero iff the
    /// transform is the identity.
    pub fn chart(&self) -> [f64; 7] {
        let axis = self.rotation.scaled_axis();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            axis.x,
            axis.y,
            axis.z,
            self.scale.ln(),
        ]
    }

    /// Retraction used by the pose-graph solver: additive translation,
    /// left-multiplicative rotation, multiplicative scale.
    pub fn retract(&self, delta: &[f64; 7]) -> Sim3 {
        Sim3 {
            scale: self.scale * delta[6].exp(),
            rotation: UnitQuaternion::from_scaled_axis(Vector3::new(delta[3], delta[4], delta[5]))
                * self.rotation,
            translation: self.translation + Vector3::new(delta[0], delta[1], delta[2]),
        }
    }
}
