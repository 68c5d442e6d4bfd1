//! Depth-supervised camera tracking: a factor graph of keyframe poses and
//! sparse inverse depths, confidence-weighted reprojection residuals, a
//! robust depth penalty, and damped Gauss-Newton steps solved by Schur
//! elimination of the point block.

mod iterate;
mod normal_eqs;
mod residuals;
mod schur;
mod select;

pub use iterate::{gauss_newton_iterate, total_cost, TrackOutcome, TrackerConfig};
pub use normal_eqs::build_normal_equations;
pub use residuals::{reprojection_residuals, robust_depth_penalty, ResidualData};
pub use schur::schur_solve;
pub use select::{select_keyframe, KeyframeSelectConfig};

use nalgebra::{DMatrix, DVector, Vector2};
use thiserror::Error;

use crate::geometry::Pose;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("reduced camera system is singular (condition estimate {cond:.3e})")]
    SingularSystem { cond: f64 },
}

/// One tracked pixel of a host frame: fixed pixel location, optimized inverse
/// depth (reciprocal of the Euclidean ray length), and its prior depth from
/// the depth-prior provider (meters, ray length).
#[derive(Debug, Clone, Copy)]
pub struct TrackedPoint {
    pub pixel: Vector2<f64>,
    pub inv_depth: f64,
    pub prior_depth: f64,
}

/// A correspondence of one tracked point into the edge's target frame.
#[derive(Debug, Clone, Copy)]
pub struct Observation {
    /// Index into the host frame's point list.
    pub point: usize,
    /// Observed pixel in the target frame.
    pub target: Vector2<f64>,
    /// Confidence weight in (0, 1].
    pub weight: f64,
}

/// Directed edge: points hosted in `from` observed in `to`.
#[derive(Debug, Clone)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub observations: Vec<Observation>,
}

/// The tracking state: per-frame pose estimates and hosted points, plus the
/// correspondence edges.
#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    pub frames: Vec<FrameState>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone)]
pub struct FrameState {
    pub pose: Pose,
    pub points: Vec<TrackedPoint>,
}

impl FactorGraph {
    /// Global point-variable offsets per frame.
    pub fn point_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.frames.len());
        let mut acc = 0;
        for f in &self.frames {
            offsets.push(acc);
            acc += f.points.len();
        }
        offsets
    }

    pub fn n_points(&self) -> usize {
        self.frames.iter().map(|f| f.points.len()).sum()
    }
}

/// Robust depth-penalty configuration: quadratic inside `tau_tra`, linear
/// outside, scaled by `weight` against the reprojection cost.
#[derive(Debug, Clone, Copy)]
pub struct RobustDepthConfig {
    pub tau_tra: f64,
    pub weight: f64,
}

impl Default for RobustDepthConfig {
    fn default() -> Self {
        RobustDepthConfig {
            tau_tra: 0.2,
            weight: 1.0,
        }
    }
}

/// Assembled Gauss-Newton normal equations with the camera/point structure
/// kept explicit: block camera matrix C, coupling E, diagonal point block P,
/// and the right-hand sides v (cameras) and w (points).
#[derive(Debug, Clone)]
pub struct HessianSystem {
    pub c: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub p_diag: DVector<f64>,
    pub v: DVector<f64>,
    pub w: DVector<f64>,
    pub n_frames: usize,
    pub n_points: usize,
    /// Leading frames whose increments are forced to zero (gauge fixing).
    pub fixed_frames: usize,
}
