//! Smooth synthetic camera trajectories that look at the scene centroid.

use nalgebra::Vector3;

use super::SceneError;
use crate::geometry::{look_at, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Circle of the given radius around the centroid, open (90° spacing for
    /// n = 4).
    Orbit,
    /// Serpentine sweep over a plane facing the centroid.
    Lawnmower,
    /// Closed orbit: the last pose coincides with the first.
    Loop,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = SceneError;
    fn from_str(s: &str) -> Result<Self, SceneError> {
        match s {
            "orbit" => Ok(TrajectoryKind::Orbit),
            "lawnmower" => Ok(TrajectoryKind::Lawnmower),
            "loop" => Ok(TrajectoryKind::Loop),
            other => Err(SceneError::UnknownTrajectory(other.to_string())),
        }
    }
}

/// Spacing between consecutive lawnmower positions for `n_frames` cameras
/// sweeping a square of half-extent `0.5 * radius`.
pub fn lawnmower_step(n_frames: usize, radius: f64) -> f64 {
    let cols = (n_frames as f64).sqrt().ceil() as usize;
    if cols <= 1 {
        0.0
    } else {
        radius / (cols - 1) as f64
    }
}

/// Generates `n_frames` camera-to-world poses at distance `radius` from
/// `centroid`, all looking at it.
pub fn gen_trajectory(
    kind: TrajectoryKind,
    n_frames: usize,
    centroid: Vector3<f64>,
    radius: f64,
) -> Result<Vec<Pose>, SceneError> {
    if n_frames < 2 {
        return Err(SceneError::TooFewFrames(n_frames));
    }
    let poses = match kind {
        TrajectoryKind::Orbit => (0..n_frames)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / n_frames as f64;
                let eye = centroid + radius * Vector3::new(theta.cos(), theta.sin(), 0.0);
                look_at(eye, centroid)
            })
            .collect(),
        TrajectoryKind::Loop => (0..n_frames)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / (n_frames - 1) as f64;
                let eye = centroid + radius * Vector3::new(theta.cos(), theta.sin(), 0.0);
                look_at(eye, centroid)
            })
            .collect(),
        TrajectoryKind::Lawnmower => {
            let cols = (n_frames as f64).sqrt().ceil() as usize;
            let half = 0.5 * radius;
            let step = lawnmower_step(n_frames, radius);
            (0..n_frames)
                .map(|k| {
                    let row = k / cols;
                    let col = k % cols;
                    // Serpentine: odd rows run backwards.
                    let col = if row % 2 == 0 { col } else { cols - 1 - col };
                    let x = -half + step * col as f64;
                    let z = -half + step * row as f64;
                    let eye = centroid + Vector3::new(x, -radius, z);
                    look_at(eye, centroid)
                })
                .collect()
        }
    };
    Ok(poses)
}
