//! Analytic ground-truth scenes: SDF primitives, sphere-traced renders,
//! trajectories, corrupted depth priors, and synthetic correspondences.
//! Everything here is deterministic given explicit seeds so downstream
//! modules can be tested against exact oracles.

mod correspondence;
mod depth_prior;
mod landmarks;
mod render;
mod trajectory;

pub use correspondence::{gen_correspondences, Correspondence};
pub use depth_prior::{corrupt_depth, DepthPriorSpec};
pub use landmarks::{covisibility, sample_surface_landmarks, visible_landmarks};
pub use render::{render_ground_truth, sphere_trace, RenderOptions};
pub use trajectory::{gen_trajectory, lawnmower_step, TrajectoryKind};

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene has no primitives")]
    Empty,
    #[error("primitive {0} has a non-positive extent")]
    NonPositiveExtent(usize),
    #[error("unknown trajectory kind `{0}`")]
    UnknownTrajectory(String),
    #[error("trajectory needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
}

/// A single solid with a flat albedo.
#[derive(Debug, Clone)]
pub enum Primitive {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// Axis-aligned box.
    Box {
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
    },
    /// Half-space `normal·x - offset <= 0`; the normal is normalized on
    /// construction so the SDF stays 1-Lipschitz.
    Plane {
        normal: Vector3<f64>,
        offset: f64,
    },
}

impl Primitive {
    pub fn sdf(&self, x: &Vector3<f64>) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => (x - center).norm() - radius,
            Primitive::Box {
                center,
                half_extents,
            } => {
                let q = (x - center).abs() - half_extents;
                let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            Primitive::Plane { normal, offset } => normal.dot(x) - offset,
        }
    }
}

/// Union-of-primitives scene; the scene SDF is the pointwise minimum.
#[derive(Debug, Clone)]
pub struct ScenePrimitive {
    pub shape: Primitive,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, Default)]
pub struct AnalyticScene {
    pub primitives: Vec<ScenePrimitive>,
}

impl AnalyticScene {
    pub fn new(primitives: Vec<ScenePrimitive>) -> Self {
        AnalyticScene { primitives }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.primitives.is_empty() {
            return Err(SceneError::Empty);
        }
        for (i, p) in self.primitives.iter().enumerate() {
            let ok = match &p.shape {
                Primitive::Sphere { radius, .. } => *radius > 0.0,
                Primitive::Box { half_extents, .. } => half_extents.min() > 0.0,
                Primitive::Plane { normal, .. } => normal.norm() > 0.0,
            };
            if !ok {
                return Err(SceneError::NonPositiveExtent(i));
            }
        }
        Ok(())
    }

    /// Normalizes plane normals so every primitive SDF is 1-Lipschitz.
    pub fn normalized(mut self) -> Self {
        for p in &mut self.primitives {
            if let Primitive::Plane { normal, .. } = &mut p.shape {
                *normal = normal.normalize();
            }
        }
        self
    }

    /// Centroid of primitive centers (planes ignored); origin for an empty scene.
    pub fn centroid(&self) -> Vector3<f64> {
        let mut sum = Vector3::zeros();
        let mut n = 0usize;
        for p in &self.primitives {
            match &p.shape {
                Primitive::Sphere { center, .. } | Primitive::Box { center, .. } => {
                    sum += center;
                    n += 1;
                }
                Primitive::Plane { .. } => {}
            }
        }
        if n == 0 {
            Vector3::zeros()
        } else {
            sum / n as f64
        }
    }
}

/// Signed distance of the scene union at `x`: minimum over primitive SDFs,
/// negative inside. An empty scene is everywhere empty space (+inf).
pub fn scene_sdf(scene: &AnalyticScene, x: &Vector3<f64>) -> f64 {
    scene
        .primitives
        .iter()
        .map(|p| p.shape.sdf(x))
        .fold(f64::INFINITY, f64::min)
}

/// Index of the primitive attaining the union minimum at `x`.
pub fn nearest_primitive(scene: &AnalyticScene, x: &Vector3<f64>) -> Option<usize> {
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for (i, p) in scene.primitives.iter().enumerate() {
        let d = p.shape.sdf(x);
        if d < best_d {
            best_d = d;
            best = Some(i);
        }
    }
    best
}

/// SDF gradient by central differences; used for shading normals and for
/// projecting points onto the surface.
pub fn sdf_gradient(scene: &AnalyticScene, x: &Vector3<f64>) -> Vector3<f64> {
    let h = 1e-5;
    let mut g = Vector3::zeros();
    for k in 0..3 {
        let mut hi = *x;
        let mut lo = *x;
        hi[k] += h;
        lo[k] -= h;
        g[k] = (scene_sdf(scene, &hi) - scene_sdf(scene, &lo)) / (2.0 * h);
    }
    g
}
