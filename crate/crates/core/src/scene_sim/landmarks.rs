//! Surface landmarks and covisibility oracles for loop-closure tests.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{scene_sdf, sdf_gradient, AnalyticScene, RenderOptions};
use crate::geometry::{CameraIntrinsics, Pose};

/// Samples `n` points near the scene surface by projecting random points in
/// the bounding region onto the SDF zero level with Newton steps.
pub fn sample_surface_landmarks(
    scene: &AnalyticScene,
    n: usize,
    bound: f64,
    seed: u64,
) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut x = Vector3::new(
            rng.gen_range(-bound..bound),
            rng.gen_range(-bound..bound),
            rng.gen_range(-bound..bound),
        );
        let mut ok = false;
        for _ in 0..20 {
            let d = scene_sdf(scene, &x);
            if d.abs() < 1e-6 {
                ok = true;
                break;
            }
            let g = sdf_gradient(scene, &x);
            let gn = g.norm_squared();
            if gn < 1e-12 {
                break;
            }
            x -= g * (d / gn);
        }
        if ok && x.norm() < 2.0 * bound {
            out.push(x);
        }
    }
    out
}

/// Indices of landmarks visible from `pose`: inside the image, in front of the
/// camera, and not occluded (checked by sphere tracing toward the landmark).
pub fn visible_landmarks(
    scene: &AnalyticScene,
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    landmarks: &[Vector3<f64>],
) -> Vec<usize> {
    let opts = RenderOptions::default();
    let cam_from_world = pose.inverse();
    let mut out = Vec::new();
    for (idx, lm) in landmarks.iter().enumerate() {
        let p_cam = cam_from_world.transform_point(lm);
        let Some(px) = intrinsics.project(&p_cam) else {
            continue;
        };
        if !intrinsics.contains(&px) {
            continue;
        }
        let range = p_cam.norm();
        let dir = (lm - pose.translation) / range;
        // Occlusion: the first surface along the ray must be the landmark itself.
        if let Some(t) = super::render::sphere_trace(scene, &pose.translation, &dir, &opts) {
            if (t - range).abs() < 5e-3 {
                out.push(idx);
            }
        }
    }
    out
}

/// Fraction of co-observed landmarks: |a ∩ b| / min(|a|, |b|); 0 when either
/// set is empty. Inputs must be sorted index lists.
pub fn covisibility(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut i = 0;
    let mut j = 0;
    let mut common = 0usize;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    common as f64 / a.len().min(b.len()) as f64
}
