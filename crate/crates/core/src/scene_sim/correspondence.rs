//! Noisy ground-truth pixel correspondences between two frames, standing in
//! for a learned optical-flow front end.

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{CameraIntrinsics, Pose};
use crate::image::DepthMap;

/// A pixel in frame i, its reprojection into frame j, and a confidence
/// weight in (0, 1].
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub pixel_i: Vector2<f64>,
    pub pixel_j: Vector2<f64>,
    pub weight: f64,
}

/// Unprojects every `stride`-th pixel of frame i by its depth (Euclidean ray
/// length), reprojects into frame j, and adds isotropic Gaussian pixel noise.
/// Points whose noiseless reprojection lands outside image j (or behind its
/// camera) are dropped. Confidence is `exp(-|noise|²/2σ²)`.
pub fn gen_correspondences(
    pose_i: &Pose,
    pose_j: &Pose,
    depth_i: &DepthMap,
    intrinsics: &CameraIntrinsics,
    pixel_noise_sigma: f64,
    seed: u64,
    stride: usize,
) -> Vec<Correspondence> {
    assert!(stride >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let i_to_j = pose_i.relative_to(pose_j);

    let mut out = Vec::new();
    let mut y = stride / 2;
    while y < depth_i.height {
        let mut x = stride / 2;
        while x < depth_i.width {
            let d = depth_i.get(x, y) as f64;
            if d.is_finite() && d > 0.0 {
                let pixel_i = Vector2::new(x as f64, y as f64);
                let p_cam_i = intrinsics.pixel_ray(pixel_i.x, pixel_i.y) * d;
                let p_cam_j = i_to_j.transform_point(&p_cam_i);
                if let Some(reproj) = intrinsics.project(&p_cam_j) {
                    if intrinsics.contains(&reproj) {
                        let noise = Vector2::new(
                            pixel_noise_sigma * normal.sample(&mut rng),
                            pixel_noise_sigma * normal.sample(&mut rng),
                        );
                        let weight = if pixel_noise_sigma > 0.0 {
                            (-noise.norm_squared() / (2.0 * pixel_noise_sigma.powi(2))).exp()
                        } else {
                            1.0
                        };
                        out.push(Correspondence {
                            pixel_i,
                            pixel_j: reproj + noise,
                            weight,
                        });
                    }
                }
            }
            x += stride;
        }
        y += stride;
    }
    out
}
