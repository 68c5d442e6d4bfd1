//! Corrupted depth priors: an affine scale/offset plus Gaussian noise,
//! modeling the scale ambiguity of monocular depth estimates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::DepthMap;

/// Affine corruption model `d' = a·d + b + N(0, σ²)`.
#[derive(Debug, Clone, Copy)]
pub struct DepthPriorSpec {
    pub scale: f64,
    pub offset: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DepthPriorSpec {
    pub fn oracle() -> Self {
        DepthPriorSpec {
            scale: 1.0,
            offset: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> bool {
        self.scale > 0.0 && self.noise_sigma >= 0.0
    }
}

/// Applies the corruption model pixel by pixel in row-major order. Outputs are
/// clamped positive; sentinel (+inf) pixels pass through untouched. The noise
/// stream depends only on the seed, so results are deterministic.
pub fn corrupt_depth(depth: &DepthMap, spec: &DepthPriorSpec) -> DepthMap {
    assert!(spec.validate(), "invalid depth prior spec");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut out = DepthMap::new(depth.width, depth.height);
    for (i, &d) in depth.data.iter().enumerate() {
        // One draw per pixel keeps the stream aligned regardless of scene content.
        let z: f64 = normal.sample(&mut rng);
        if d.is_finite() {
            let corrupted = spec.scale * d as f64 + spec.offset + spec.noise_sigma * z;
            out.data[i] = corrupted.max(1e-6) as f32;
        }
    }
    out
}
