//! The scene representation: dense SDF and color-feature voxel grids over the
//! contracted domain [-2,2]³ plus a small two-layer appearance decoder.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cone_encoding::{integrated_encoding, GaussianRegion};

/// Extent of the contracted domain covered by the grids.
pub const DOMAIN_HALF: f64 = 2.0;

/// SDF grid initialization.
#[derive(Debug, Clone, Copy)]
pub enum SdfInit {
    /// `|x| - radius` in contracted coordinates: unit gradient everywhere and
    /// a closed starting surface.
    Sphere(f64),
    Constant(f64),
}

/// Corner indices and weights for one trilinear lookup.
#[derive(Debug, Clone, Copy)]
pub struct TriLerp {
    pub corners: [usize; 8],
    pub weights: [f64; 8],
}

/// Two affine layers with tanh hidden units and a sigmoid output squashing
/// RGB into (0,1).
#[derive(Debug, Clone)]
pub struct Decoder {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Row-major [hidden][input].
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major [3][hidden].
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Decoder {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let lim1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let lim2 = (6.0 / (hidden_dim + 3) as f64).sqrt();
        Decoder {
            input_dim,
            hidden_dim,
            w1: (0..hidden_dim * input_dim)
                .map(|_| rng.gen_range(-lim1..lim1))
                .collect(),
            b1: vec![0.0; hidden_dim],
            w2: (0..3 * hidden_dim).map(|_| rng.gen_range(-lim2..lim2)).collect(),
            b2: vec![0.0; 3],
        }
    }

    /// Forward pass; `hidden_out` receives the tanh activations (length
    /// `hidden_dim`) for reuse in the backward pass.
    pub fn forward(&self, input: &[f64], hidden_out: &mut [f64]) -> [f64; 3] {
        debug_assert_eq!(input.len(), self.input_dim);
        for h in 0..self.hidden_dim {
            let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
            let mut acc = self.b1[h];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            hidden_out[h] = acc.tanh();
        }
        let mut out = [0.0; 3];
        for c in 0..3 {
            let row = &self.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
            let mut acc = self.b2[c];
            for (w, h) in row.iter().zip(hidden_out.iter()) {
                acc += w * h;
            }
            out[c] = sigmoid(acc);
        }
        out
    }

    /// Backpropagates `d_out` (gradient w.r.t. the sigmoid outputs `color`),
    /// accumulating parameter gradients and the gradient w.r.t. the input.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        input: &[f64],
        hidden: &[f64],
        color: &[f64; 3],
        d_out: &[f64; 3],
        g_w1: &mut [f64],
        g_b1: &mut [f64],
        g_w2: &mut [f64],
        g_b2: &mut [f64],
        d_input: &mut [f64],
    ) {
        let mut d_hidden = vec![0.0; self.hidden_dim];
        for c in 0..3 {
            // Sigmoid backward.
            let d_pre = d_out[c] * color[c] * (1.0 - color[c]);
            g_b2[c] += d_pre;
            let row = &self.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
            for h in 0..self.hidden_dim {
                g_w2[c * self.hidden_dim + h] += d_pre * hidden[h];
                d_hidden[h] += d_pre * row[h];
            }
        }
        for h in 0..self.hidden_dim {
            // Tanh backward.
            let d_pre = d_hidden[h] * (1.0 - hidden[h] * hidden[h]);
            g_b1[h] += d_pre;
            let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
            for i in 0..self.input_dim {
                g_w1[h * self.input_dim + i] += d_pre * input[i];
                d_input[i] += d_pre * row[i];
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dense voxel grids plus the appearance decoder.
#[derive(Debug, Clone)]
pub struct FieldParams {
    /// Nodes per axis.
    pub resolution: usize,
    /// Color feature channels per node.
    pub feature_dim: usize,
    /// Frequency bands of the integrated encoding fed to the decoder.
    pub n_bands: usize,
    /// Logistic scale converting SDF to occupancy, in contracted units.
    pub beta: f64,
    pub sdf: Vec<f64>,
    pub color: Vec<f64>,
    pub decoder: Decoder,
}

impl FieldParams {
    pub fn new(
        resolution: usize,
        feature_dim: usize,
        n_bands: usize,
        hidden_dim: usize,
        sdf_init: SdfInit,
        seed: u64,
    ) -> Self {
        assert!(resolution >= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = resolution * resolution * resolution;
        let decoder = Decoder::new(feature_dim + 6 * n_bands, hidden_dim, &mut rng);
        let color = (0..n * feature_dim).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let mut params = FieldParams {
            resolution,
            feature_dim,
            n_bands,
            beta: 0.1,
            sdf: vec![0.0; n],
            color,
            decoder,
        };
        let r = resolution;
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    let p = params.node_position(i, j, k);
                    params.sdf[(i * r + j) * r + k] = match sdf_init {
                        SdfInit::Sphere(radius) => p.norm() - radius,
                        SdfInit::Constant(v) => v,
                    };
                }
            }
        }
        params
    }

    #[inline]
    pub fn voxel_size(&self) -> f64 {
        2.0 * DOMAIN_HALF / (self.resolution - 1) as f64
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let h = self.voxel_size();
        Vector3::new(
            -DOMAIN_HALF + h * i as f64,
            -DOMAIN_HALF + h * j as f64,
            -DOMAIN_HALF + h * k as f64,
        )
    }

    /// Corner indices and weights for trilinear interpolation at `p`, clamped
    /// into the domain.
    pub fn trilerp(&self, p: &Vector3<f64>) -> TriLerp {
        let r = self.resolution;
        let h = self.voxel_size();
        let mut idx = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let x = ((p[a] + DOMAIN_HALF) / h).clamp(0.0, (r - 1) as f64);
            let cell = (x.floor() as usize).min(r - 2);
            idx[a] = cell;
            frac[a] = x - cell as f64;
        }
        let (i, j, k) = (idx[0], idx[1], idx[2]);
        let base = |di: usize, dj: usize, dk: usize| ((i + di) * r + (j + dj)) * r + (k + dk);
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        TriLerp {
            corners: [
                base(0, 0, 0),
                base(0, 0, 1),
                base(0, 1, 0),
                base(0, 1, 1),
                base(1, 0, 0),
                base(1, 0, 1),
                base(1, 1, 0),
                base(1, 1, 1),
            ],
            weights: [
                gx * gy * gz,
                gx * gy * fz,
                gx * fy * gz,
                gx * fy * fz,
                fx * gy * gz,
                fx * gy * fz,
                fx * fy * gz,
                fx * fy * fz,
            ],
        }
    }

    #[inline]
    pub fn sdf_value(&self, tl: &TriLerp) -> f64 {
        let mut acc = 0.0;
        for c in 0..8 {
            acc += self.weights_at(tl, c) * self.sdf[tl.corners[c]];
        }
        acc
    }

    #[inline]
    fn weights_at(&self, tl: &TriLerp, c: usize) -> f64 {
        tl.weights[c]
    }

    pub fn sdf_at(&self, p: &Vector3<f64>) -> f64 {
        self.sdf_value(&self.trilerp(p))
    }

    /// Writes the interpolated color feature into `out` (length `feature_dim`).
    pub fn color_feature(&self, tl: &TriLerp, out: &mut [f64]) {
        out.fill(0.0);
        for c in 0..8 {
            let w = tl.weights[c];
            let base = tl.corners[c] * self.feature_dim;
            for (o, v) in out.iter_mut().zip(&self.color[base..base + self.feature_dim]) {
                *o += w * v;
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.resolution * self.resolution * self.resolution
    }
}

/// Queries the field at a contracted-space Gaussian: interpolated SDF and the
/// decoded RGB from the trilinear color feature plus the integrated encoding.
pub fn query_field(params: &FieldParams, region: &GaussianRegion) -> (f64, [f64; 3]) {
    assert!(
        region.mean.norm() < DOMAIN_HALF,
        "query outside contracted domain"
    );
    let tl = params.trilerp(&region.mean);
    let sdf = params.sdf_value(&tl);
    let mut input = vec![0.0; params.decoder.input_dim];
    params.color_feature(&tl, &mut input[..params.feature_dim]);
    let enc = integrated_encoding(region, params.n_bands);
    input[params.feature_dim..].copy_from_slice(&enc);
    let mut hidden = vec![0.0; params.decoder.hidden_dim];
    let color = params.decoder.forward(&input, &mut hidden);
    (sdf, color)
}
