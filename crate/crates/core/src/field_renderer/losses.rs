//! The mapping loss suite: photometric L1, depth spatial correspondence and
//! continuity distillation, distortion, Eikonal, SDF supervision, and the
//! weighted total. Each loss has a plain form and a `_grad` form returning
//! analytic adjoints for the optimizer and the finite-difference audits.

use nalgebra::Vector3;
use thiserror::Error;

use super::params::FieldParams;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty pixel batch")]
    EmptyBatch,
    #[error("mismatched batch lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Loss weights and thresholds. Scalar weights follow the reported defaults;
/// `lambda_con` and the margins are exposed since no values are reported.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_dep: f64,
    pub lambda_dist: f64,
    pub lambda_eik: f64,
    pub lambda_sdf: f64,
    pub lambda_con: f64,
    /// Correspondence margin, meters.
    pub tau: f64,
    /// Continuity margin, meters.
    pub tau_prime: f64,
    /// Near-surface truncation band, meters.
    pub zeta: f64,
    /// Free-space exponential sharpness.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_c: 1.0,
            lambda_dep: 1.0,
            lambda_dist: 0.002,
            lambda_eik: 0.15,
            lambda_sdf: 1.0,
            lambda_con: 1.0,
            tau: 0.05,
            tau_prime: 0.05,
            zeta: 0.1,
            alpha: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> bool {
        self.lambda_c >= 0.0
            && self.lambda_dep >= 0.0
            && self.lambda_dist >= 0.0
            && self.lambda_eik >= 0.0
            && self.lambda_sdf >= 0.0
            && self.lambda_con >= 0.0
            && self.tau >= 0.0
            && self.tau_prime >= 0.0
            && self.zeta >= 0.0
            && self.alpha >= 0.0
    }
}

/// Hinge orientation of the continuity loss. The printed form adds the margin
/// inside the max and therefore can never reach zero; the hinge form subtracts
/// it. Kept switchable for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContinuityForm {
    #[default]
    Hinge,
    AsPrinted,
}

/// Mean over pixels of the channel-summed absolute color error.
pub fn loss_rgb(pred: &[[f64; 3]], target: &[[f64; 3]]) -> Result<f64, LossError> {
    Ok(loss_rgb_grad(pred, target)?.0)
}

pub fn loss_rgb_grad(
    pred: &[[f64; 3]],
    target: &[[f64; 3]],
) -> Result<(f64, Vec<[f64; 3]>), LossError> {
    if pred.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if pred.len() != target.len() {
        return Err(LossError::LengthMismatch(pred.len(), target.len()));
    }
    let m = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![[0.0; 3]; pred.len()];
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        for c in 0..3 {
            let d = p[c] - t[c];
            total += d.abs();
            grad[i][c] = d.signum() / m;
        }
    }
    Ok((total / m, grad))
}

/// Depth spatial correspondence: over ordered pairs (m, n) whose prior depths
/// satisfy `D_m <= D_n`, the mean hinge `max(D̂_m − D̂_n + tau, 0)`. Returns 0
/// when no pair qualifies.
pub fn loss_depth_correspondence(
    prior: &[f64],
    rendered: &[f64],
    pairs: &[(usize, usize)],
    tau: f64,
) -> f64 {
    loss_depth_correspondence_grad(prior, rendered, pairs, tau).0
}

pub fn loss_depth_correspondence_grad(
    prior: &[f64],
    rendered: &[f64],
    pairs: &[(usize, usize)],
    tau: f64,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; rendered.len()];
    let mut total = 0.0;
    let mut count = 0usize;
    for &(m, n) in pairs {
        if prior[m] <= prior[n] {
            count += 1;
            let v = rendered[m] - rendered[n] + tau;
            if v > 0.0 {
                total += v;
                grad[m] += 1.0;
                grad[n] -= 1.0;
            }
        }
    }
    if count == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / count as f64;
    for g in &mut grad {
        *g *= inv;
    }
    (total * inv, grad)
}

/// A 3x3 pixel neighborhood as indices into the flat rendered/prior arrays.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub center: usize,
    pub neighbors: Vec<usize>,
}

/// Depth spatial continuity: for centers whose prior depth agrees with at
/// least 4 neighbors within `tau_prime`, penalize rendered-depth jumps to
/// those agreeing neighbors. Mean over the qualifying neighbor count.
pub fn loss_depth_continuity(
    prior: &[f64],
    rendered: &[f64],
    neighborhoods: &[Neighborhood],
    tau_prime: f64,
    form: ContinuityForm,
) -> f64 {
    loss_depth_continuity_grad(prior, rendered, neighborhoods, tau_prime, form).0
}

pub fn loss_depth_continuity_grad(
    prior: &[f64],
    rendered: &[f64],
    neighborhoods: &[Neighborhood],
    tau_prime: f64,
    form: ContinuityForm,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; rendered.len()];
    let mut total = 0.0;
    let mut count = 0usize;
    for nb in neighborhoods {
        let agreeing: Vec<usize> = nb
            .neighbors
            .iter()
            .copied()
            .filter(|&n| (prior[nb.center] - prior[n]).abs() < tau_prime)
            .collect();
        if agreeing.len() < 4 {
            continue;
        }
        for n in agreeing {
            count += 1;
            let diff = rendered[nb.center] - rendered[n];
            let v = match form {
                ContinuityForm::Hinge => diff.abs() - tau_prime,
                ContinuityForm::AsPrinted => diff.abs() + tau_prime,
            };
            if v > 0.0 {
                total += v;
                let s = diff.signum();
                grad[nb.center] += s;
                grad[n] -= s;
            }
        }
    }
    if count == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / count as f64;
    for g in &mut grad {
        *g *= inv;
    }
    (total * inv, grad)
}

/// Distortion loss in normalized s-space: the weighted pairwise distance of
/// interval midpoints plus one third of the weighted interval sizes.
pub fn loss_distortion(weights: &[f64], s_mids: &[f64], s_widths: &[f64]) -> f64 {
    loss_distortion_grad(weights, s_mids, s_widths).0
}

pub fn loss_distortion_grad(
    weights: &[f64],
    s_mids: &[f64],
    s_widths: &[f64],
) -> (f64, Vec<f64>) {
    let n = weights.len();
    assert_eq!(s_mids.len(), n);
    assert_eq!(s_widths.len(), n);
    let mut total = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let d = (s_mids[i] - s_mids[j]).abs();
            total += weights[i] * weights[j] * d;
            grad[i] += 2.0 * weights[j] * d;
        }
        total += weights[i] * weights[i] * s_widths[i] / 3.0;
        grad[i] += 2.0 * weights[i] * s_widths[i] / 3.0;
    }
    (total, grad)
}

/// Eikonal regularizer: mean over probes of `(1 − |∇φ|)²`, with the gradient
/// taken by central differences of the interpolated grid one voxel out.
pub fn loss_eikonal(params: &FieldParams, probes: &[Vector3<f64>]) -> f64 {
    let mut grad = vec![0.0; params.n_nodes()];
    loss_eikonal_grad(params, probes, 1.0, &mut grad)
}

/// Accumulates `scale * d(loss)/d(sdf_node)` into `grad_sdf` and returns the
/// loss value.
pub fn loss_eikonal_grad(
    params: &FieldParams,
    probes: &[Vector3<f64>],
    scale: f64,
    grad_sdf: &mut [f64],
) -> f64 {
    if probes.is_empty() {
        return 0.0;
    }
    let h = params.voxel_size();
    let lim = super::params::DOMAIN_HALF - h;
    let m = probes.len() as f64;
    let mut total = 0.0;
    for probe in probes {
        let p = Vector3::new(
            probe.x.clamp(-lim, lim),
            probe.y.clamp(-lim, lim),
            probe.z.clamp(-lim, lim),
        );
        let mut g = Vector3::zeros();
        let mut lerps = Vec::with_capacity(6);
        for a in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[a] += h;
            lo[a] -= h;
            let tl_hi = params.trilerp(&hi);
            let tl_lo = params.trilerp(&lo);
            g[a] = (params.sdf_value(&tl_hi) - params.sdf_value(&tl_lo)) / (2.0 * h);
            lerps.push((tl_hi, tl_lo));
        }
        let norm = g.norm();
        total += (1.0 - norm).powi(2);
        if norm > 1e-12 {
            // d/dg of (1−|g|)² = −2(1−|g|) g/|g|.
            let dg = -2.0 * (1.0 - norm) / norm * g / m * scale;
            for a in 0..3 {
                let (tl_hi, tl_lo) = &lerps[a];
                let coeff = dg[a] / (2.0 * h);
                for c in 0..8 {
                    grad_sdf[tl_hi.corners[c]] += coeff * tl_hi.weights[c];
                    grad_sdf[tl_lo.corners[c]] -= coeff * tl_lo.weights[c];
                }
            }
        }
    }
    total / m
}

/// SDF supervision from the along-ray bound `b = D_prior − d_i`. Near-surface
/// samples (|b| <= zeta) take `|φ − b|`; free-space samples in front of the
/// surface (b > zeta) take `max(0, e^{−αφ}, φ − b)`; samples behind the
/// observed surface contribute nothing. Normalized by `denom`, the pixel
/// count times samples per ray.
pub fn loss_sdf(phi: &[f64], bound: &[f64], zeta: f64, alpha: f64, denom: usize) -> f64 {
    loss_sdf_grad(phi, bound, zeta, alpha, denom).0
}

pub fn loss_sdf_grad(
    phi: &[f64],
    bound: &[f64],
    zeta: f64,
    alpha: f64,
    denom: usize,
) -> (f64, Vec<f64>) {
    assert_eq!(phi.len(), bound.len());
    assert!(zeta > 0.0 && alpha > 0.0 && denom > 0);
    let inv = 1.0 / denom as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; phi.len()];
    for i in 0..phi.len() {
        let b = bound[i];
        let p = phi[i];
        if b.abs() <= zeta {
            total += (p - b).abs();
            grad[i] = (p - b).signum() * inv;
        } else if b > zeta {
            let e = (-alpha * p).exp();
            let lin = p - b;
            let v = e.max(lin).max(0.0);
            total += v;
            if v > 0.0 {
                grad[i] = if v == e { -alpha * e * inv } else { inv };
            }
        }
    }
    (total * inv, grad)
}

/// Component losses prior to weighting.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub rgb: f64,
    pub correspondence: f64,
    pub continuity: f64,
    pub distortion: f64,
    pub eikonal: f64,
    pub sdf: f64,
}

/// `λ_c·L_rgb + λ_dep·(L_cor + λ_con·L_con) + λ_dist·L_dist + λ_eik·L_eik + λ_sdf·L_sdf`.
pub fn total_loss(terms: &LossTerms, w: &LossWeights) -> f64 {
    w.lambda_c * terms.rgb
        + w.lambda_dep * (terms.correspondence + w.lambda_con * terms.continuity)
        + w.lambda_dist * terms.distortion
        + w.lambda_eik * terms.eikonal
        + w.lambda_sdf * terms.sdf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_renderer::params::SdfInit;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rgb_loss_cases() {
        let a = vec![[1.0, 1.0, 1.0]];
        let b = vec![[0.0, 0.0, 0.0]];
        assert_relative_eq!(loss_rgb(&a, &a).unwrap(), 0.0);
        assert_relative_eq!(loss_rgb(&a, &b).unwrap(), 3.0);
        assert!(loss_rgb(&[], &[]).is_err());

        // Naive double-loop oracle on a random batch.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred: Vec<[f64; 3]> = (0..50)
            .map(|_| [rng.gen(), rng.gen(), rng.gen()])
            .collect();
        let target: Vec<[f64; 3]> = (0..50)
            .map(|_| [rng.gen(), rng.gen(), rng.gen()])
            .collect();
        let mut oracle = 0.0;
        for i in 0..pred.len() {
            for c in 0..3 {
                oracle += (pred[i][c] - target[i][c]).abs();
            }
        }
        oracle /= pred.len() as f64;
        assert_relative_eq!(loss_rgb(&pred, &target).unwrap(), oracle, epsilon = 1e-12);
    }

    fn all_ordered_pairs(n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for m in 0..n {
            for k in 0..n {
                if m != k {
                    out.push((m, k));
                }
            }
        }
        out
    }

    #[test]
    fn correspondence_loss_cases() {
        let prior = [1.0, 2.0];
        let pairs = all_ordered_pairs(2);
        // Order preserved with margin: single qualifying pair contributes 0.
        assert_relative_eq!(
            loss_depth_correspondence(&prior, &[1.0, 2.0], &pairs, 0.1),
            0.0
        );
        // Inverted rendering: max(2-1+0.1, 0) = 1.1 on the qualifying pair.
        assert_relative_eq!(
            loss_depth_correspondence(&prior, &[2.0, 1.0], &pairs, 0.1),
            1.1,
            epsilon = 1e-12
        );
    }

    #[test]
    fn correspondence_constant_prior_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 12;
        let prior = vec![3.0; n];
        let rendered: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..4.0)).collect();
        let pairs = all_ordered_pairs(n);
        let tau = 0.1;
        // Constant prior: every ordered pair qualifies.
        let mut oracle = 0.0;
        for &(m, k) in &pairs {
            oracle += (rendered[m] - rendered[k] + tau).max(0.0);
        }
        oracle /= pairs.len() as f64;
        assert_relative_eq!(
            loss_depth_correspondence(&prior, &rendered, &pairs, tau),
            oracle,
            epsilon = 1e-12
        );
    }

    #[test]
    fn continuity_loss_cases() {
        // Constant depth, perfect rendering: zero.
        let prior = vec![2.0; 9];
        let rendered = vec![2.0; 9];
        let nb = Neighborhood {
            center: 4,
            neighbors: vec![0, 1, 2, 3, 5, 6, 7, 8],
        };
        assert_relative_eq!(
            loss_depth_continuity(&prior, &rendered, &[nb.clone()], 0.1, ContinuityForm::Hinge),
            0.0
        );

        // Uniform rendered jump of 0.5 against constant prior: 0.5 - 0.1 = 0.4.
        let mut rendered = vec![2.0; 9];
        rendered[4] = 2.5;
        assert_relative_eq!(
            loss_depth_continuity(&prior, &rendered, &[nb.clone()], 0.1, ContinuityForm::Hinge),
            0.4,
            epsilon = 1e-12
        );
        // The printed form cannot reach zero even on a perfect fit.
        let perfect = vec![2.0; 9];
        let printed =
            loss_depth_continuity(&prior, &perfect, &[nb.clone()], 0.1, ContinuityForm::AsPrinted);
        assert_relative_eq!(printed, 0.1, epsilon = 1e-12);

        // A sharp prior edge gates out edge-crossing neighbors.
        let mut edge_prior = vec![2.0; 9];
        for i in [2, 5, 8] {
            edge_prior[i] = 5.0;
        }
        let mut jumpy = vec![2.0; 9];
        for i in [2, 5, 8] {
            jumpy[i] = 9.0; // rendered jump across the edge: must not contribute
        }
        let v = loss_depth_continuity(&edge_prior, &jumpy, &[nb], 0.1, ContinuityForm::Hinge);
        assert_relative_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn distortion_loss_cases() {
        assert_relative_eq!(loss_distortion(&[0.0, 0.0], &[0.25, 0.75], &[0.5, 0.5]), 0.0);
        // Single full-width interval with unit weight.
        assert_relative_eq!(loss_distortion(&[1.0], &[0.5], &[1.0]), 1.0 / 3.0, epsilon = 1e-12);
        // Two half intervals with weight 0.5 each.
        let v = loss_distortion(&[0.5, 0.5], &[0.25, 0.75], &[0.5, 0.5]);
        assert_relative_eq!(v, 0.25 + 1.0 / 12.0, epsilon = 1e-12);

        // Brute-force double sum oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 9;
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.3)).collect();
        let mids: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let widths = vec![1.0 / n as f64; n];
        let mut oracle = 0.0;
        for i in 0..n {
            for j in 0..n {
                oracle += w[i] * w[j] * (mids[i] - mids[j]).abs();
            }
            oracle += w[i] * w[i] * widths[i] / 3.0;
        }
        assert_relative_eq!(loss_distortion(&w, &mids, &widths), oracle, epsilon = 1e-12);
    }

    #[test]
    fn eikonal_loss_cases() {
        // Unit-slope plane: zero.
        let mut f = FieldParams::new(16, 2, 1, 4, SdfInit::Constant(0.0), 7);
        let n_hat = Vector3::new(1.0, 2.0, -0.5).normalize();
        let r = f.resolution;
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    f.sdf[(i * r + j) * r + k] = f.node_position(i, j, k).dot(&n_hat);
                }
            }
        }
        let probes = vec![
            Vector3::new(0.2, -0.3, 0.4),
            Vector3::new(-1.0, 0.5, 0.9),
            Vector3::new(0.0, 0.0, 0.0),
        ];
        assert_relative_eq!(loss_eikonal(&f, &probes), 0.0, epsilon = 1e-10);

        // Constant grid: (1-0)² = 1.
        let f2 = FieldParams::new(16, 2, 1, 4, SdfInit::Constant(0.7), 7);
        assert_relative_eq!(loss_eikonal(&f2, &probes), 1.0, epsilon = 1e-12);

        // Slope-2 linear field: (1-2)² = 1 at interior probes.
        let mut f3 = FieldParams::new(16, 2, 1, 4, SdfInit::Constant(0.0), 7);
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    f3.sdf[(i * r + j) * r + k] = 2.0 * f3.node_position(i, j, k).x;
                }
            }
        }
        assert_relative_eq!(loss_eikonal(&f3, &probes), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn sdf_loss_cases() {
        // Near sample with φ = b contributes 0.
        assert_relative_eq!(loss_sdf(&[0.05], &[0.05], 0.1, 5.0, 1), 0.0);
        // Far sample, φ=2, b=1: max(0, e^{-10}, 1) = 1.
        assert_relative_eq!(loss_sdf(&[2.0], &[1.0], 0.1, 5.0, 1), 1.0, epsilon = 1e-12);
        // Far sample, φ=0.5, b=1: e^{-2.5}.
        assert_relative_eq!(
            loss_sdf(&[0.5], &[1.0], 0.1, 5.0, 1),
            (-2.5f64).exp(),
            epsilon = 1e-12
        );
        // Behind-surface samples (b < -zeta) contribute nothing.
        assert_relative_eq!(loss_sdf(&[3.0], &[-1.0], 0.1, 5.0, 1), 0.0);
    }

    #[test]
    fn total_loss_weighted_sum() {
        let w = LossWeights::default();
        assert!(w.validate());
        let zero = LossTerms::default();
        assert_relative_eq!(total_loss(&zero, &w), 0.0);
        let unit = LossTerms {
            rgb: 1.0,
            correspondence: 1.0,
            continuity: 1.0,
            distortion: 1.0,
            eikonal: 1.0,
            sdf: 1.0,
        };
        assert_relative_eq!(total_loss(&unit, &w), 4.152, epsilon = 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 16;
        let prior: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..3.0)).collect();
        let rendered: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..3.0)).collect();
        let pairs: Vec<(usize, usize)> = (0..40)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .filter(|(a, b)| a != b)
            .collect();

        let tau = 0.05;
        let (_, grad) = loss_depth_correspondence_grad(&prior, &rendered, &pairs, tau);
        let eps = 1e-6;
        for i in 0..n {
            let mut hi = rendered.clone();
            let mut lo = rendered.clone();
            hi[i] += eps;
            lo[i] -= eps;
            let fd = (loss_depth_correspondence(&prior, &hi, &pairs, tau)
                - loss_depth_correspondence(&prior, &lo, &pairs, tau))
                / (2.0 * eps);
            assert_relative_eq!(grad[i], fd, max_relative = 1e-5, epsilon = 1e-7);
        }

        // Distortion gradient.
        let w: Vec<f64> = (0..8).map(|_| rng.gen_range(0.01..0.3)).collect();
        let mids: Vec<f64> = (0..8).map(|i| (i as f64 + 0.5) / 8.0).collect();
        let widths = vec![0.125; 8];
        let (_, dgrad) = loss_distortion_grad(&w, &mids, &widths);
        for i in 0..8 {
            let mut hi = w.clone();
            let mut lo = w.clone();
            hi[i] += eps;
            lo[i] -= eps;
            let fd = (loss_distortion(&hi, &mids, &widths) - loss_distortion(&lo, &mids, &widths))
                / (2.0 * eps);
            assert_relative_eq!(dgrad[i], fd, max_relative = 1e-6, epsilon = 1e-9);
        }
    }
}
