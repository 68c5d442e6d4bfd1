//! Closed-form least-squares similarity alignment (centroid + variance-ratio
//! scale + SVD rotation) with a robust re-weighting wrapper.

use nalgebra::{Matrix3, Vector3};

use super::{LoopClosureError, Sim3};

#[derive(Debug, Clone)]
pub struct Sim3Estimate {
    pub sim3: Sim3,
    /// Root-mean-square alignment residual over the (weighted) pairs.
    pub residual_rms: f64,
}

/// Least-squares similarity minimizing `Σ ‖dst_k − (s·R·src_k + t)‖²`.
pub fn estimate_sim3(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<Sim3Estimate, LoopClosureError> {
    estimate_sim3_weighted(src, dst, None)
}

fn estimate_sim3_weighted(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: Option<&[f64]>,
) -> Result<Sim3Estimate, LoopClosureError> {
    assert_eq!(src.len(), dst.len());
    if src.len() < 3 {
        return Err(LoopClosureError::TooFewPairs(src.len()));
    }
    let w_of = |k: usize| weights.map_or(1.0, |w| w[k]);
    let w_sum: f64 = (0..src.len()).map(w_of).sum();
    if w_sum <= 1e-12 {
        return Err(LoopClosureError::Degenerate);
    }

    let mut mu_s = Vector3::zeros();
    let mut mu_d = Vector3::zeros();
    for k in 0..src.len() {
        mu_s += w_of(k) * src[k];
        mu_d += w_of(k) * dst[k];
    }
    mu_s /= w_sum;
    mu_d /= w_sum;

    let mut var_s = 0.0;
    let mut var_d = 0.0;
    let mut cross = Matrix3::zeros();
    for k in 0..src.len() {
        let a = src[k] - mu_s;
        let b = dst[k] - mu_d;
        let w = w_of(k);
        var_s += w * a.norm_squared();
        var_d += w * b.norm_squared();
        cross += w * b * a.transpose();
    }
    if var_s <= 1e-15 || var_d <= 1e-15 {
        return Err(LoopClosureError::Degenerate);
    }

    let svd = cross.svd(true, true);
    // Collinear configurations leave the rotation about the line free.
    if svd.singular_values[1] <= 1e-9 * svd.singular_values[0] {
        return Err(LoopClosureError::Degenerate);
    }
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;

    let scale = (var_d / var_s).sqrt();
    let rotation = nalgebra::UnitQuaternion::from_matrix(&r);
    let translation = mu_d - scale * (rotation * mu_s);
    let sim3 = Sim3::new(scale, rotation, translation);

    let mut sq = 0.0;
    for k in 0..src.len() {
        sq += w_of(k) * (dst[k] - sim3.apply(&src[k])).norm_squared();
    }
    Ok(Sim3Estimate {
        sim3,
        residual_rms: (sq / w_sum).sqrt(),
    })
}

/// Three rounds of residual-based re-weighting around the closed-form fit;
/// tolerates a large fraction of gross outliers.
pub fn estimate_sim3_robust(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<Sim3Estimate, LoopClosureError> {
    let mut est = estimate_sim3(src, dst)?;
    for _ in 0..3 {
        let residuals: Vec<f64> = src
            .iter()
            .zip(dst)
            .map(|(s, d)| (d - est.sim3.apply(s)).norm())
            .collect();
        let mut sorted = residuals.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let sigma = (1.4826 * median).max(1e-9);
        // Hard cut at 3 sigma with Cauchy falloff inside.
        let weights: Vec<f64> = residuals
            .iter()
            .map(|r| {
                if *r > 3.0 * sigma {
                    0.0
                } else {
                    1.0 / (1.0 + (r / sigma).powi(2))
                }
            })
            .collect();
        est = estimate_sim3_weighted(src, dst, Some(&weights))?;
    }
    Ok(est)
}
