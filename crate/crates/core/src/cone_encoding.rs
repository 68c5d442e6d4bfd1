//! Conical-frustum Gaussian moments, their lift to world space, the spherical
//! contraction that maps unbounded space into the radius-2 ball, and the
//! integrated sinusoidal featurization of the resulting Gaussians.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConeError {
    #[error("frustum needs 0 < t0 <= t1, got t0={t0}, t1={t1}")]
    BadInterval { t0: f64, t1: f64 },
    #[error("ray direction must be unit length (|d| = {0})")]
    NonUnitDirection(f64),
}

/// Which form of the radial-variance formula to evaluate. The printed form
/// has a first term quadratic in the interval half-width, which vanishes for a
/// degenerate frustum and contradicts the nonzero variance of a uniform disk;
/// the corrected form uses the mean distance instead and matches Monte-Carlo
/// integration. `Corrected` is the default everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RadialVarianceForm {
    #[default]
    Corrected,
    AsPrinted,
}

/// Second moments of a conical frustum under uniform density: mean distance
/// along the ray and variances along/perpendicular to it.
#[derive(Debug, Clone, Copy)]
pub struct FrustumMoments {
    pub mu_t: f64,
    pub sigma_t2: f64,
    pub sigma_r2: f64,
}

/// A 3D Gaussian: mean plus symmetric covariance.
#[derive(Debug, Clone, Copy)]
pub struct GaussianRegion {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// A Gaussian pushed through the contraction, with the Jacobian used for the
/// covariance transport.
#[derive(Debug, Clone, Copy)]
pub struct ContractionResult {
    pub region: GaussianRegion,
    pub jacobian: Matrix3<f64>,
}

/// Moments of the conical frustum between ray distances `t0` and `t1` for a
/// cone of perpendicular radius `r` per unit distance.
pub fn frustum_moments(t0: f64, t1: f64, r: f64) -> Result<FrustumMoments, ConeError> {
    frustum_moments_with_form(t0, t1, r, RadialVarianceForm::Corrected)
}

pub fn frustum_moments_with_form(
    t0: f64,
    t1: f64,
    r: f64,
    form: RadialVarianceForm,
) -> Result<FrustumMoments, ConeError> {
    if !(t0 > 0.0 && t1 >= t0) {
        return Err(ConeError::BadInterval { t0, t1 });
    }
    let t_mu = 0.5 * (t0 + t1);
    // Only even powers of the half-width appear, so the sign is irrelevant;
    // store the magnitude.
    let t_d = 0.5 * (t1 - t0);
    let t_mu2 = t_mu * t_mu;
    let t_d2 = t_d * t_d;
    let denom = 3.0 * t_mu2 + t_d2;

    let mu_t = t_mu + 2.0 * t_mu * t_d2 / denom;
    let sigma_t2 = t_d2 / 3.0 - 4.0 * t_d2 * t_d2 * (12.0 * t_mu2 - t_d2) / (15.0 * denom * denom);
    let first = match form {
        RadialVarianceForm::Corrected => t_mu2 / 4.0,
        RadialVarianceForm::AsPrinted => t_d2 / 4.0,
    };
    let sigma_r2 = r * r * (first + 5.0 * t_d2 / 12.0 - 4.0 * t_d2 * t_d2 / (15.0 * denom));

    Ok(FrustumMoments {
        mu_t,
        sigma_t2: sigma_t2.max(0.0),
        sigma_r2: sigma_r2.max(0.0),
    })
}

/// Lifts ray-frame moments to a world-frame Gaussian:
/// mean `o + mu_t d`, covariance `sigma_t² ddᵀ + sigma_r² (I − ddᵀ)`.
pub fn lift_to_world(
    origin: &Vector3<f64>,
    direction: &Vector3<f64>,
    m: &FrustumMoments,
) -> Result<GaussianRegion, ConeError> {
    let n = direction.norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(ConeError::NonUnitDirection(n));
    }
    let ddt = direction * direction.transpose();
    Ok(GaussianRegion {
        mean: origin + m.mu_t * direction,
        cov: m.sigma_t2 * ddt + m.sigma_r2 * (Matrix3::identity() - ddt),
    })
}

/// Spherical contraction: identity on the unit ball, `(2 − 1/|x|)·x/|x|`
/// outside. Maps all of space into the open ball of radius 2.
pub fn contract_point(x: &Vector3<f64>) -> Vector3<f64> {
    let n = x.norm();
    if n <= 1.0 {
        *x
    } else {
        (2.0 - 1.0 / n) * (x / n)
    }
}

/// Inverse of `contract_point`; the argument must have norm < 2.
pub fn uncontract_point(y: &Vector3<f64>) -> Vector3<f64> {
    let n = y.norm();
    if n <= 1.0 {
        *y
    } else {
        debug_assert!(n < 2.0, "uncontract: |y| = {n} >= 2");
        y / (n * (2.0 - n))
    }
}

/// Analytic Jacobian of `contract_point`. On the unit sphere, where the map is
/// continuous but not differentiable, the outer-branch Jacobian is used.
pub fn contract_jacobian(x: &Vector3<f64>) -> Matrix3<f64> {
    let n = x.norm();
    if n < 1.0 {
        Matrix3::identity()
    } else {
        // f(x) = (2/n − 1/n²) x with n = |x|.
        let a = 2.0 / n - 1.0 / (n * n);
        let da_dn = -2.0 / (n * n) + 2.0 / (n * n * n);
        a * Matrix3::identity() + (da_dn / n) * (x * x.transpose())
    }
}

/// Pushes a Gaussian through the contraction: mean via the map, covariance via
/// the first-order Jacobian transport, symmetrized against rounding.
pub fn contract_gaussian(g: &GaussianRegion) -> ContractionResult {
    let jac = contract_jacobian(&g.mean);
    let mean = contract_point(&g.mean);
    let cov = jac * g.cov * jac.transpose();
    let cov = 0.5 * (cov + cov.transpose());
    ContractionResult {
        region: GaussianRegion { mean, cov },
        jacobian: jac,
    }
}

/// Expected sinusoidal encoding of a Gaussian with diagonal attenuation:
/// for each band `j < bands` and axis `k`, the features
/// `sin(2^j mean_k)·exp(−4^j cov_kk/2)` and `cos(2^j mean_k)·exp(−4^j cov_kk/2)`.
/// Output length is `6 * bands` (sin triplet then cos triplet per band).
pub fn integrated_encoding(g: &GaussianRegion, bands: usize) -> Vec<f64> {
    assert!(bands >= 1);
    let mut out = Vec::with_capacity(6 * bands);
    for j in 0..bands {
        let freq = (1u64 << j) as f64;
        let att = |k: usize| (-0.5 * freq * freq * g.cov[(k, k)]).exp();
        for k in 0..3 {
            out.push((freq * g.mean[k]).sin() * att(k));
        }
        for k in 0..3 {
            out.push((freq * g.mean[k]).cos() * att(k));
        }
    }
    out
}
