//! Schur-complement solve of the bordered normal equations: eliminate the
//! diagonal point block, solve the reduced camera system, back-substitute.

use nalgebra::{DMatrix, DVector, Vector6};

use super::{HessianSystem, TrackingError};

/// Solves
///   Δξ = [C − E P⁻¹ Eᵀ]⁻¹ (v − E P⁻¹ w),
///   Δd = P⁻¹ (w − Eᵀ Δξ),
/// with the increments of the first `fixed_frames` frames forced to zero.
pub fn schur_solve(sys: &HessianSystem) -> Result<(Vec<Vector6<f64>>, DVector<f64>), TrackingError> {
    let nf = sys.n_frames;
    let np = sys.n_points;
    let fixed = 6 * sys.fixed_frames;
    let free = 6 * nf - fixed;

    let p_inv = DVector::from_iterator(np, sys.p_diag.iter().map(|p| 1.0 / p));

    // S = C − E P⁻¹ Eᵀ and rhs = v − E P⁻¹ w, restricted to free frames.
    let mut s = DMatrix::zeros(free, free);
    let mut rhs = DVector::zeros(free);
    for a in 0..free {
        rhs[a] = sys.v[fixed + a];
        for b in 0..free {
            s[(a, b)] = sys.c[(fixed + a, fixed + b)];
        }
    }
    if np > 0 {
        for a in 0..free {
            let mut acc = 0.0;
            for m in 0..np {
                acc += sys.e[(fixed + a, m)] * p_inv[m] * sys.w[m];
            }
            rhs[a] -= acc;
            for b in a..free {
                let mut dot = 0.0;
                for m in 0..np {
                    dot += sys.e[(fixed + a, m)] * p_inv[m] * sys.e[(fixed + b, m)];
                }
                s[(a, b)] -= dot;
                if a != b {
                    s[(b, a)] = s[(a, b)];
                }
            }
        }
    }

    let chol = match s.clone().cholesky() {
        Some(c) => c,
        None => {
            let eig = s.symmetric_eigenvalues();
            let max = eig.iter().cloned().fold(f64::MIN, f64::max);
            let min = eig.iter().cloned().fold(f64::MAX, f64::min);
            let cond = if min.abs() < 1e-300 { f64::INFINITY } else { max / min };
            return Err(TrackingError::SingularSystem { cond });
        }
    };
    let dxi_free = chol.solve(&rhs);

    let mut dxi_full = DVector::zeros(6 * nf);
    for a in 0..free {
        dxi_full[fixed + a] = dxi_free[a];
    }

    // Back-substitution for the points.
    let mut dd = DVector::zeros(np);
    for m in 0..np {
        let mut acc = sys.w[m];
        for a in 0..6 * nf {
            acc -= sys.e[(a, m)] * dxi_full[a];
        }
        dd[m] = p_inv[m] * acc;
    }

    let increments = (0..nf)
        .map(|f| Vector6::from_iterator((0..6).map(|k| dxi_full[6 * f + k])))
        .collect();
    Ok((increments, dd))
}
