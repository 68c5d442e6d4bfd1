//! Assembly of the Gauss-Newton normal equations into the camera/point block
//! structure, including the depth-penalty contribution to the point block.

use nalgebra::{DMatrix, DVector};

use super::residuals::reprojection_residuals;
use super::{FactorGraph, HessianSystem, RobustDepthConfig, TrackingError};
use crate::geometry::CameraIntrinsics;

/// Curvature floor for the linear penalty branch, keeping P invertible.
const LINEAR_BRANCH_FLOOR: f64 = 1e-6;

/// Builds `JᵀWJ` and `−JᵀWr` in block form. The depth penalty touches only
/// the point entries P and w; `damping` is added to every diagonal.
pub fn build_normal_equations(
    graph: &FactorGraph,
    intr: &CameraIntrinsics,
    robust: Option<&RobustDepthConfig>,
    damping: f64,
) -> Result<HessianSystem, TrackingError> {
    if graph.edges.is_empty() {
        return Err(TrackingError::EmptyGraph);
    }
    let n_frames = graph.frames.len();
    let n_points = graph.n_points();
    let mut c = DMatrix::zeros(6 * n_frames, 6 * n_frames);
    let mut e = DMatrix::zeros(6 * n_frames, n_points);
    let mut p_diag = DVector::zeros(n_points);
    let mut v = DVector::zeros(6 * n_frames);
    let mut w = DVector::zeros(n_points);

    let data = reprojection_residuals(graph, intr);
    for entry in &data.entries {
        let bi = 6 * entry.frame_i;
        let bj = 6 * entry.frame_j;
        let m = entry.point;
        let ji = &entry.j_pose_i;
        let jj = &entry.j_pose_j;
        let jd = &entry.j_depth;

        let jiji = ji.transpose() * ji;
        let jijj = ji.transpose() * jj;
        let jjjj = jj.transpose() * jj;
        for a in 0..6 {
            for b in 0..6 {
                c[(bi + a, bi + b)] += jiji[(a, b)];
                c[(bi + a, bj + b)] += jijj[(a, b)];
                c[(bj + a, bi + b)] += jijj[(b, a)];
                c[(bj + a, bj + b)] += jjjj[(a, b)];
            }
        }
        let jid = ji.transpose() * jd;
        let jjd = jj.transpose() * jd;
        for a in 0..6 {
            e[(bi + a, m)] += jid[a];
            e[(bj + a, m)] += jjd[a];
        }
        p_diag[m] += jd.dot(jd);

        // Right-hand side is the descent direction −Jᵀr.
        let vi = ji.transpose() * entry.r;
        let vj = jj.transpose() * entry.r;
        for a in 0..6 {
            v[bi + a] -= vi[a];
            v[bj + a] -= vj[a];
        }
        w[m] -= jd.dot(&entry.r);
    }

    if let Some(cfg) = robust {
        if cfg.weight > 0.0 {
            let offsets = graph.point_offsets();
            for (f, frame) in graph.frames.iter().enumerate() {
                for (k, pt) in frame.points.iter().enumerate() {
                    let m = offsets[f] + k;
                    let d_est = 1.0 / pt.inv_depth;
                    let diff = pt.prior_depth - d_est;
                    // d(d_est)/d(inv_depth) = −1/inv_depth².
                    let dd = -1.0 / (pt.inv_depth * pt.inv_depth);
                    let (curv, grad) = if diff.abs() < cfg.tau_tra {
                        (2.0, -2.0 * diff * dd)
                    } else {
                        (LINEAR_BRANCH_FLOOR, -cfg.tau_tra * diff.signum() * dd)
                    };
                    p_diag[m] += cfg.weight * curv * dd * dd;
                    w[m] -= cfg.weight * grad;
                }
            }
        }
    }

    for i in 0..6 * n_frames {
        c[(i, i)] += damping;
    }
    for m in 0..n_points {
        p_diag[m] += damping;
    }

    Ok(HessianSystem {
        c,
        e,
        p_diag,
        v,
        w,
        n_frames,
        n_points,
        fixed_frames: 0,
    })
}
