//! Reprojection residuals with analytic Jacobians, and the robust depth
//! penalty.

use nalgebra::{Matrix2x3, Matrix3, Matrix3x6, Vector2, Vector3};

use super::FactorGraph;
use crate::geometry::{skew, CameraIntrinsics};

/// One linearized residual: host/target frame indices, global point index,
/// the weighted residual, and weighted Jacobians w.r.t. the two pose
/// increments (left-multiplied se(3), translation first) and the inverse
/// depth.
#[derive(Debug, Clone)]
pub struct ResidualEntry {
    pub frame_i: usize,
    pub frame_j: usize,
    pub point: usize,
    pub r: Vector2<f64>,
    pub j_pose_i: nalgebra::Matrix2x6<f64>,
    pub j_pose_j: nalgebra::Matrix2x6<f64>,
    pub j_depth: Vector2<f64>,
    pub weight: f64,
}

/// All residuals of the graph plus a counter of correspondences dropped for
/// projecting behind the target camera.
#[derive(Debug, Clone, Default)]
pub struct ResidualData {
    pub entries: Vec<ResidualEntry>,
    pub dropped: usize,
}

impl ResidualData {
    /// Total weighted squared reprojection cost; the stored residuals already
    /// carry the sqrt-weight.
    pub fn cost(&self) -> f64 {
        self.entries.iter().map(|e| e.r.norm_squared()).sum()
    }
}

/// Linearizes every correspondence: `r = p* − π(T_j⁻¹ T_i · r̂(p)/d')`,
/// weighted by `sqrt(w)` (folded into the stored residual and Jacobians so
/// downstream products need no extra weighting).
pub fn reprojection_residuals(graph: &FactorGraph, intr: &CameraIntrinsics) -> ResidualData {
    let offsets = graph.point_offsets();
    let mut data = ResidualData::default();
    for edge in &graph.edges {
        let frame_i = &graph.frames[edge.from];
        let frame_j = &graph.frames[edge.to];
        let r_i = frame_i.pose.rotation_matrix();
        let r_j_t = frame_j.pose.rotation_matrix().transpose();
        for obs in &edge.observations {
            let pt = &frame_i.points[obs.point];
            let ray = intr.pixel_ray(pt.pixel.x, pt.pixel.y);
            let inv_d = pt.inv_depth;
            let x_cam_i = ray / inv_d;
            let x_world = r_i * x_cam_i + frame_i.pose.translation;
            let x_j = r_j_t * (x_world - frame_j.pose.translation);
            if x_j.z <= 1e-9 {
                data.dropped += 1;
                continue;
            }
            let pred = Vector2::new(
                intr.fx * x_j.x / x_j.z + intr.cx,
                intr.fy * x_j.y / x_j.z + intr.cy,
            );
            let r = obs.target - pred;

            // dπ/dX at X_j.
            let (x, y, z) = (x_j.x, x_j.y, x_j.z);
            let dpi = Matrix2x3::new(
                intr.fx / z,
                0.0,
                -intr.fx * x / (z * z),
                0.0,
                intr.fy / z,
                -intr.fy * y / (z * z),
            );

            // dX_j/dξ_i = R_jᵀ [I | −[X_w]×]; dX_j/dξ_j is its negation.
            let mut dxw = Matrix3x6::zeros();
            dxw.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
            dxw.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&x_world)));
            let dxj_dxi = r_j_t * dxw;

            // dX_j/dd' = R_jᵀ R_i (−r̂/d'²).
            let dxj_dd: Vector3<f64> = r_j_t * (r_i * (-ray / (inv_d * inv_d)));

            // r = p* − π ⇒ ∂r/∂· = −dπ·∂X_j/∂·.
            let s = obs.weight.sqrt();
            data.entries.push(ResidualEntry {
                frame_i: edge.from,
                frame_j: edge.to,
                point: offsets[edge.from] + obs.point,
                r: s * r,
                j_pose_i: -s * dpi * dxj_dxi,
                j_pose_j: s * dpi * dxj_dxi,
                j_depth: -s * dpi * dxj_dd,
                weight: obs.weight,
            });
        }
    }
    data
}

/// Huber-style depth penalty: quadratic inside `tau_tra`, linear outside.
/// Returns the value and its derivative w.r.t. the estimated depth.
pub fn robust_depth_penalty(d_prior: f64, d_est: f64, tau_tra: f64) -> (f64, f64) {
    assert!(tau_tra > 0.0);
    let diff = d_prior - d_est;
    if diff.abs() < tau_tra {
        (diff * diff, -2.0 * diff)
    } else {
        (tau_tra * diff.abs(), -tau_tra * diff.signum())
    }
}
