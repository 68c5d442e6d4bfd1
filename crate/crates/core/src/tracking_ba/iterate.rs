//! The damped Gauss-Newton loop: build, solve, retract, accept or reject.

use super::normal_eqs::build_normal_equations;
use super::residuals::{reprojection_residuals, robust_depth_penalty};
use super::schur::schur_solve;
use super::{FactorGraph, RobustDepthConfig, TrackingError};
use crate::geometry::{se3_exp, CameraIntrinsics};

#[derive(Debug, Clone)]
pub struct TrackerConfig {
    pub robust: Option<RobustDepthConfig>,
    pub max_iters: usize,
    /// Initial Levenberg damping; grows on rejected steps, shrinks on
    /// accepted ones.
    pub damping_init: f64,
    pub damping_max: f64,
    /// Stop when the relative cost change falls below this.
    pub tol: f64,
    /// Costs below this are treated as converged outright.
    pub cost_floor: f64,
    /// Gauge fixing: leading frames never move.
    pub fixed_frames: usize,
    /// Inverse depths are clamped above this after every update.
    pub min_inv_depth: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            robust: Some(RobustDepthConfig::default()),
            max_iters: 50,
            damping_init: 1e-4,
            damping_max: 1e8,
            tol: 1e-8,
            cost_floor: 1e-14,
            fixed_frames: 1,
            min_inv_depth: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackOutcome {
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    /// Damping exceeded its ceiling; the best-so-far state is returned.
    pub diverged: bool,
    /// Correspondences dropped for projecting behind a camera.
    pub dropped: usize,
}

/// Weighted reprojection cost plus the depth-penalty term.
pub fn total_cost(
    graph: &FactorGraph,
    intr: &CameraIntrinsics,
    robust: Option<&RobustDepthConfig>,
) -> f64 {
    let mut cost = reprojection_residuals(graph, intr).cost();
    if let Some(cfg) = robust {
        if cfg.weight > 0.0 {
            for frame in &graph.frames {
                for pt in &frame.points {
                    let (v, _) = robust_depth_penalty(pt.prior_depth, 1.0 / pt.inv_depth, cfg.tau_tra);
                    cost += cfg.weight * v;
                }
            }
        }
    }
    cost
}

/// Iterates damped Gauss-Newton on `graph` in place. Accepted steps must
/// reduce the cost; rejected steps raise the damping and retry.
pub fn gauss_newton_iterate(
    graph: &mut FactorGraph,
    intr: &CameraIntrinsics,
    cfg: &TrackerConfig,
) -> Result<TrackOutcome, TrackingError> {
    assert!(cfg.max_iters >= 1);
    let robust = cfg.robust.as_ref();
    let mut damping = cfg.damping_init;
    let mut cost = total_cost(graph, intr, robust);
    let mut trace = vec![cost];
    let mut converged = false;
    let mut diverged = false;
    let mut dropped = 0;

    for _ in 0..cfg.max_iters {
        let mut accepted = false;
        while !accepted {
            let mut sys = build_normal_equations(graph, intr, robust, damping)?;
            sys.fixed_frames = cfg.fixed_frames.min(sys.n_frames);
            dropped = reprojection_residuals(graph, intr).dropped;
            let (dxi, dd) = match schur_solve(&sys) {
                Ok(sol) => sol,
                Err(_) if damping < cfg.damping_max => {
                    damping *= 10.0;
                    continue;
                }
                Err(e) => return Err(e),
            };

            // Tentative retraction.
            let mut candidate = graph.clone();
            for (f, frame) in candidate.frames.iter_mut().enumerate() {
                frame.pose = se3_exp(&dxi[f]).compose(&frame.pose);
            }
            let offsets = candidate.point_offsets();
            for (f, frame) in candidate.frames.iter_mut().enumerate() {
                for (k, pt) in frame.points.iter_mut().enumerate() {
                    pt.inv_depth = (pt.inv_depth + dd[offsets[f] + k]).max(cfg.min_inv_depth);
                }
            }
            let new_cost = total_cost(&candidate, intr, robust);

            if new_cost <= cost {
                *graph = candidate;
                let rel = (cost - new_cost) / cost.max(1e-300);
                cost = new_cost;
                trace.push(cost);
                damping = (damping / 3.0).max(1e-12);
                accepted = true;
                if rel < cfg.tol || cost < cfg.cost_floor {
                    converged = true;
                }
            } else {
                damping *= 10.0;
                if damping > cfg.damping_max {
                    diverged = true;
                    break;
                }
            }
        }
        if converged || diverged {
            break;
        }
    }

    Ok(TrackOutcome {
        cost_trace: trace,
        converged,
        diverged,
        dropped,
    })
}
