//! Damped Gauss-Newton over Sim3 pose-graph residuals
//! `log(Z_ij⁻¹ · X_i⁻¹ · X_j)` with node 0 held fixed.

use nalgebra::{DMatrix, DVector};

use super::{LoopClosureError, Sim3};

/// Relative Sim3 measurement from node `from` to node `to` with a scalar
/// information weight.
#[derive(Debug, Clone)]
pub struct PgEdge {
    pub from: usize,
    pub to: usize,
    pub measurement: Sim3,
    pub weight: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    pub nodes: Vec<Sim3>,
    pub edges: Vec<PgEdge>,
}

impl PoseGraph {
    /// Connectivity over all edges, required for a well-posed solve.
    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for e in &self.edges {
                for (a, b) in [(e.from, e.to), (e.to, e.from)] {
                    if a == n && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    fn edge_residual(&self, e: &PgEdge) -> [f64; 7] {
        let err = e
            .measurement
            .inverse()
            .compose(&self.nodes[e.from].inverse())
            .compose(&self.nodes[e.to]);
        let mut r = err.chart();
        let s = e.weight.sqrt();
        for v in &mut r {
            *v *= s;
        }
        r
    }

    pub fn total_residual(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| self.edge_residual(e).iter().map(|r| r * r).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct PgoResult {
    pub initial_residual: f64,
    pub final_residual: f64,
    /// Residual after each accepted step, starting with the initial value.
    pub residual_trace: Vec<f64>,
    pub converged: bool,
}

/// Optimizes all nodes but the first. Jacobians are central differences over
/// the Sim3 retraction; steps are Levenberg-damped and only accepted when the
/// total residual decreases.
pub fn pose_graph_optimize(
    graph: &mut PoseGraph,
    max_iters: usize,
) -> Result<PgoResult, LoopClosureError> {
    if !graph.is_connected() {
        return Err(LoopClosureError::Disconnected);
    }
    let n_free = graph.nodes.len() - 1;
    let initial = graph.total_residual();
    let mut trace = vec![initial];
    let mut cost = initial;
    let mut damping = 1e-6;
    let mut converged = false;

    if n_free == 0 || graph.edges.is_empty() {
        return Ok(PgoResult {
            initial_residual: initial,
            final_residual: initial,
            residual_trace: trace,
            converged: true,
        });
    }

    let n_rows = 7 * graph.edges.len();
    let n_cols = 7 * n_free;
    for _ in 0..max_iters {
        // Numeric Jacobian of all edge residuals w.r.t. free node charts.
        let mut jac = DMatrix::zeros(n_rows, n_cols);
        let mut resid = DVector::zeros(n_rows);
        for (ei, e) in graph.edges.iter().enumerate() {
            let r = graph.edge_residual(e);
            for k in 0..7 {
                resid[7 * ei + k] = r[k];
            }
            let h = 1e-6;
            for &node in &[e.from, e.to] {
                if node == 0 {
                    continue;
                }
                let col0 = 7 * (node - 1);
                for k in 0..7 {
                    let mut delta = [0.0; 7];
                    delta[k] = h;
                    let saved = graph.nodes[node];
                    let mut plus = graph.clone();
                    plus.nodes[node] = saved.retract(&delta);
                    delta[k] = -h;
                    let mut minus = graph.clone();
                    minus.nodes[node] = saved.retract(&delta);
                    let rp = plus.edge_residual(e);
                    let rm = minus.edge_residual(e);
                    for row in 0..7 {
                        jac[(7 * ei + row, col0 + k)] = (rp[row] - rm[row]) / (2.0 * h);
                    }
                }
            }
        }

        let mut accepted = false;
        while !accepted {
            let mut h = jac.transpose() * &jac;
            for d in 0..n_cols {
                h[(d, d)] += damping;
            }
            let g = -(jac.transpose() * &resid);
            let Some(chol) = h.cholesky() else {
                damping *= 10.0;
                if damping > 1e12 {
                    return Ok(PgoResult {
                        initial_residual: initial,
                        final_residual: cost,
                        residual_trace: trace,
                        converged: false,
                    });
                }
                continue;
            };
            let step = chol.solve(&g);

            let mut candidate = graph.clone();
            for node in 1..graph.nodes.len() {
                let mut delta = [0.0; 7];
                for k in 0..7 {
                    delta[k] = step[7 * (node - 1) + k];
                }
                candidate.nodes[node] = candidate.nodes[node].retract(&delta);
            }
            let new_cost = candidate.total_residual();
            if new_cost <= cost {
                let rel = (cost - new_cost) / cost.max(1e-300);
                *graph = candidate;
                cost = new_cost;
                trace.push(cost);
                damping = (damping / 3.0).max(1e-12);
                accepted = true;
                if rel < 1e-10 || cost < 1e-20 {
                    converged = true;
                }
            } else {
                damping *= 10.0;
                if damping > 1e12 {
                    return Ok(PgoResult {
                        initial_residual: initial,
                        final_residual: cost,
                        residual_trace: trace,
                        converged: false,
                    });
                }
            }
        }
        if converged {
            break;
        }
    }

    Ok(PgoResult {
        initial_residual: initial,
        final_residual: cost,
        residual_trace: trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_sim::{gen_trajectory, TrajectoryKind};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    /// Chains odometry measurements from node 0.
    fn integrate_chain(start: &Sim3, odometry: &[Sim3]) -> Vec<Sim3> {
        let mut nodes = vec![*start];
        for z in odometry {
            let last = *nodes.last().unwrap();
            nodes.push(last.compose(z));
        }
        nodes
    }

    fn circle_graph(drift_scale: f64) -> (PoseGraph, Vec<Sim3>) {
        let n = 20;
        let gt_poses = gen_trajectory(TrajectoryKind::Loop, n, Vector3::zeros(), 2.0).unwrap();
        let gt: Vec<Sim3> = gt_poses.iter().map(Sim3::from_pose).collect();
        // Odometry with per-edge scale drift.
        let odometry: Vec<Sim3> = (0..n - 1)
            .map(|k| {
                let rel = gt[k].inverse().compose(&gt[k + 1]);
                Sim3::new(rel.scale * drift_scale, rel.rotation, rel.translation)
            })
            .collect();
        let nodes = integrate_chain(&gt[0], &odometry);
        let mut edges: Vec<PgEdge> = odometry
            .iter()
            .enumerate()
            .map(|(k, z)| PgEdge {
                from: k,
                to: k + 1,
                measurement: *z,
                weight: 1.0,
            })
            .collect();
        // Exact loop edge from the revisit.
        edges.push(PgEdge {
            from: 0,
            to: n - 1,
            measurement: gt[0].inverse().compose(&gt[n - 1]),
            weight: 10.0,
        });
        (PoseGraph { nodes, edges }, gt)
    }

    #[test]
    fn zero_error_graph_is_fixed_point() {
        let (graph, gt) = circle_graph(1.0);
        // No drift: nodes equal ground truth already.
        let mut g = graph.clone();
        let res = pose_graph_optimize(&mut g, 10).unwrap();
        assert!(res.initial_residual < 1e-18);
        assert!(res.converged);
        for (n, t) in g.nodes.iter().zip(&gt) {
            assert_relative_eq!(n.translation, t.translation, epsilon = 1e-9);
        }
    }

    #[test]
    fn scale_drift_loop_is_corrected() {
        let (mut graph, gt) = circle_graph(1.01);
        let end = graph.nodes.len() - 1;
        let before = (graph.nodes[end].translation - gt[end].translation).norm();
        assert!(before > 0.05, "drift fixture too small: {before}");
        let res = pose_graph_optimize(&mut graph, 50).unwrap();
        let after = (graph.nodes[end].translation - gt[end].translation).norm();
        assert!(
            after < 0.5 * before,
            "endpoint error {after} not halved from {before}"
        );
        assert!(res.final_residual < res.initial_residual);
    }

    #[test]
    fn residual_trace_non_increasing() {
        let (mut graph, _) = circle_graph(1.01);
        let res = pose_graph_optimize(&mut graph, 30).unwrap();
        for w in res.residual_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn odometry_only_returns_chain() {
        let (graph, _) = circle_graph(1.02);
        let mut odo = graph.clone();
        odo.edges.pop(); // drop the loop edge
        let chain_before = odo.nodes.clone();
        let res = pose_graph_optimize(&mut odo, 20).unwrap();
        // The chain exactly satisfies the odometry: nothing moves.
        assert!(res.initial_residual < 1e-18);
        for (a, b) in odo.nodes.iter().zip(&chain_before) {
            assert_relative_eq!(a.translation, b.translation, epsilon = 1e-9);
            assert_relative_eq!(a.scale, b.scale, epsilon = 1e-12);
        }
    }

    #[test]
    fn disconnected_graph_errors() {
        let mut graph = PoseGraph {
            nodes: vec![Sim3::identity(); 3],
            edges: vec![PgEdge {
                from: 0,
                to: 1,
                measurement: Sim3::identity(),
                weight: 1.0,
            }],
        };
        assert!(matches!(
            pose_graph_optimize(&mut graph, 5),
            Err(LoopClosureError::Disconnected)
        ));
    }
}
