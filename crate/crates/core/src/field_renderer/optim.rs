//! Map optimization: seeded minibatches of rays over the keyframe set,
//! analytic gradients through rendering, and momentum SGD on the grids, the
//! decoder, and the logistic scale.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::losses::{
    loss_depth_continuity_grad, loss_depth_correspondence_grad, loss_distortion_grad,
    loss_eikonal_grad, loss_rgb_grad, loss_sdf_grad, total_loss, ContinuityForm, LossTerms,
    LossWeights, Neighborhood,
};
use super::params::FieldParams;
use super::render::{backward_ray, coarse_weights, forward_ray, FieldGradients, RayTape};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::image::{DepthMap, RgbImage};
use crate::keyframe::Keyframe;
use crate::sampling::{importance_resample, ray_seed, stratified_samples, RaySamples};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("non-finite loss at step {step}: {terms:?}")]
    NonFiniteLoss { step: usize, terms: LossTerms },
    #[error("no keyframes to optimize against")]
    NoKeyframes,
}

#[derive(Debug, Clone)]
pub struct MapOptimConfig {
    pub n_steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Scattered rays per step, in addition to the continuity patches.
    pub rays_per_step: usize,
    /// 3x3 patches per step feeding the continuity loss.
    pub n_patches: usize,
    /// Ordered depth pairs per step feeding the correspondence loss.
    pub n_pairs: usize,
    pub n_strat: usize,
    pub n_imp: usize,
    /// Importance resampling pass; stratified-only when false.
    pub importance: bool,
    pub near: f64,
    pub far: f64,
    pub weights: LossWeights,
    pub continuity_form: ContinuityForm,
    pub seed: u64,
    pub beta_min: f64,
    /// Per-group learning-rate multipliers; the voxel grids see sparse
    /// normalized gradients and need larger steps than the dense decoder.
    pub lr_sdf: f64,
    pub lr_color: f64,
    pub lr_decoder: f64,
    pub lr_beta: f64,
    /// Per-step SDF node update cap in voxel units. The Eikonal term's
    /// gradient grows with |∇φ|, which diverges under momentum without a
    /// trust region on the step size.
    pub max_sdf_step_voxels: f64,
}

impl Default for MapOptimConfig {
    fn default() -> Self {
        MapOptimConfig {
            n_steps: 2000,
            learning_rate: 1.0,
            momentum: 0.9,
            rays_per_step: 128,
            n_patches: 6,
            n_pairs: 64,
            n_strat: 20,
            n_imp: 40,
            importance: true,
            near: 0.3,
            far: 8.0,
            weights: LossWeights::default(),
            continuity_form: ContinuityForm::Hinge,
            seed: 0,
            beta_min: 0.01,
            lr_sdf: 10.0,
            lr_color: 10.0,
            lr_decoder: 0.02,
            lr_beta: 0.002,
            max_sdf_step_voxels: 0.25,
        }
    }
}

/// One row of the loss trace: the weighted total plus unweighted components.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub step: usize,
    pub total: f64,
    pub rgb: f64,
    pub correspondence: f64,
    pub continuity: f64,
    pub distortion: f64,
    pub eikonal: f64,
    pub sdf: f64,
}

struct Momentum {
    sdf: Vec<f64>,
    color: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    beta: f64,
}

impl Momentum {
    fn zeros(p: &FieldParams) -> Self {
        Momentum {
            sdf: vec![0.0; p.sdf.len()],
            color: vec![0.0; p.color.len()],
            w1: vec![0.0; p.decoder.w1.len()],
            b1: vec![0.0; p.decoder.b1.len()],
            w2: vec![0.0; p.decoder.w2.len()],
            b2: vec![0.0; p.decoder.b2.len()],
            beta: 0.0,
        }
    }
}

fn sgd(p: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, mu: f64) {
    for i in 0..p.len() {
        v[i] = mu * v[i] - lr * g[i];
        p[i] += v[i];
    }
}

fn sgd_clamped(p: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, mu: f64, max_step: f64, bound: f64) {
    for i in 0..p.len() {
        v[i] = (mu * v[i] - lr * g[i]).clamp(-max_step, max_step);
        p[i] = (p[i] + v[i]).clamp(-bound, bound);
    }
}

/// Samples the pixel batch for one step: patch pixels first (9 per patch, so
/// neighborhood indices are contiguous), then scattered pixels.
fn sample_pixels(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    n_patches: usize,
    n_scattered: usize,
) -> (Vec<(usize, usize)>, Vec<Neighborhood>) {
    let mut pixels = Vec::with_capacity(n_patches * 9 + n_scattered);
    let mut neighborhoods = Vec::with_capacity(n_patches);
    for _ in 0..n_patches {
        let cx = rng.gen_range(1..width - 1);
        let cy = rng.gen_range(1..height - 1);
        let base = pixels.len();
        let mut neighbors = Vec::with_capacity(8);
        let mut center = 0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let idx = pixels.len();
                pixels.push(((cx as i64 + dx) as usize, (cy as i64 + dy) as usize));
                if dx == 0 && dy == 0 {
                    center = idx;
                } else {
                    neighbors.push(idx);
                }
            }
        }
        debug_assert_eq!(pixels.len(), base + 9);
        neighborhoods.push(Neighborhood { center, neighbors });
    }
    for _ in 0..n_scattered {
        pixels.push((rng.gen_range(0..width), rng.gen_range(0..height)));
    }
    (pixels, neighborhoods)
}

fn trace_ray(
    params: &FieldParams,
    pose: &Pose,
    intr: &CameraIntrinsics,
    pixel: (usize, usize),
    cfg: &MapOptimConfig,
    step: usize,
    ray_index: usize,
) -> RayTape {
    let dir = pose.rotation * intr.pixel_ray(pixel.0 as f64, pixel.1 as f64);
    let id = (step as u64) << 24 | ray_index as u64;
    let coarse = stratified_samples(
        pose.translation,
        dir,
        cfg.near,
        cfg.far,
        cfg.n_strat,
        ray_seed(cfg.seed, id, 1),
    )
    .expect("valid near/far");
    let samples: RaySamples = if cfg.importance && cfg.n_imp > 0 {
        let w = coarse_weights(params, &coarse);
        importance_resample(&coarse, &w, cfg.n_imp, ray_seed(cfg.seed, id, 2)).expect("weights")
    } else {
        coarse
    };
    forward_ray(params, &samples, intr.pixel_cone_radius())
}

/// Runs `cfg.n_steps` of momentum SGD on the total mapping objective over the
/// keyframe batch (round-robin). Returns the per-step loss trace.
pub fn optimize_map(
    params: &mut FieldParams,
    keyframes: &[Keyframe],
    cfg: &MapOptimConfig,
) -> Result<Vec<TraceRow>, OptimizeError> {
    if keyframes.is_empty() {
        return Err(OptimizeError::NoKeyframes);
    }
    assert!(cfg.n_steps >= 1);
    let mut grads = FieldGradients::zeros(params);
    let mut vel = Momentum::zeros(params);
    let mut trace = Vec::with_capacity(cfg.n_steps);

    for step in 0..cfg.n_steps {
        let kf = &keyframes[step % keyframes.len()];
        let row = optimize_step(params, kf, cfg, step, &mut grads)?;
        trace.push(row);

        let lr = cfg.learning_rate;
        let max_step = cfg.max_sdf_step_voxels * params.voxel_size();
        sgd_clamped(
            &mut params.sdf,
            &mut vel.sdf,
            &grads.sdf,
            lr * cfg.lr_sdf,
            cfg.momentum,
            max_step,
            2.0 * super::params::DOMAIN_HALF,
        );
        sgd(
            &mut params.color,
            &mut vel.color,
            &grads.color,
            lr * cfg.lr_color,
            cfg.momentum,
        );
        sgd(
            &mut params.decoder.w1,
            &mut vel.w1,
            &grads.w1,
            lr * cfg.lr_decoder,
            cfg.momentum,
        );
        sgd(
            &mut params.decoder.b1,
            &mut vel.b1,
            &grads.b1,
            lr * cfg.lr_decoder,
            cfg.momentum,
        );
        sgd(
            &mut params.decoder.w2,
            &mut vel.w2,
            &grads.w2,
            lr * cfg.lr_decoder,
            cfg.momentum,
        );
        sgd(
            &mut params.decoder.b2,
            &mut vel.b2,
            &grads.b2,
            lr * cfg.lr_decoder,
            cfg.momentum,
        );
        vel.beta = cfg.momentum * vel.beta - lr * cfg.lr_beta * grads.beta;
        params.beta = (params.beta + vel.beta).max(cfg.beta_min);
    }
    Ok(trace)
}

/// One forward/backward step; leaves the gradients for the caller's update.
fn optimize_step(
    params: &FieldParams,
    kf: &Keyframe,
    cfg: &MapOptimConfig,
    step: usize,
    grads: &mut FieldGradients,
) -> Result<TraceRow, OptimizeError> {
    grads.clear();
    let intr = &kf.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(ray_seed(cfg.seed, step as u64, 0xA));
    let (pixels, neighborhoods) =
        sample_pixels(&mut rng, intr.width, intr.height, cfg.n_patches, cfg.rays_per_step);
    let n_rays = pixels.len();

    // Forward tapes in parallel, collected in ray order.
    let tapes: Vec<RayTape> = pixels
        .par_iter()
        .enumerate()
        .map(|(q, &px)| trace_ray(params, &kf.pose, intr, px, cfg, step, q))
        .collect();

    // Batch outputs.
    let pred_colors: Vec<[f64; 3]> = tapes.iter().map(|t| t.out_color).collect();
    let target_colors: Vec<[f64; 3]> = pixels
        .iter()
        .map(|&(x, y)| {
            let c = kf.rgb.get(x, y);
            [c[0] as f64, c[1] as f64, c[2] as f64]
        })
        .collect();
    let rendered_depth: Vec<f64> = tapes.iter().map(|t| t.out_depth).collect();
    let prior_depth: Vec<f64> = pixels
        .iter()
        .map(|&(x, y)| kf.prior_depth.get(x, y) as f64)
        .collect();

    // Photometric loss.
    let (l_rgb, g_rgb) = loss_rgb_grad(&pred_colors, &target_colors).expect("non-empty batch");

    // Correspondence pairs among depth-valid pixels.
    let valid: Vec<usize> = (0..n_rays).filter(|&q| prior_depth[q].is_finite()).collect();
    let pairs: Vec<(usize, usize)> = if valid.len() >= 2 {
        (0..cfg.n_pairs)
            .map(|_| {
                (
                    valid[rng.gen_range(0..valid.len())],
                    valid[rng.gen_range(0..valid.len())],
                )
            })
            .filter(|(a, b)| a != b)
            .collect()
    } else {
        Vec::new()
    };
    let (l_cor, g_cor) =
        loss_depth_correspondence_grad(&prior_depth, &rendered_depth, &pairs, cfg.weights.tau);
    let (l_con, g_con) = loss_depth_continuity_grad(
        &prior_depth,
        &rendered_depth,
        &neighborhoods,
        cfg.weights.tau_prime,
        cfg.continuity_form,
    );

    // Distortion per ray, averaged over rays.
    let mut l_dist = 0.0;
    let mut g_dist: Vec<Vec<f64>> = Vec::with_capacity(n_rays);
    for t in &tapes {
        let (v, g) = loss_distortion_grad(&t.weights, &t.s_mids, &t.s_widths);
        l_dist += v;
        g_dist.push(g);
    }
    l_dist /= n_rays as f64;

    // Eikonal over every sample position; gradient goes straight to the grid.
    let probes: Vec<Vector3<f64>> = tapes.iter().flat_map(|t| t.positions.iter().copied()).collect();
    let l_eik = loss_eikonal_grad(params, &probes, cfg.weights.lambda_eik, &mut grads.sdf);

    // SDF supervision along depth-valid rays.
    let mut phi = Vec::new();
    let mut bound = Vec::new();
    let mut phi_spans: Vec<(usize, usize, usize)> = Vec::new(); // (ray, start, len)
    for &q in &valid {
        let t = &tapes[q];
        let start = phi.len();
        for i in 0..t.n {
            phi.push(t.sdf[i]);
            bound.push(prior_depth[q] - t.depths[i]);
        }
        phi_spans.push((q, start, t.n));
    }
    let denom = phi.len().max(1);
    let (l_sdf, g_sdf) = loss_sdf_grad(&phi, &bound, cfg.weights.zeta, cfg.weights.alpha, denom);

    let terms = LossTerms {
        rgb: l_rgb,
        correspondence: l_cor,
        continuity: l_con,
        distortion: l_dist,
        eikonal: l_eik,
        sdf: l_sdf,
    };
    let total = total_loss(&terms, &cfg.weights);
    if !total.is_finite() {
        return Err(OptimizeError::NonFiniteLoss { step, terms });
    }

    // Assemble per-ray adjoints and run the backward passes in ray order.
    let w = &cfg.weights;
    let mut d_phi_per_ray: Vec<Vec<f64>> = vec![Vec::new(); n_rays];
    for &(q, start, len) in &phi_spans {
        d_phi_per_ray[q] = g_sdf[start..start + len].iter().map(|g| g * w.lambda_sdf).collect();
    }
    for q in 0..n_rays {
        let d_color = [
            w.lambda_c * g_rgb[q][0],
            w.lambda_c * g_rgb[q][1],
            w.lambda_c * g_rgb[q][2],
        ];
        let d_depth = w.lambda_dep * (g_cor[q] + w.lambda_con * g_con[q]);
        let d_weights: Vec<f64> = g_dist[q]
            .iter()
            .map(|g| w.lambda_dist * g / n_rays as f64)
            .collect();
        backward_ray(
            params,
            &tapes[q],
            &d_color,
            d_depth,
            &d_weights,
            &d_phi_per_ray[q],
            grads,
        );
    }

    Ok(TraceRow {
        step,
        total,
        rgb: l_rgb,
        correspondence: l_cor,
        continuity: l_con,
        distortion: l_dist,
        eikonal: l_eik,
        sdf: l_sdf,
    })
}

/// Renders a full view from the field; deterministic per-pixel sampling.
pub fn render_view(
    params: &FieldParams,
    pose: &Pose,
    intr: &CameraIntrinsics,
    cfg: &MapOptimConfig,
) -> (RgbImage, DepthMap) {
    let (w, h) = (intr.width, intr.height);
    let rows: Vec<Vec<([f32; 3], f32)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let tape = trace_ray(params, pose, intr, (x, y), cfg, 0, y * w + x);
                    let c = tape.out_color;
                    ([c[0] as f32, c[1] as f32, c[2] as f32], tape.out_depth as f32)
                })
                .collect()
        })
        .collect();
    let mut rgb = RgbImage::new(w, h);
    let mut depth = DepthMap::new(w, h);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (c, d)) in row.into_iter().enumerate() {
            rgb.set(x, y, c);
            depth.set(x, y, d);
        }
    }
    (rgb, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_renderer::params::SdfInit;
    use crate::geometry::look_at;
    use crate::keyframe::SelectionInfo;
    use crate::scene_sim::{
        corrupt_depth, render_ground_truth, AnalyticScene, DepthPriorSpec, Primitive,
        RenderOptions, ScenePrimitive,
    };

    fn test_keyframe() -> Keyframe {
        let scene = AnalyticScene::new(vec![ScenePrimitive {
            shape: Primitive::Sphere {
                center: nalgebra::Vector3::zeros(),
                radius: 0.6,
            },
            albedo: [0.8, 0.3, 0.2],
        }]);
        let intr = CameraIntrinsics::new(32.0, 32.0, 15.5, 15.5, 32, 32);
        let pose = look_at(nalgebra::Vector3::new(0.0, -2.0, 0.0), nalgebra::Vector3::zeros());
        let (rgb, depth) = render_ground_truth(&scene, &pose, &intr, &RenderOptions::default());
        let prior = corrupt_depth(&depth, &DepthPriorSpec::oracle());
        Keyframe {
            frame_index: 0,
            timestamp: 0.0,
            pose,
            rgb,
            prior_depth: prior,
            intrinsics: intr,
            selection: SelectionInfo::default(),
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let kf = test_keyframe();
        let mut params = FieldParams::new(10, 3, 2, 6, SdfInit::Sphere(0.8), 2);
        let before_sdf = params.sdf.clone();
        let before_beta = params.beta;
        let cfg = MapOptimConfig {
            n_steps: 3,
            learning_rate: 0.0,
            rays_per_step: 16,
            n_patches: 1,
            n_strat: 8,
            n_imp: 8,
            near: 0.5,
            far: 4.0,
            ..MapOptimConfig::default()
        };
        let trace = optimize_map(&mut params, std::slice::from_ref(&kf), &cfg).unwrap();
        assert_eq!(trace.len(), 3);
        assert_eq!(params.sdf, before_sdf);
        assert_eq!(params.beta, before_beta);
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        // Gradient of the full step objective w.r.t. random grid parameters.
        // Importance resampling is off: sample placement follows the coarse
        // weights and is not differentiated through, so finite differences
        // only match with fixed sample positions.
        let kf = test_keyframe();
        let params = FieldParams::new(10, 3, 2, 6, SdfInit::Sphere(0.8), 4);
        let cfg = MapOptimConfig {
            rays_per_step: 12,
            n_patches: 1,
            n_pairs: 12,
            n_strat: 16,
            n_imp: 0,
            importance: false,
            near: 0.5,
            far: 4.0,
            ..MapOptimConfig::default()
        };

        let mut grads = FieldGradients::zeros(&params);
        optimize_step(&params, &kf, &cfg, 0, &mut grads).unwrap();

        let loss_of = |p: &FieldParams| -> f64 {
            let mut g = FieldGradients::zeros(p);
            let row = optimize_step(p, &kf, &cfg, 0, &mut g).unwrap();
            row.total
        };

        // Random touched SDF nodes.
        let touched: Vec<usize> = grads
            .sdf
            .iter()
            .enumerate()
            .filter(|(_, g)| g.abs() > 1e-9)
            .map(|(i, _)| i)
            .collect();
        assert!(touched.len() > 20);
        let eps = 1e-4;
        let mut checked = 0;
        for &idx in touched.iter().step_by(touched.len() / 20) {
            let mut hi = params.clone();
            let mut lo = params.clone();
            hi.sdf[idx] += eps;
            lo.sdf[idx] -= eps;
            let fd = (loss_of(&hi) - loss_of(&lo)) / (2.0 * eps);
            let rel = (grads.sdf[idx] - fd).abs() / fd.abs().max(1e-6);
            // Hinge losses have kinks; skip the rare node where the finite
            // difference straddles one.
            if rel > 1e-3 {
                let mid = (loss_of(&hi) + loss_of(&lo)) / 2.0;
                let at = loss_of(&params);
                if (mid - at).abs() > 1e-12 * at.abs() {
                    continue;
                }
            }
            assert!(
                rel <= 1e-3,
                "sdf grad mismatch at {idx}: analytic {} vs fd {fd}",
                grads.sdf[idx]
            );
            checked += 1;
        }
        assert!(checked >= 10, "only {checked} clean gradient checks");
    }

    #[test]
    fn short_run_decreases_loss() {
        let kf = test_keyframe();
        let mut params = FieldParams::new(16, 4, 3, 8, SdfInit::Sphere(0.8), 7);
        let cfg = MapOptimConfig {
            n_steps: 150,
            rays_per_step: 64,
            n_patches: 2,
            n_strat: 12,
            n_imp: 16,
            near: 0.5,
            far: 4.0,
            ..MapOptimConfig::default()
        };
        let trace = optimize_map(&mut params, std::slice::from_ref(&kf), &cfg).unwrap();
        let first: f64 = trace[..10].iter().map(|r| r.total).sum::<f64>() / 10.0;
        let last: f64 = trace[trace.len() - 10..].iter().map(|r| r.total).sum::<f64>() / 10.0;
        assert!(
            last < 0.7 * first,
            "loss did not decrease: first {first}, last {last}"
        );
    }
}
