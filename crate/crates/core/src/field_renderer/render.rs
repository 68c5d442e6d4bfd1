//! Volume rendering over ray samples: occupancy from SDF through a logistic,
//! transmittance-weighted color/depth accumulation, and a hand-rolled
//! reverse-mode pass that backpropagates ray losses into the voxel grids, the
//! decoder, and the logistic scale.

use nalgebra::Vector3;

use super::params::{FieldParams, TriLerp};
use crate::cone_encoding::{
    contract_gaussian, contract_point, frustum_moments, integrated_encoding, lift_to_world,
};
use crate::sampling::RaySamples;

/// Rendered quantities for one ray.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: [f64; 3],
    pub depth: f64,
    pub weights: Vec<f64>,
    pub occupancies: Vec<f64>,
}

/// Logistic occupancy: 1 inside (very negative SDF), 0 outside, 1/2 at the
/// surface.
#[inline]
pub fn sdf_to_occupancy(sdf: f64, beta: f64) -> f64 {
    assert!(beta > 0.0);
    super::params::sigmoid(-sdf / beta)
}

/// Transmittance-weighted accumulation: `w_i = o_i ∏_{j<i} (1−o_j)`,
/// `Ĉ = Σ w_i c_i`, `D̂ = Σ w_i d_i`.
pub fn render_ray(occupancies: &[f64], colors: &[[f64; 3]], depths: &[f64]) -> RenderOutput {
    assert_eq!(occupancies.len(), colors.len());
    assert_eq!(occupancies.len(), depths.len());
    let mut weights = Vec::with_capacity(occupancies.len());
    let mut transmittance = 1.0;
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    for i in 0..occupancies.len() {
        let o = occupancies[i];
        debug_assert!((0.0..=1.0).contains(&o));
        let w = o * transmittance;
        weights.push(w);
        for c in 0..3 {
            color[c] += w * colors[i][c];
        }
        depth += w * depths[i];
        transmittance *= 1.0 - o;
    }
    RenderOutput {
        color,
        depth,
        weights,
        occupancies: occupancies.to_vec(),
    }
}

/// Per-ray forward record: everything the backward pass needs, in flat
/// buffers indexed by sample.
pub struct RayTape {
    pub n: usize,
    /// Gaussian mean distance along the ray per interval (the rendered d_i).
    pub depths: Vec<f64>,
    /// Contracted-space Gaussian means (the Eikonal probes).
    pub positions: Vec<Vector3<f64>>,
    pub lerps: Vec<TriLerp>,
    pub sdf: Vec<f64>,
    /// o_i and the stably-computed 1−o_i.
    pub occ: Vec<f64>,
    pub one_minus_occ: Vec<f64>,
    pub weights: Vec<f64>,
    /// Decoder inputs, [n][input_dim].
    pub inputs: Vec<f64>,
    /// Hidden activations, [n][hidden_dim].
    pub hidden: Vec<f64>,
    /// Per-sample colors, [n][3].
    pub colors: Vec<f64>,
    pub out_color: [f64; 3],
    pub out_depth: f64,
    /// Unit-space interval midpoints and widths for the distortion loss.
    pub s_mids: Vec<f64>,
    pub s_widths: Vec<f64>,
}

/// Accumulated parameter gradients.
pub struct FieldGradients {
    pub sdf: Vec<f64>,
    pub color: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub beta: f64,
}

impl FieldGradients {
    pub fn zeros(params: &FieldParams) -> Self {
        FieldGradients {
            sdf: vec![0.0; params.sdf.len()],
            color: vec![0.0; params.color.len()],
            w1: vec![0.0; params.decoder.w1.len()],
            b1: vec![0.0; params.decoder.b1.len()],
            w2: vec![0.0; params.decoder.w2.len()],
            b2: vec![0.0; params.decoder.b2.len()],
            beta: 0.0,
        }
    }

    pub fn clear(&mut self) {
        self.sdf.fill(0.0);
        self.color.fill(0.0);
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
        self.b2.fill(0.0);
        self.beta = 0.0;
    }
}

/// Coarse occupancy-only weights used to drive importance resampling; queries
/// the SDF at contracted interval midpoints without building a tape.
pub fn coarse_weights(params: &FieldParams, samples: &RaySamples) -> Vec<f64> {
    let mids = samples.midpoints();
    let mut occ = Vec::with_capacity(mids.len());
    for t in mids {
        let p = contract_point(&(samples.origin + t * samples.dir));
        let sdf = params.sdf_at(&p);
        occ.push(sdf_to_occupancy(sdf, params.beta));
    }
    let mut weights = Vec::with_capacity(occ.len());
    let mut trans = 1.0;
    for o in occ {
        weights.push(o * trans);
        trans *= 1.0 - o;
    }
    weights
}

/// Full differentiable forward pass over one ray's intervals.
pub fn forward_ray(params: &FieldParams, samples: &RaySamples, cone_radius: f64) -> RayTape {
    let n = samples.interval_count();
    let in_dim = params.decoder.input_dim;
    let hid = params.decoder.hidden_dim;
    let fdim = params.feature_dim;

    let mut tape = RayTape {
        n,
        depths: Vec::with_capacity(n),
        positions: Vec::with_capacity(n),
        lerps: Vec::with_capacity(n),
        sdf: Vec::with_capacity(n),
        occ: Vec::with_capacity(n),
        one_minus_occ: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        inputs: vec![0.0; n * in_dim],
        hidden: vec![0.0; n * hid],
        colors: vec![0.0; n * 3],
        out_color: [0.0; 3],
        out_depth: 0.0,
        s_mids: samples.s_midpoints(),
        s_widths: samples.s_widths(),
    };

    let mut transmittance = 1.0;
    for i in 0..n {
        let t0 = samples.boundaries[i];
        let t1 = samples.boundaries[i + 1];
        let m = frustum_moments(t0, t1, cone_radius).expect("valid interval");
        let world = lift_to_world(&samples.origin, &samples.dir, &m).expect("unit dir");
        let contracted = contract_gaussian(&world);

        let tl = params.trilerp(&contracted.region.mean);
        let sdf = params.sdf_value(&tl);
        let ratio = sdf / params.beta;
        let occ = super::params::sigmoid(-ratio);
        let one_minus = super::params::sigmoid(ratio);

        let input = &mut tape.inputs[i * in_dim..(i + 1) * in_dim];
        params.color_feature(&tl, &mut input[..fdim]);
        let enc = integrated_encoding(&contracted.region, params.n_bands);
        input[fdim..].copy_from_slice(&enc);
        let hidden = &mut tape.hidden[i * hid..(i + 1) * hid];
        let color = params.decoder.forward(input, hidden);

        let w = occ * transmittance;
        transmittance *= one_minus;

        for c in 0..3 {
            tape.out_color[c] += w * color[c];
            tape.colors[i * 3 + c] = color[c];
        }
        tape.out_depth += w * m.mu_t;
        tape.depths.push(m.mu_t);
        tape.positions.push(contracted.region.mean);
        tape.lerps.push(tl);
        tape.sdf.push(sdf);
        tape.occ.push(occ);
        tape.one_minus_occ.push(one_minus);
        tape.weights.push(w);
    }
    tape
}

/// Reverse pass for one ray. `d_color`, `d_depth`, `d_weights`, and `d_phi`
/// are the loss adjoints w.r.t. the tape outputs; gradients accumulate into
/// `grads` in a caller-defined order, keeping reductions deterministic.
pub fn backward_ray(
    params: &FieldParams,
    tape: &RayTape,
    d_color: &[f64; 3],
    d_depth: f64,
    d_weights: &[f64],
    d_phi: &[f64],
    grads: &mut FieldGradients,
) {
    let n = tape.n;
    if n == 0 {
        return;
    }
    let in_dim = params.decoder.input_dim;
    let hid = params.decoder.hidden_dim;
    let fdim = params.feature_dim;

    // Total adjoint on each weight: explicit d_weights plus the color and
    // depth accumulation paths.
    let mut g_w = vec![0.0; n];
    for i in 0..n {
        let mut g = if d_weights.is_empty() { 0.0 } else { d_weights[i] };
        for c in 0..3 {
            g += d_color[c] * tape.colors[i * 3 + c];
        }
        g += d_depth * tape.depths[i];
        g_w[i] = g;
    }

    // w_i = o_i T_i with T_i = ∏_{j<i}(1−o_j):
    //   dL/do_k = g_k T_k − (Σ_{i>k} g_i w_i) / (1−o_k).
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + g_w[i] * tape.weights[i];
    }
    let mut d_input = vec![0.0; in_dim];
    for i in 0..n {
        let t_i = if tape.occ[i] > 0.0 {
            tape.weights[i] / tape.occ[i]
        } else {
            // Transmittance reconstructed when o_i underflowed.
            let mut t = 1.0;
            for j in 0..i {
                t *= tape.one_minus_occ[j];
            }
            t
        };
        let d_occ = g_w[i] * t_i - suffix[i + 1] / tape.one_minus_occ[i];

        // Occupancy backward: o = σ(−s/β).
        let o = tape.occ[i];
        let om = tape.one_minus_occ[i];
        let sig_prime = o * om;
        let d_sdf = d_occ * (-sig_prime / params.beta) + d_phi.get(i).copied().unwrap_or(0.0);
        grads.beta += d_occ * sig_prime * tape.sdf[i] / (params.beta * params.beta);

        let tl = &tape.lerps[i];
        for c in 0..8 {
            grads.sdf[tl.corners[c]] += d_sdf * tl.weights[c];
        }

        // Color path through the decoder.
        let w = tape.weights[i];
        let d_out = [d_color[0] * w, d_color[1] * w, d_color[2] * w];
        if d_out.iter().any(|v| *v != 0.0) {
            let input = &tape.inputs[i * in_dim..(i + 1) * in_dim];
            let hidden = &tape.hidden[i * hid..(i + 1) * hid];
            let color = [
                tape.colors[i * 3],
                tape.colors[i * 3 + 1],
                tape.colors[i * 3 + 2],
            ];
            d_input.fill(0.0);
            params.decoder.backward(
                input,
                hidden,
                &color,
                &d_out,
                &mut grads.w1,
                &mut grads.b1,
                &mut grads.w2,
                &mut grads.b2,
                &mut d_input,
            );
            for c in 0..8 {
                let wgt = tl.weights[c];
                let base = tl.corners[c] * fdim;
                for f in 0..fdim {
                    grads.color[base + f] += wgt * d_input[f];
                }
            }
        }
    }
}
