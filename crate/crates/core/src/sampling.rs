//! Per-ray sample generation: stratified boundaries warped by the
//! inverse-depth map, plus importance resampling from rendered weights.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("near/far must satisfy 0 < near < far, got near={near}, far={far}")]
    BadRange { near: f64, far: f64 },
    #[error("sample parameter s={0} outside [0, 1]")]
    BadParameter(f64),
    #[error("weights must match interval count ({intervals}), got {weights}")]
    WeightCount { intervals: usize, weights: usize },
}

/// Interval boundaries along one ray, stored both as unit-space parameters
/// `s` in [0,1] and as warped metric distances in [near, far].
#[derive(Debug, Clone)]
pub struct RaySamples {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
    pub near: f64,
    pub far: f64,
    /// Strictly increasing, first 0 and last 1.
    pub s_boundaries: Vec<f64>,
    /// The same boundaries pushed through the inverse-depth warp.
    pub boundaries: Vec<f64>,
}

impl RaySamples {
    pub fn interval_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Metric midpoints of the intervals.
    pub fn midpoints(&self) -> Vec<f64> {
        self.boundaries.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Unit-space midpoints and widths, for losses computed in s-space.
    pub fn s_midpoints(&self) -> Vec<f64> {
        self.s_boundaries.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn s_widths(&self) -> Vec<f64> {
        self.s_boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Inverse-depth warp: `s' = 1 / (s/f + (1−s)/n)`. Maps [0,1] onto [n,f] with
/// uniform steps in `s` giving uniform steps in inverse depth.
pub fn inverse_depth_warp(s: f64, near: f64, far: f64) -> Result<f64, SamplingError> {
    if !(near > 0.0 && near < far) {
        return Err(SamplingError::BadRange { near, far });
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(SamplingError::BadParameter(s));
    }
    Ok(1.0 / (s / far + (1.0 - s) / near))
}

/// Inverse of the warp: recovers `s` from a metric distance.
pub fn inverse_depth_unwarp(t: f64, near: f64, far: f64) -> f64 {
    (1.0 / near - 1.0 / t) / (1.0 / near - 1.0 / far)
}

/// Mixes a base seed with a ray id and pass id so each ray gets an
/// independent, order-free random stream (splitmix64 finalizer).
pub fn ray_seed(base: u64, ray_id: u64, pass: u64) -> u64 {
    let mut z = base
        .wrapping_add(ray_id.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(pass.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// `n_strat + 1` boundaries: endpoints pinned at 0 and 1 in s-space, interior
/// grid points jittered within half a cell, then warped to metric distances.
pub fn stratified_samples(
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    near: f64,
    far: f64,
    n_strat: usize,
    seed: u64,
) -> Result<RaySamples, SamplingError> {
    if !(near > 0.0 && near < far) {
        return Err(SamplingError::BadRange { near, far });
    }
    assert!(n_strat >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_strat as f64;
    let mut s_boundaries = Vec::with_capacity(n_strat + 1);
    s_boundaries.push(0.0);
    for i in 1..n_strat {
        let u: f64 = rng.gen();
        s_boundaries.push((i as f64 + (u - 0.5)) / n);
    }
    s_boundaries.push(1.0);
    let boundaries = s_boundaries
        .iter()
        .map(|&s| inverse_depth_warp(s, near, far).expect("s in range"))
        .collect();
    Ok(RaySamples {
        origin,
        dir,
        near,
        far,
        s_boundaries,
        boundaries,
    })
}

/// Draws `n_imp` extra boundaries by inverse-CDF sampling of the
/// piecewise-constant weight histogram in s-space, merges them with the
/// existing boundaries, and re-warps. All-zero weights fall back to a uniform
/// histogram.
pub fn importance_resample(
    samples: &RaySamples,
    weights: &[f64],
    n_imp: usize,
    seed: u64,
) -> Result<RaySamples, SamplingError> {
    let intervals = samples.interval_count();
    if weights.len() != intervals {
        return Err(SamplingError::WeightCount {
            intervals,
            weights: weights.len(),
        });
    }
    assert!(weights.iter().all(|w| *w >= 0.0), "negative weight");

    let total: f64 = weights.iter().sum();
    let uniform = vec![1.0; intervals];
    let (weights, total) = if total > 0.0 {
        (weights.to_vec(), total)
    } else {
        (uniform, intervals as f64)
    };

    // CDF over s-space intervals.
    let mut cdf = Vec::with_capacity(intervals + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cdf.push(acc);
    }
    *cdf.last_mut().unwrap() = 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut merged = samples.s_boundaries.clone();
    for k in 0..n_imp {
        // Stratified u over [0,1): one draw per importance slot.
        let u = (k as f64 + rng.gen::<f64>()) / n_imp as f64;
        // Find the interval containing u and invert the linear CDF piece.
        let idx = match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i.min(intervals - 1),
            Err(i) => i.saturating_sub(1).min(intervals - 1),
        };
        let c0 = cdf[idx];
        let c1 = cdf[idx + 1];
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        let s0 = samples.s_boundaries[idx];
        let s1 = samples.s_boundaries[idx + 1];
        merged.push(s0 + frac * (s1 - s0));
    }
    merged.sort_by(f64::total_cmp);
    merged.dedup();

    let boundaries = merged
        .iter()
        .map(|&s| inverse_depth_warp(s, samples.near, samples.far).expect("s in range"))
        .collect();
    Ok(RaySamples {
        origin: samples.origin,
        dir: samples.dir,
        near: samples.near,
        far: samples.far,
        s_boundaries: merged,
        boundaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_ray() -> (Vector3<f64>, Vector3<f64>) {
        (Vector3::zeros(), Vector3::z())
    }

    #[test]
    fn warp_endpoints_and_midpoint() {
        assert_relative_eq!(inverse_depth_warp(0.0, 2.0, 6.0).unwrap(), 2.0);
        assert_relative_eq!(inverse_depth_warp(1.0, 2.0, 6.0).unwrap(), 6.0);
        // Harmonic mean: 1/s' = 0.5/2 + 0.5/6 = 1/3.
        assert_relative_eq!(inverse_depth_warp(0.5, 2.0, 6.0).unwrap(), 3.0, epsilon = 1e-12);
        assert!(inverse_depth_warp(0.5, 6.0, 2.0).is_err());
        assert!(inverse_depth_warp(1.5, 1.0, 2.0).is_err());
    }

    #[test]
    fn warp_is_monotone_and_affine_in_inverse_depth() {
        let (near, far) = (0.7, 23.0);
        let mut prev = 0.0;
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            let t = inverse_depth_warp(s, near, far).unwrap();
            assert!(t >= prev);
            prev = t;
            // 1/s'(s) is affine in s.
            let expected_inv = s / far + (1.0 - s) / near;
            assert_relative_eq!(1.0 / t, expected_inv, epsilon = 1e-12);
            // Round trip through the unwarp.
            assert_relative_eq!(inverse_depth_unwarp(t, near, far), s, epsilon = 1e-9);
        }
    }

    #[test]
    fn stratified_is_deterministic_and_pinned() {
        let (o, d) = unit_ray();
        let a = stratified_samples(o, d, 1.0, 10.0, 20, 99).unwrap();
        let b = stratified_samples(o, d, 1.0, 10.0, 20, 99).unwrap();
        assert_eq!(a.boundaries, b.boundaries);
        assert_eq!(a.boundaries.len(), 21);
        assert_relative_eq!(a.boundaries[0], 1.0);
        assert_relative_eq!(a.boundaries[20], 10.0);
        for w in a.s_boundaries.windows(2) {
            assert!(w[1] > w[0]);
        }

        let single = stratified_samples(o, d, 1.0, 10.0, 1, 3).unwrap();
        assert_eq!(single.boundaries, vec![1.0, 10.0]);
    }

    #[test]
    fn stratified_midpoints_average_one_half() {
        let (o, d) = unit_ray();
        let mut sum = 0.0;
        let mut count = 0usize;
        for seed in 0..2500u64 {
            let s = stratified_samples(o, d, 1.0, 10.0, 40, seed).unwrap();
            for m in s.s_midpoints() {
                sum += m;
                count += 1;
            }
        }
        assert!(count >= 100_000);
        let mean = sum / count as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn importance_concentrates_on_heavy_interval() {
        let (o, d) = unit_ray();
        let base = stratified_samples(o, d, 1.0, 10.0, 4, 7).unwrap();
        let mut weights = vec![0.0; 4];
        weights[2] = 5.0;
        let re = importance_resample(&base, &weights, 16, 11).unwrap();
        let lo = base.s_boundaries[2];
        let hi = base.s_boundaries[3];
        let new: Vec<f64> = re
            .s_boundaries
            .iter()
            .copied()
            .filter(|s| !base.s_boundaries.contains(s))
            .collect();
        assert_eq!(new.len(), 16);
        for s in new {
            assert!(s >= lo && s <= hi, "sample {s} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn importance_uniform_weights_match_uniform_cdf() {
        let (o, d) = unit_ray();
        let base = stratified_samples(o, d, 1.0, 10.0, 10, 5).unwrap();
        let weights = vec![1.0; 10];
        let mut draws = Vec::new();
        for seed in 0..1000u64 {
            let re = importance_resample(&base, &weights, 100, seed).unwrap();
            for s in re.s_boundaries {
                if !base.s_boundaries.contains(&s) {
                    draws.push(s);
                }
            }
        }
        assert!(draws.len() >= 99_000);
        draws.sort_by(f64::total_cmp);
        // Kolmogorov-Smirnov statistic against the uniform CDF on [0,1].
        // Draws land in s-intervals proportionally, but the base grid is
        // jittered, so compare against the piecewise-linear true CDF.
        let true_cdf = |s: f64| -> f64 {
            let bs = &base.s_boundaries;
            for i in 0..10 {
                if s <= bs[i + 1] {
                    return (i as f64 + (s - bs[i]) / (bs[i + 1] - bs[i])) / 10.0;
                }
            }
            1.0
        };
        let n = draws.len() as f64;
        let mut ks = 0f64;
        for (i, s) in draws.iter().enumerate() {
            let emp = (i + 1) as f64 / n;
            ks = ks.max((emp - true_cdf(*s)).abs());
        }
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn importance_proportions_follow_weights() {
        let (o, d) = unit_ray();
        // Two equal s-intervals with weights 1:3.
        let base = RaySamples {
            origin: o,
            dir: d,
            near: 1.0,
            far: 10.0,
            s_boundaries: vec![0.0, 0.5, 1.0],
            boundaries: vec![
                inverse_depth_warp(0.0, 1.0, 10.0).unwrap(),
                inverse_depth_warp(0.5, 1.0, 10.0).unwrap(),
                inverse_depth_warp(1.0, 1.0, 10.0).unwrap(),
            ],
        };
        let mut in_second = 0usize;
        let mut total = 0usize;
        for seed in 0..1000u64 {
            let re = importance_resample(&base, &[1.0, 3.0], 100, seed).unwrap();
            for s in re.s_boundaries {
                if s != 0.0 && s != 0.5 && s != 1.0 {
                    total += 1;
                    if s > 0.5 {
                        in_second += 1;
                    }
                }
            }
        }
        assert!(total >= 99_000);
        let frac = in_second as f64 / total as f64;
        assert!((frac - 0.75).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let (o, d) = unit_ray();
        let base = stratified_samples(o, d, 1.0, 10.0, 8, 13).unwrap();
        let re = importance_resample(&base, &vec![0.0; 8], 32, 17).unwrap();
        assert_eq!(re.boundaries.len(), base.boundaries.len() + 32);
        for w in re.boundaries.windows(2) {
            assert!(w[1] > w[0]);
            assert!(w[0] >= 1.0 && w[1] <= 10.0);
        }
        assert!(importance_resample(&base, &[1.0; 3], 4, 0).is_err());
    }
}
