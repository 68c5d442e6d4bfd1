//! Candidate verification: reprojection inliers over a covisibility window
//! plus temporal persistence across consecutive keyframes.

use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector3;

use super::Sim3;
use crate::geometry::{CameraIntrinsics, Pose};

/// A keyframe as the loop closer sees it: its (possibly drifted) pose
/// estimate and the landmarks it observes, in its own camera frame.
#[derive(Debug, Clone)]
pub struct KeyframeObs {
    pub pose: Pose,
    pub points_cam: BTreeMap<usize, Vector3<f64>>,
}

impl KeyframeObs {
    /// Landmark ids observed by both frames.
    pub fn shared_ids(&self, other: &KeyframeObs) -> Vec<usize> {
        self.points_cam
            .keys()
            .filter(|id| other.points_cam.contains_key(id))
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyConfig {
    /// Keyframes in the local covisibility window around the candidate.
    pub window: usize,
    /// Pixel threshold for a reprojected match to count as an inlier.
    pub inlier_px: f64,
    pub min_inlier_fraction: f64,
    /// Consecutive current keyframes that must agree before acceptance.
    pub required_hits: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            window: 5,
            inlier_px: 3.0,
            min_inlier_fraction: 0.7,
            required_hits: 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOutcome {
    pub inlier_fraction: f64,
    pub geometric_ok: bool,
    /// Geometric and temporal checks both passed.
    pub accepted: bool,
}

/// Stateful verifier: tracks which candidates persisted across consecutive
/// current keyframes.
#[derive(Debug, Default)]
pub struct LoopVerifier {
    pub cfg: VerifyConfig,
    /// candidate -> (last current index that matched, consecutive hits).
    pending: HashMap<usize, (usize, usize)>,
}

impl LoopVerifier {
    pub fn new(cfg: VerifyConfig) -> Self {
        LoopVerifier {
            cfg,
            pending: HashMap::new(),
        }
    }

    /// Verifies `sim3` (mapping current-camera coordinates into the candidate
    /// camera frame) by reprojecting the current keyframe's points into a
    /// window of keyframes covisible with the candidate.
    pub fn verify(
        &mut self,
        candidate: usize,
        current: usize,
        sim3: &Sim3,
        keyframes: &[KeyframeObs],
        intr: &CameraIntrinsics,
    ) -> VerifyOutcome {
        let cand = &keyframes[candidate];
        let cur = &keyframes[current];

        // Local window: the candidate plus its most covisible neighbors
        // (excluding the current keyframe's temporal vicinity).
        let mut ranked: Vec<(usize, usize)> = keyframes
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != current && *k != candidate)
            .map(|(k, kf)| (k, cand.shared_ids(kf).len()))
            .filter(|(_, shared)| *shared > 0)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut window: Vec<usize> = vec![candidate];
        window.extend(ranked.iter().take(self.cfg.window.saturating_sub(1)).map(|(k, _)| *k));

        let mut inliers = 0usize;
        let mut total = 0usize;
        for &wk in &window {
            let kf = &keyframes[wk];
            // Candidate-frame coordinates estimated through the Sim3, then
            // into the window frame through the pose estimates.
            let cand_to_w = cand.pose.relative_to(&kf.pose);
            for id in cur.shared_ids(kf) {
                let p_cur = cur.points_cam[&id];
                let p_cand_est = sim3.apply(&p_cur);
                let p_w = cand_to_w.transform_point(&p_cand_est);
                let (Some(proj), Some(obs)) = (intr.project(&p_w), intr.project(&kf.points_cam[&id]))
                else {
                    continue;
                };
                total += 1;
                if (proj - obs).norm() < self.cfg.inlier_px {
                    inliers += 1;
                }
            }
        }

        let inlier_fraction = if total == 0 {
            0.0
        } else {
            inliers as f64 / total as f64
        };
        let geometric_ok = total >= 3 && inlier_fraction > self.cfg.min_inlier_fraction;

        let hits = if geometric_ok {
            let entry = self.pending.entry(candidate).or_insert((current, 0));
            if current == entry.0 || current == entry.0 + 1 {
                entry.1 += 1;
            } else {
                entry.1 = 1;
            }
            entry.0 = current;
            entry.1
        } else {
            self.pending.remove(&candidate);
            0
        };

        VerifyOutcome {
            inlier_fraction,
            geometric_ok,
            accepted: geometric_ok && hits >= self.cfg.required_hits,
        }
    }
}

/// Builds the per-keyframe landmark observations the loop closer consumes:
/// camera-frame landmark positions from the true geometry, paired with the
/// (possibly drifted) pose estimates.
pub fn build_keyframe_obs(
    scene: &crate::scene_sim::AnalyticScene,
    gt_poses: &[Pose],
    est_poses: &[Pose],
    intr: &CameraIntrinsics,
    landmarks: &[Vector3<f64>],
) -> Vec<KeyframeObs> {
    assert_eq!(gt_poses.len(), est_poses.len());
    gt_poses
        .iter()
        .zip(est_poses)
        .map(|(gt, est)| {
            let visible = crate::scene_sim::visible_landmarks(scene, gt, intr, landmarks);
            let cam_from_world = gt.inverse();
            let points_cam = visible
                .into_iter()
                .map(|id| (id, cam_from_world.transform_point(&landmarks[id])))
                .collect();
            KeyframeObs {
                pose: *est,
                points_cam,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::look_at;
    use crate::loop_closure::{detect_candidates, estimate_sim3_robust, DetectConfig};
    use crate::scene_sim::{
        covisibility, gen_trajectory, sample_surface_landmarks, visible_landmarks, AnalyticScene,
        Primitive, ScenePrimitive, TrajectoryKind,
    };
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene() -> AnalyticScene {
        AnalyticScene::new(vec![
            ScenePrimitive {
                shape: Primitive::Sphere {
                    center: Vector3::new(0.4, 0.1, 0.0),
                    radius: 0.6,
                },
                albedo: [0.8, 0.2, 0.2],
            },
            ScenePrimitive {
                shape: Primitive::Box {
                    center: Vector3::new(-0.7, -0.3, 0.2),
                    half_extents: Vector3::new(0.35, 0.45, 0.4),
                },
                albedo: [0.2, 0.6, 0.8],
            },
        ])
    }

    /// Loop trajectory where the last keyframes revisit the first view.
    fn loop_fixture() -> (Vec<KeyframeObs>, CameraIntrinsics, usize, usize) {
        let scene = scene();
        let intr = CameraIntrinsics::new(60.0, 60.0, 31.5, 31.5, 64, 64);
        let n = 16;
        let gt = gen_trajectory(TrajectoryKind::Loop, n, Vector3::zeros(), 3.0).unwrap();
        let landmarks = sample_surface_landmarks(&scene, 160, 1.6, 5);
        // Drifted estimates: growing translation offset.
        let est: Vec<Pose> = gt
            .iter()
            .enumerate()
            .map(|(k, p)| Pose::new(p.rotation, p.translation + Vector3::new(0.0, 0.0, 0.01 * k as f64)))
            .collect();
        let obs = build_keyframe_obs(&scene, &gt, &est, &intr, &landmarks);
        (obs, intr, n - 1, 0)
    }

    #[test]
    fn true_revisit_is_detected_and_accepted() {
        let (obs, intr, current, expected) = loop_fixture();
        // Covisibility scores against the current keyframe.
        let cur_ids: Vec<usize> = obs[current].points_cam.keys().copied().collect();
        let scores: Vec<f64> = obs
            .iter()
            .map(|kf| {
                let ids: Vec<usize> = kf.points_cam.keys().copied().collect();
                covisibility(&cur_ids, &ids)
            })
            .collect();
        let candidates = detect_candidates(&scores, current, &DetectConfig::default());
        assert!(
            candidates.contains(&expected),
            "candidates {candidates:?} missing frame {expected}"
        );

        let cand = candidates[0];
        let shared = obs[current].shared_ids(&obs[cand]);
        assert!(shared.len() >= 10);
        let src: Vec<Vector3<f64>> = shared.iter().map(|id| obs[current].points_cam[id]).collect();
        let dst: Vec<Vector3<f64>> = shared.iter().map(|id| obs[cand].points_cam[id]).collect();
        let est = estimate_sim3_robust(&src, &dst).unwrap();

        let mut verifier = LoopVerifier::new(VerifyConfig::default());
        // Two consecutive current keyframes agree on the candidate.
        let first = verifier.verify(cand, current - 1, &est.sim3, &obs, &intr);
        assert!(first.geometric_ok);
        assert!(!first.accepted, "needs temporal persistence");
        let second = verifier.verify(cand, current, &est.sim3, &obs, &intr);
        assert!(second.geometric_ok);
        assert!(second.accepted);
        assert!(second.inlier_fraction > 0.7);
    }

    #[test]
    fn unrelated_pair_is_rejected() {
        let (obs, intr, current, _) = loop_fixture();
        // A nonsense Sim3 cannot verify.
        let junk = Sim3::new(
            3.0,
            nalgebra::UnitQuaternion::from_euler_angles(1.0, 0.5, -0.7),
            Vector3::new(2.0, -1.0, 0.5),
        );
        let mut verifier = LoopVerifier::new(VerifyConfig::default());
        let out = verifier.verify(4, current, &junk, &obs, &intr);
        assert!(!out.geometric_ok);
        assert!(!out.accepted);
    }

    #[test]
    fn verification_survives_outlier_matches() {
        let (obs, intr, current, _) = loop_fixture();
        let cand = 0usize;
        let shared = obs[current].shared_ids(&obs[cand]);
        let mut src: Vec<Vector3<f64>> =
            shared.iter().map(|id| obs[current].points_cam[id]).collect();
        let dst: Vec<Vector3<f64>> = shared.iter().map(|id| obs[cand].points_cam[id]).collect();
        // Corrupt 40% of the source points.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n_out = (0.4 * src.len() as f64) as usize;
        for k in 0..n_out {
            src[k] = Vector3::new(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
            );
        }
        let est = estimate_sim3_robust(&src, &dst).unwrap();
        let mut verifier = LoopVerifier::new(VerifyConfig::default());
        verifier.verify(cand, current - 1, &est.sim3, &obs, &intr);
        let out = verifier.verify(cand, current, &est.sim3, &obs, &intr);
        assert!(out.accepted, "inliers {}", out.inlier_fraction);
    }

    #[test]
    fn disjoint_views_have_zero_covisibility() {
        let scene = scene();
        let intr = CameraIntrinsics::new(60.0, 60.0, 31.5, 31.5, 64, 64);
        let landmarks = sample_surface_landmarks(&scene, 100, 1.6, 7);
        let a = look_at(Vector3::new(0.0, -3.0, 0.0), Vector3::zeros());
        // Camera looking away from the scene sees nothing.
        let b = look_at(Vector3::new(0.0, -3.0, 0.0), Vector3::new(0.0, -10.0, 0.0));
        let va = visible_landmarks(&scene, &a, &intr, &landmarks);
        let vb = visible_landmarks(&scene, &b, &intr, &landmarks);
        assert!(!va.is_empty());
        assert!(vb.is_empty());
        assert_eq!(covisibility(&va, &vb), 0.0);
    }
}
