//! Loop-candidate detection over keyframe covisibility scores.

#[derive(Debug, Clone, Copy)]
pub struct DetectConfig {
    /// Keyframes within this index distance of the current one are excluded.
    pub exclusion_window: usize,
    pub max_candidates: usize,
    /// Scores must strictly exceed this to qualify.
    pub min_score: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            exclusion_window: 10,
            max_candidates: 3,
            min_score: 0.0,
        }
    }
}

/// Top candidates by covisibility score, best first. `scores[k]` is the
/// covisibility between keyframe `k` and the current keyframe; an empty
/// result is valid.
pub fn detect_candidates(scores: &[f64], current: usize, cfg: &DetectConfig) -> Vec<usize> {
    let mut eligible: Vec<usize> = (0..scores.len())
        .filter(|&k| k != current)
        .filter(|&k| current.abs_diff(k) > cfg.exclusion_window)
        .filter(|&k| scores[k] > cfg.min_score)
        .collect();
    eligible.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    eligible.truncate(cfg.max_candidates);
    eligible
}
