//! Two-frame grasp candidate ranking: a thresholded tilt penalty times a
//! temporal-consistency term.

use serde::{Deserialize, Serialize};

use crate::geometry::EEPose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    pub pose: EEPose,
    pub confidence: f64,
    pub frame_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspScoreConfig {
    /// Tilt from straight down tolerated without penalty (radians).
    pub tilt_tolerance: f64,
    /// Exponential decay rate beyond the tolerance (1/rad).
    pub tilt_decay: f64,
    pub match_translation_tol: f64,
    pub match_rotation_tol: f64,
    pub consistency_sigma: f64,
}

impl Default for GraspScoreConfig {
    fn default() -> Self {
        Self {
            tilt_tolerance: 15f64.to_radians(),
            tilt_decay: 5.0,
            match_translation_tol: 0.02,
            match_rotation_tol: 10f64.to_radians(),
            consistency_sigma: 0.02,
        }
    }
}

/// Weight of the angular part of the matching distance (metres per radian).
pub const ANGLE_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    /// Index into the current frame's list.
    pub current: usize,
    /// Index into the previous frame's list.
    pub previous: usize,
    pub score: f64,
}

/// Angle between the approach axis and straight down.
pub fn tilt(g: &GraspCandidate) -> f64 {
    (-g.pose.approach_dir().z).clamp(-1.0, 1.0).acos()
}

pub fn tilt_penalty(g: &GraspCandidate, cfg: &GraspScoreConfig) -> f64 {
    let d = tilt(g);
    if d <= cfg.tilt_tolerance {
        1.0
    } else {
        (-cfg.tilt_decay * (d - cfg.tilt_tolerance)).exp()
    }
}

fn approach_angle(a: &EEPose, b: &EEPose) -> f64 {
    a.approach_dir().dot(&b.approach_dir()).clamp(-1.0, 1.0).acos()
}

/// Greedy global nearest-neighbour matching of `frame_t` against
/// `frame_prev`, keeping pairs within the translation and rotation
/// tolerances, ranked by score (ties by current-frame order).
pub fn match_and_score(frame_t: &[GraspCandidate], frame_prev: &[GraspCandidate], cfg: &GraspScoreConfig) -> Vec<ScoredPair> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(frame_t.len() * frame_prev.len());
    for (i, g) in frame_t.iter().enumerate() {
        for (j, h) in frame_prev.iter().enumerate() {
            let d = g.pose.position.distance(&h.pose.position) + ANGLE_WEIGHT * approach_angle(&g.pose, &h.pose);
            pairs.push((d, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; frame_t.len()];
    let mut used_p = vec![false; frame_prev.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if used_t[i] || used_p[j] {
            continue;
        }
        used_t[i] = true;
        used_p[j] = true;
        let (g, h) = (&frame_t[i], &frame_prev[j]);
        let dp = g.pose.position.distance(&h.pose.position);
        if dp > cfg.match_translation_tol || approach_angle(&g.pose, &h.pose) > cfg.match_rotation_tol {
            continue;
        }
        let r = g.confidence * (-dp / cfg.consistency_sigma).exp();
        out.push(ScoredPair { current: i, previous: j, score: tilt_penalty(g, cfg) * r });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.current.cmp(&b.current)));
    out
}
