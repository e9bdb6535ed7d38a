//! Offline workspace characterization: manipulability scoring by repeated IK,
//! grid sampling of the arm workspace, and the dual-ellipsoid shell fit.

mod arm;
mod mvee;
mod shell;

use std::sync::OnceLock;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use arm::{solve_ik, ArmFrames, ArmModel, JointVector, IK_ANGLE_TOL, IK_POSITION_TOL};
pub use mvee::{affinely_full, hull_candidates, in_convex_hull, mvee};
pub use shell::{DualEllipsoidShell, Ellipsoid};

use crate::error::ShellError;
use crate::geometry::{EEPose, Frame, Point3, PointCloud, RngSeed};

/// Minimum number of high-manipulability samples `fit_shell` accepts.
pub const MIN_HIGH_SAMPLES: usize = 10;
/// Radius of the fallback inner sphere placed at the mount.
pub const FALLBACK_INNER_RADIUS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellFitConfig {
    pub mu_threshold: f64,
    pub ik_trials_per_pose: usize,
    pub sample_grid_resolution: f64,
    pub mvee_tolerance: f64,
}

impl Default for ShellFitConfig {
    fn default() -> Self {
        Self { mu_threshold: 0.5, ik_trials_per_pose: 20, sample_grid_resolution: 0.05, mvee_tolerance: 1e-3 }
    }
}

impl ShellFitConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.mu_threshold > 0.0 && self.mu_threshold < 1.0) {
            return Err("mu_threshold must lie in (0, 1)".into());
        }
        if self.ik_trials_per_pose == 0 {
            return Err("ik_trials_per_pose must be at least 1".into());
        }
        if !(self.sample_grid_resolution > 0.0) {
            return Err("sample_grid_resolution must be positive".into());
        }
        if !(self.mvee_tolerance > 0.0) {
            return Err("mvee_tolerance must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachabilitySample {
    pub pose: EEPose,
    pub mu: f64,
    pub trials: usize,
    pub successes: usize,
}

impl ReachabilitySample {
    pub fn new(pose: EEPose, trials: usize, successes: usize) -> Self {
        assert!(trials >= 1 && successes <= trials);
        Self { pose, mu: successes as f64 / trials as f64, trials, successes }
    }
}

/// Downward tilts cycled across IK trials while sampling the workspace.
pub const APPROACH_TILTS: [f64; 3] = [0.0, std::f64::consts::FRAC_PI_6, std::f64::consts::FRAC_PI_3];

/// Fraction of seeded IK trials that converge and clear `obstacles` (base
/// frame). Trial `k` runs a single restart seeded with `seed.derive(k)`.
pub fn manipulability_score(
    arm: &ArmModel,
    pose: &EEPose,
    obstacles: &PointCloud,
    cfg: &ShellFitConfig,
    seed: RngSeed,
) -> ReachabilitySample {
    score_family(arm, pose.position, &[*pose], obstacles, cfg, seed)
}

fn score_family(
    arm: &ArmModel,
    position: Point3,
    family: &[EEPose],
    obstacles: &PointCloud,
    cfg: &ShellFitConfig,
    seed: RngSeed,
) -> ReachabilitySample {
    let trials = cfg.ik_trials_per_pose.max(1);
    let successes = (0..trials)
        .filter(|&k| {
            let target = &family[k % family.len()];
            solve_ik(arm, target, seed.derive(k as u64), 1)
                .is_some_and(|q| arm.collision_free(&q, obstacles))
        })
        .count();
    let mut pose = family[0];
    pose.position = position;
    ReachabilitySample::new(pose, trials, successes)
}

/// Approach family for a workspace point: outward from the mount, one pose
/// per tilt in [`APPROACH_TILTS`].
pub fn approach_family(arm: &ArmModel, position: Point3) -> Vec<EEPose> {
    let m = arm.mount_offset;
    let (dx, dy) = (position.x - m.x, position.y - m.y);
    let azimuth = if dx.hypot(dy) > 1e-9 { dy.atan2(dx) } else { 0.0 };
    APPROACH_TILTS.iter().map(|t| EEPose::tilted(position, azimuth, *t)).collect()
}

/// Cells per axis of the sampling grid covering the reach cube.
pub fn grid_cells_per_axis(arm: &ArmModel, resolution: f64) -> usize {
    let extent = 2.0 * arm.reach();
    ((extent / resolution) - 1e-9).ceil().max(1.0) as usize
}

/// Scores the center of every cell of a regular grid over the cube of
/// half-width `reach` around the mount. Output is ordered by cell index.
pub fn sample_workspace(arm: &ArmModel, cfg: &ShellFitConfig, seed: RngSeed) -> Vec<ReachabilitySample> {
    let res = cfg.sample_grid_resolution;
    let n = grid_cells_per_axis(arm, res);
    let m = arm.mount_offset;
    let r = arm.reach();
    let empty = PointCloud::empty(Frame::Base);
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let p = Point3::new(
                    m.x - r + (i as f64 + 0.5) * res,
                    m.y - r + (j as f64 + 0.5) * res,
                    m.z - r + (k as f64 + 0.5) * res,
                );
                let index = ((i * n + j) * n + k) as u64;
                let family = approach_family(arm, p);
                out.push(score_family(arm, p, &family, &empty, cfg, seed.derive(index)));
            }
        }
    }
    out
}

/// Fits the dual-ellipsoid shell. The outer ellipsoid is the MVEE of all
/// samples with `mu >= mu_threshold`; the inner one is the MVEE of low-mu
/// samples lying strictly inside the outer ellipsoid and inside the convex
/// hull of the high-mu set, shrunk about its center until every high-mu
/// sample lies on or outside it. Too few such points (or a flat set) yields a
/// 1 cm sphere at `mount`.
pub fn fit_shell(
    samples: &[ReachabilitySample],
    cfg: &ShellFitConfig,
    mount: Point3,
) -> Result<DualEllipsoidShell, ShellError> {
    let mut sorted: Vec<(Vector3<f64>, f64)> = samples.iter().map(|s| (s.pose.position.to_vector(), s.mu)).collect();
    sorted.sort_by(|a, b| {
        a.0.x
            .total_cmp(&b.0.x)
            .then(a.0.y.total_cmp(&b.0.y))
            .then(a.0.z.total_cmp(&b.0.z))
            .then(a.1.total_cmp(&b.1))
    });
    let (high, low): (Vec<_>, Vec<_>) = sorted.into_iter().partition(|(_, mu)| *mu >= cfg.mu_threshold);
    let high: Vec<Vector3<f64>> = high.into_iter().map(|(p, _)| p).collect();
    if high.len() < MIN_HIGH_SAMPLES {
        return Err(ShellError::TooConstrained { found: high.len(), needed: MIN_HIGH_SAMPLES });
    }
    // The MVEE only depends on hull vertices, so fit on the candidates.
    let hull = hull_candidates(&high);
    let outer = mvee(&hull, cfg.mvee_tolerance).ok_or(ShellError::Degenerate)?;

    let scale = high.iter().map(|p| (p - high[0]).norm()).fold(0.0, f64::max);
    let dead: Vec<Vector3<f64>> = low
        .into_iter()
        .map(|(p, _)| p)
        .filter(|p| outer.distance(&Point3::from_vector(p)) < 1.0)
        .filter(|p| in_convex_hull(&hull, p, 1e-9 * scale.max(1.0)))
        .collect();
    // Shrink the dead-zone ellipsoid until no high-mu sample lies inside it.
    let inner = mvee(&hull_candidates(&dead), cfg.mvee_tolerance)
        .and_then(|e| {
            let nearest = high.iter().map(|p| e.distance(&Point3::from_vector(p))).fold(f64::INFINITY, f64::min);
            if nearest < 1.0 { Ellipsoid::new(e.center(), e.shape() / nearest.max(1e-12)).ok() } else { Some(e) }
        })
        .filter(|e| e.semi_axes()[0] >= FALLBACK_INNER_RADIUS && outer.distance(&e.center()) < 1.0);
    let inner = match inner {
        Some(e) => e,
        None => Ellipsoid::sphere(mount, FALLBACK_INNER_RADIUS)?,
    };
    DualEllipsoidShell::new(outer, inner)
}

/// Everything a shell fit depends on; every field falls back to its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShellFitParams {
    pub arm: ArmModel,
    pub fit: ShellFitConfig,
    pub seed: u64,
}

impl Default for ShellFitParams {
    fn default() -> Self {
        Self { arm: ArmModel::default(), fit: ShellFitConfig::default(), seed: 0x5EED_5E11 }
    }
}

impl ShellFitParams {
    /// Samples the workspace and fits the shell.
    pub fn run(&self) -> Result<DualEllipsoidShell, ShellError> {
        self.arm.validate().map_err(ShellError::Config)?;
        self.fit.validate().map_err(ShellError::Config)?;
        let samples = sample_workspace(&self.arm, &self.fit, RngSeed(self.seed));
        fit_shell(&samples, &self.fit, self.arm.mount_offset)
    }
}

/// Shell fitted once per process for the default arm and configuration.
pub fn default_shell() -> &'static DualEllipsoidShell {
    static SHELL: OnceLock<DualEllipsoidShell> = OnceLock::new();
    SHELL.get_or_init(|| ShellFitParams::default().run().expect("default arm has a well-posed shell"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_pose_scores_zero() {
        let arm = ArmModel::default();
        let m = arm.mount_offset;
        let pose = EEPose::tilted(Point3::new(m.x + 1.0, m.y, m.z), 0.0, 0.0);
        let s = manipulability_score(&arm, &pose, &PointCloud::empty(Frame::Base), &ShellFitConfig::default(), RngSeed(1));
        assert_eq!(s.mu, 0.0);
        assert_eq!(s.trials, 20);
    }

    #[test]
    fn obstacle_free_score_matches_independent_ik_reruns() {
        let arm = ArmModel::default();
        let m = arm.mount_offset;
        let pose = EEPose::tilted(Point3::new(m.x + 0.45, m.y + 0.1, m.z - 0.1), 0.2, 0.5);
        let cfg = ShellFitConfig::default();
        let seed = RngSeed(99);
        let empty = PointCloud::empty(Frame::Base);
        let s = manipulability_score(&arm, &pose, &empty, &cfg, seed);
        let rerun = (0..20)
            .filter(|k| solve_ik(&arm, &pose, seed.derive(*k), 1).is_some_and(|q| arm.collision_free(&q, &empty)))
            .count();
        assert_eq!(s.successes, rerun);
        assert_eq!(s.mu, rerun as f64 / 20.0);
        assert!(s.mu > 0.0);
        assert_eq!(s, manipulability_score(&arm, &pose, &empty, &cfg, seed));
    }

    #[test]
    fn dense_wall_blocks_every_configuration() {
        let arm = ArmModel::default();
        let m = arm.mount_offset;
        let pose = EEPose::tilted(Point3::new(m.x + 0.45, m.y, m.z - 0.1), 0.0, 0.5);
        // A wall of points in the plane x = mount + 0.2 cutting every path to the target.
        let mut pts = Vec::new();
        for iy in -20..=20 {
            for iz in -20..=20 {
                pts.push(Point3::new(m.x + 0.2, m.y + iy as f64 * 0.05, m.z + iz as f64 * 0.05));
            }
        }
        let s = manipulability_score(&arm, &pose, &PointCloud::new(pts, Frame::Base), &ShellFitConfig::default(), RngSeed(4));
        assert_eq!(s.mu, 0.0);
    }

    #[test]
    fn coarse_grid_is_degenerate_but_valid() {
        let arm = ArmModel::default();
        let cfg = ShellFitConfig { sample_grid_resolution: 2.0 * arm.reach(), ..ShellFitConfig::default() };
        let samples = sample_workspace(&arm, &cfg, RngSeed(1));
        assert!((1..=8).contains(&samples.len()));
    }

    #[test]
    fn too_few_high_samples_is_an_error() {
        let samples: Vec<ReachabilitySample> = (0..9)
            .map(|i| ReachabilitySample::new(EEPose::tilted(Point3::new(i as f64, (i * i) as f64, (i % 3) as f64), 0.0, 0.0), 4, 4))
            .collect();
        let err = fit_shell(&samples, &ShellFitConfig::default(), Point3::ORIGIN).unwrap_err();
        assert!(matches!(err, ShellError::TooConstrained { found: 9, .. }));
    }

    #[test]
    fn identical_points_are_degenerate() {
        let samples: Vec<ReachabilitySample> = (0..50)
            .map(|i| {
                let j = i as f64 * 1e-6 / 50.0;
                ReachabilitySample::new(EEPose::tilted(Point3::new(0.3 + j, 0.1 - j, 0.2 + j), 0.0, 0.0), 4, 4)
            })
            .collect();
        let err = fit_shell(&samples, &ShellFitConfig::default(), Point3::ORIGIN).unwrap_err();
        assert!(matches!(err, ShellError::Degenerate));
    }
}
