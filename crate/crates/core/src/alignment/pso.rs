use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{chassis_distance, objective, shell_intrusion, shell_violation, softplus, AlignmentObjectiveConfig, AlignmentResult, ChassisModel, INFEASIBLE_PENALTY};
use crate::geometry::{se2_inverse_transform, BasePose, EEPose, PointCloud, RngSeed};
use crate::reachability::DualEllipsoidShell;

const FACING_JITTER: f64 = PI / 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsoStage {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub coarse: PsoStage,
    pub fine: PsoStage,
    /// Annulus around the target's planar position searched by the coarse stage.
    pub r_min: f64,
    pub r_max: f64,
    /// Fraction of the coarse search extent kept around the coarse optimum.
    pub fine_stage_shrink: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        let stage = |particles, iterations| PsoStage { particles, iterations, inertia: 0.72, cognitive: 1.49, social: 1.49 };
        Self { coarse: stage(64, 40), fine: stage(32, 30), r_min: 0.25, r_max: 1.2, fine_stage_shrink: 0.25 }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<(), String> {
        for s in [&self.coarse, &self.fine] {
            if s.particles < 4 || s.iterations < 1 {
                return Err("each PSO stage needs at least 4 particles and 1 iteration".into());
            }
            if !(s.inertia > 0.0 && s.inertia < 1.0) {
                return Err("PSO inertia must lie in (0, 1)".into());
            }
        }
        if !(self.r_min >= 0.0 && self.r_min < self.r_max) {
            return Err("search annulus needs 0 <= r_min < r_max".into());
        }
        if !(self.fine_stage_shrink > 0.0 && self.fine_stage_shrink <= 1.0) {
            return Err("fine_stage_shrink must lie in (0, 1]".into());
        }
        Ok(())
    }
}

/// Allocation-free objective over a fixed scene.
struct Scene<'a> {
    target: &'a EEPose,
    shell: &'a DualEllipsoidShell,
    cloud: &'a PointCloud,
    chassis: &'a ChassisModel,
    cfg: &'a AlignmentObjectiveConfig,
    approach: Option<(f64, f64)>,
}

impl Scene<'_> {
    fn penalized(&self, pose: &BasePose) -> f64 {
        let (s, c) = pose.theta.sin_cos();
        let j_align = self.approach.map_or(0.0, |(ax, ay)| (1.0 - (c * ax + s * ay)).clamp(0.0, 2.0));
        let mut shell_sum = 0.0;
        let mut chassis_sum = 0.0;
        let mut penetration: f64 = 0.0;
        let reach = self.chassis.radius + self.cfg.delta;
        for p in &self.cloud.points {
            let q = se2_inverse_transform(pose, p);
            shell_sum += shell_intrusion(self.shell, &q, self.cfg.alpha);
            let d = chassis_distance(self.chassis, &q);
            chassis_sum += softplus(reach - d, self.cfg.softplus_beta);
            penetration = penetration.max(self.chassis.radius - d);
        }
        let n = self.cloud.len().max(1) as f64;
        let j = self.cfg.w_a * j_align + self.cfg.w_s * shell_sum / n + self.cfg.w_c * chassis_sum / n;
        let violation = shell_violation(self.shell, &se2_inverse_transform(pose, &self.target.position)) + penetration;
        if violation == 0.0 {
            j
        } else {
            j + INFEASIBLE_PENALTY + violation
        }
    }
}

#[derive(Clone, Copy)]
struct Particle {
    x: [f64; 3],
    v: [f64; 3],
    best: [f64; 3],
    best_f: f64,
}

/// Region a stage samples from and projects onto: planar disk/annulus
/// around `center` plus a heading window.
struct Region {
    center: [f64; 2],
    r_min: f64,
    r_max: f64,
    heading: f64,
    heading_half: f64,
    /// Hard annulus around the target every candidate must respect.
    target: [f64; 2],
    t_min: f64,
    t_max: f64,
}

impl Region {
    /// Uniform sample; with `facing`, the heading is instead drawn within
    /// 30 degrees of the bearing to the target.
    fn sample<R: Rng>(&self, rng: &mut R, facing: bool) -> [f64; 3] {
        let u: f64 = rng.random();
        let r = (self.r_min * self.r_min + u * (self.r_max * self.r_max - self.r_min * self.r_min)).sqrt();
        let phi = rng.random_range(-PI..PI);
        let (x, y) = (self.center[0] + r * phi.cos(), self.center[1] + r * phi.sin());
        let jitter = rng.random_range(-1.0..=1.0);
        let th = if facing {
            (self.target[1] - y).atan2(self.target[0] - x) + jitter * FACING_JITTER
        } else {
            self.heading + jitter * self.heading_half
        };
        self.project([x, y, th])
    }

    fn project(&self, x: [f64; 3]) -> [f64; 3] {
        let clamp_ring = |p: [f64; 2], c: [f64; 2], lo: f64, hi: f64| {
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            let d = dx.hypot(dy);
            if d < 1e-12 {
                return [c[0] + lo, c[1]];
            }
            let k = d.clamp(lo, hi) / d;
            [c[0] + dx * k, c[1] + dy * k]
        };
        let p = clamp_ring([x[0], x[1]], self.center, self.r_min, self.r_max);
        let p = clamp_ring(p, self.target, self.t_min, self.t_max);
        let dth = crate::geometry::wrap(x[2] - self.heading).clamp(-self.heading_half, self.heading_half);
        [p[0], p[1], crate::geometry::wrap(self.heading + dth)]
    }

    fn vmax(&self) -> [f64; 3] {
        let s = 0.5 * self.r_max;
        [s, s, 0.5 * self.heading_half]
    }
}

fn pose(x: &[f64; 3]) -> BasePose {
    BasePose::new(x[0], x[1], x[2])
}

/// Runs one swarm stage, updating `gbest` in place and appending the global
/// best after each iteration to `history`.
#[allow(clippy::too_many_arguments)]
fn run_stage<R: Rng>(
    scene: &Scene,
    stage: &PsoStage,
    region: &Region,
    seed_point: Option<[f64; 3]>,
    ring: bool,
    gbest: &mut ([f64; 3], f64),
    history: &mut Vec<f64>,
    rng: &mut R,
) {
    let vmax = region.vmax();
    let mut swarm: Vec<Particle> = (0..stage.particles)
        .map(|i| {
            let x = match (i, seed_point) {
                (0, Some(p)) => p,
                // Even-indexed particles start facing the target.
                _ => region.sample(rng, i % 2 == 0),
            };
            let v = std::array::from_fn(|k| rng.random_range(-1.0..=1.0) * vmax[k] * 0.1);
            Particle { x, v, best: x, best_f: f64::INFINITY }
        })
        .collect();
    let evaluate = |swarm: &mut Vec<Particle>, gbest: &mut ([f64; 3], f64)| {
        for p in swarm.iter_mut() {
            let f = scene.penalized(&pose(&p.x));
            if f < p.best_f {
                p.best_f = f;
                p.best = p.x;
            }
            // Strict improvement keeps the lowest particle index on ties.
            if f < gbest.1 {
                *gbest = (p.x, f);
            }
        }
    };
    evaluate(&mut swarm, gbest);
    history.push(gbest.1);
    let n = swarm.len();
    for _ in 0..stage.iterations {
        // Each particle follows the best personal best among itself and its
        // two ring neighbours, or the swarm best when `ring` is off.
        let guides: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                if !ring {
                    return gbest.0;
                }
                [(i + n - 1) % n, i, (i + 1) % n]
                    .into_iter()
                    .map(|j| &swarm[j])
                    .fold(None::<&Particle>, |acc, q| match acc {
                        Some(a) if a.best_f <= q.best_f => Some(a),
                        _ => Some(q),
                    })
                    .map_or(gbest.0, |q| q.best)
            })
            .collect();
        for (p, g) in swarm.iter_mut().zip(&guides) {
            let mut next = p.x;
            for k in 0..3 {
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let (mut dp, mut dg) = (p.best[k] - p.x[k], g[k] - p.x[k]);
                if k == 2 {
                    dp = crate::geometry::wrap(dp);
                    dg = crate::geometry::wrap(dg);
                }
                p.v[k] = (stage.inertia * p.v[k] + stage.cognitive * r1 * dp + stage.social * r2 * dg).clamp(-vmax[k], vmax[k]);
                next[k] += p.v[k];
            }
            p.x = region.project(next);
        }
        evaluate(&mut swarm, gbest);
        history.push(gbest.1);
    }
}

/// Two-stage coarse-to-fine swarm search for a base pose serving `ee_target`.
pub fn refine_base_pose(
    ee_target: &EEPose,
    shell: &DualEllipsoidShell,
    cloud: &PointCloud,
    chassis: &ChassisModel,
    cfg: &AlignmentObjectiveConfig,
    pso: &PsoConfig,
    seed: RngSeed,
) -> AlignmentResult {
    refine_base_pose_traced(ee_target, shell, cloud, chassis, cfg, pso, seed).0
}

/// As [`refine_base_pose`], also returning the penalized global-best value
/// after every swarm iteration of both stages.
pub fn refine_base_pose_traced(
    ee_target: &EEPose,
    shell: &DualEllipsoidShell,
    cloud: &PointCloud,
    chassis: &ChassisModel,
    cfg: &AlignmentObjectiveConfig,
    pso: &PsoConfig,
    seed: RngSeed,
) -> (AlignmentResult, Vec<f64>) {
    let scene = Scene { target: ee_target, shell, cloud, chassis, cfg, approach: ee_target.planar_approach() };
    let t = [ee_target.position.x, ee_target.position.y];
    let coarse = Region { center: t, r_min: pso.r_min, r_max: pso.r_max, heading: 0.0, heading_half: PI, target: t, t_min: pso.r_min, t_max: pso.r_max };
    let mut gbest = ([t[0] + pso.r_max, t[1], 0.0], f64::INFINITY);
    let mut history = Vec::with_capacity(pso.coarse.iterations + pso.fine.iterations + 2);
    let mut rng = seed.derive(1).rng();
    run_stage(&scene, &pso.coarse, &coarse, None, true, &mut gbest, &mut history, &mut rng);

    let b = gbest.0;
    let fine = Region {
        center: [b[0], b[1]],
        r_min: 0.0,
        r_max: pso.fine_stage_shrink * (pso.r_max - pso.r_min),
        heading: b[2],
        heading_half: pso.fine_stage_shrink * PI,
        target: t,
        t_min: pso.r_min,
        t_max: pso.r_max,
    };
    let mut rng = seed.derive(2).rng();
    run_stage(&scene, &pso.fine, &fine, Some(b), false, &mut gbest, &mut history, &mut rng);

    (objective(&pose(&gbest.0), ee_target, shell, cloud, chassis, cfg), history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Frame, Point3};
    use crate::reachability::Ellipsoid;

    fn shell() -> DualEllipsoidShell {
        DualEllipsoidShell::new(
            Ellipsoid::sphere(Point3::new(0.1, 0.0, 0.4), 0.7).unwrap(),
            Ellipsoid::sphere(Point3::new(0.1, 0.0, 0.4), 0.25).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn free_space_target_is_served() {
        let target = EEPose::tilted(Point3::new(2.0, 1.0, 0.6), 0.8, 0.5);
        let empty = PointCloud::empty(Frame::World);
        let r = refine_base_pose(&target, &shell(), &empty, &ChassisModel::default(), &Default::default(), &Default::default(), RngSeed(5));
        assert!(r.feasible);
        let local = se2_inverse_transform(&r.pose, &target.position);
        assert!(shell().contains(&local));
        assert!(crate::geometry::wrap(r.pose.theta - 0.8).abs() < 15f64.to_radians());
    }

    #[test]
    fn surrounded_target_is_infeasible() {
        let target = EEPose::tilted(Point3::new(0.0, 0.0, 0.6), 0.0, 0.5);
        let mut pts = Vec::new();
        for i in -14..=14 {
            for j in -14..=14 {
                pts.push(Point3::new(i as f64 * 0.1, j as f64 * 0.1, 0.3));
            }
        }
        let wall = PointCloud::new(pts, Frame::World);
        let r = refine_base_pose(&target, &shell(), &wall, &ChassisModel::default(), &Default::default(), &Default::default(), RngSeed(5));
        assert!(!r.feasible);
    }

    #[test]
    fn history_is_monotone_and_deterministic() {
        let target = EEPose::tilted(Point3::new(1.0, 0.0, 0.7), 0.0, 0.3);
        let cloud = PointCloud::new(vec![Point3::new(0.7, 0.1, 0.5), Point3::new(0.5, -0.3, 0.2), Point3::new(1.0, 0.3, 0.6)], Frame::World);
        let run = || {
            refine_base_pose_traced(&target, &shell(), &cloud, &ChassisModel::default(), &Default::default(), &Default::default(), RngSeed(11))
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha.windows(2).all(|w| w[1] <= w[0]));
        assert!((ha.last().unwrap() - a.penalized()).abs() < 1e-9);
    }
}
