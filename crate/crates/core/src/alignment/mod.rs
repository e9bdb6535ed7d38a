//! Operability-aware base placement: the weighted alignment / shell-intrusion /
//! chassis-risk objective and its particle-swarm minimizer.

mod pso;

use serde::{Deserialize, Serialize};

pub use pso::{refine_base_pose, refine_base_pose_traced, PsoConfig, PsoStage};

use crate::geometry::{se2_inverse_transform, BasePose, EEPose, PointCloud};
use crate::reachability::DualEllipsoidShell;

/// Added to the objective of any pose from which the target cannot be served.
pub const INFEASIBLE_PENALTY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentObjectiveConfig {
    pub w_a: f64,
    pub w_s: f64,
    pub w_c: f64,
    /// Sigmoid sharpness of the shell-intrusion term.
    pub alpha: f64,
    /// Safety margin added to the chassis radius.
    pub delta: f64,
    pub softplus_beta: f64,
}

impl Default for AlignmentObjectiveConfig {
    fn default() -> Self {
        Self { w_a: 1.0, w_s: 2.0, w_c: 2.0, alpha: 10.0, delta: 0.05, softplus_beta: 10.0 }
    }
}

impl AlignmentObjectiveConfig {
    pub fn validate(&self) -> Result<(), String> {
        if [self.w_a, self.w_s, self.w_c].iter().any(|w| !(*w >= 0.0)) {
            return Err("objective weights must be non-negative".into());
        }
        if !(self.alpha > 0.0) || !(self.softplus_beta > 0.0) {
            return Err("alpha and softplus_beta must be positive".into());
        }
        if !(self.delta >= 0.0) {
            return Err("chassis margin must be non-negative".into());
        }
        Ok(())
    }
}

/// Disk footprint of the mobile base, in the base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChassisModel {
    pub center_offset: [f64; 2],
    pub radius: f64,
}

impl Default for ChassisModel {
    fn default() -> Self {
        Self { center_offset: [0.0, 0.0], radius: 0.35 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub j_align: f64,
    pub j_shell: f64,
    pub j_chassis: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub pose: BasePose,
    pub objective: f64,
    pub terms: TermBreakdown,
    pub feasible: bool,
    /// How far the pose is from feasible; zero exactly when `feasible`.
    pub violation: f64,
}

impl AlignmentResult {
    /// Objective as ranked by the optimizer.
    pub fn penalized(&self) -> f64 {
        if self.feasible {
            self.objective
        } else {
            self.objective + INFEASIBLE_PENALTY + self.violation
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(beta * u)) / beta` without overflow.
pub fn softplus(u: f64, beta: f64) -> f64 {
    let z = beta * u;
    let v = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    v / beta
}

/// `1 - <base heading, planar approach>`; 0 for a vertical approach.
pub fn j_align(base: &BasePose, ee_target: &EEPose) -> f64 {
    match ee_target.planar_approach() {
        Some((ax, ay)) => {
            let (c, s) = base.heading();
            (1.0 - (c * ax + s * ay)).clamp(0.0, 2.0)
        }
        None => 0.0,
    }
}

/// Mean soft indicator of cloud points lying inside the shell seen from `base`.
pub fn j_shell(base: &BasePose, shell: &DualEllipsoidShell, cloud: &PointCloud, cfg: &AlignmentObjectiveConfig) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    let local = cloud.to_base(base);
    let sum: f64 = local.points.iter().map(|p| shell_intrusion(shell, p, cfg.alpha)).sum();
    sum / cloud.len() as f64
}

/// Mean softplus of chassis-disk penetration over the cloud.
pub fn j_chassis(base: &BasePose, chassis: &ChassisModel, cloud: &PointCloud, cfg: &AlignmentObjectiveConfig) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    let local = cloud.to_base(base);
    let reach = chassis.radius + cfg.delta;
    let sum: f64 = local
        .points
        .iter()
        .map(|p| softplus(reach - chassis_distance(chassis, p), cfg.softplus_beta))
        .sum();
    sum / cloud.len() as f64
}

fn shell_intrusion(shell: &DualEllipsoidShell, p: &crate::geometry::Point3, alpha: f64) -> f64 {
    sigmoid(alpha * (1.0 - shell.d_out(p))) * sigmoid(alpha * (shell.d_in(p) - 1.0))
}

fn chassis_distance(chassis: &ChassisModel, p: &crate::geometry::Point3) -> f64 {
    (p.x - chassis.center_offset[0]).hypot(p.y - chassis.center_offset[1])
}

/// Constraint violation of `base`: shell-membership excess of the target plus
/// the deepest chassis penetration by any cloud point. Zero means the pose
/// can serve the target.
pub fn violation(base: &BasePose, ee_target: &EEPose, shell: &DualEllipsoidShell, cloud: &PointCloud, chassis: &ChassisModel) -> f64 {
    let t = se2_inverse_transform(base, &ee_target.position);
    let penetration = cloud
        .points
        .iter()
        .map(|p| chassis.radius - chassis_distance(chassis, &to_local(base, cloud, p)))
        .fold(0.0, f64::max);
    shell_violation(shell, &t) + penetration
}

pub(crate) fn shell_violation(shell: &DualEllipsoidShell, p: &crate::geometry::Point3) -> f64 {
    (shell.d_out(p) - 1.0).max(0.0) + (1.0 - shell.d_in(p)).max(0.0)
}

fn to_local(base: &BasePose, cloud: &PointCloud, p: &crate::geometry::Point3) -> crate::geometry::Point3 {
    match cloud.frame {
        crate::geometry::Frame::World => se2_inverse_transform(base, p),
        crate::geometry::Frame::Base => *p,
    }
}

/// Evaluates every term at `base`.
pub fn objective(
    base: &BasePose,
    ee_target: &EEPose,
    shell: &DualEllipsoidShell,
    cloud: &PointCloud,
    chassis: &ChassisModel,
    cfg: &AlignmentObjectiveConfig,
) -> AlignmentResult {
    let terms = TermBreakdown {
        j_align: j_align(base, ee_target),
        j_shell: j_shell(base, shell, cloud, cfg),
        j_chassis: j_chassis(base, chassis, cloud, cfg),
    };
    let violation = violation(base, ee_target, shell, cloud, chassis);
    AlignmentResult {
        pose: *base,
        objective: cfg.w_a * terms.j_align + cfg.w_s * terms.j_shell + cfg.w_c * terms.j_chassis,
        terms,
        feasible: violation == 0.0,
        violation,
    }
}
