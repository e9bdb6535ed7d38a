//! Parametric 4-DOF tabletop arm (base yaw + three pitch joints) and a
//! damped least-squares IK solver with seeded random restarts.

use std::f64::consts::PI;

use nalgebra::{Matrix4, SMatrix, SVector, Vector3, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{EEPose, Point3, PointCloud, RngSeed};

pub type JointVector = [f64; 4];

/// IK success tolerances.
pub const IK_POSITION_TOL: f64 = 0.005;
pub const IK_ANGLE_TOL: f64 = 5.0 * PI / 180.0;

const DLS_DAMPING: f64 = 0.05;
const DLS_MAX_ITERS: usize = 200;
const DLS_MAX_STEP: f64 = 0.35;
/// Half-width of the random yaw window around the target azimuth.
const YAW_JITTER: f64 = 0.6;
/// Weight of approach-axis error relative to position error (metres per unit).
const ORIENTATION_WEIGHT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub link_lengths: [f64; 3],
    /// [min, max] for base_yaw, shoulder_pitch, elbow_pitch, wrist_pitch.
    pub joint_limits: [[f64; 2]; 4],
    /// Shoulder position in the base frame.
    pub mount_offset: Point3,
    pub self_collision_radius: f64,
}

impl Default for ArmModel {
    fn default() -> Self {
        Self {
            link_lengths: [0.30, 0.25, 0.15],
            joint_limits: [[-PI, PI], [-PI / 2.0, PI / 2.0], [-2.6, 2.6], [-2.0, 2.0]],
            mount_offset: Point3::new(0.10, 0.0, 0.40),
            self_collision_radius: 0.10,
        }
    }
}

/// Forward kinematics result: joint origins and tool axis, all in the base frame.
#[derive(Debug, Clone, Copy)]
pub struct ArmFrames {
    pub shoulder: Vector3<f64>,
    pub elbow: Vector3<f64>,
    pub wrist: Vector3<f64>,
    pub tool: Vector3<f64>,
    pub approach: Vector3<f64>,
}

impl ArmModel {
    pub fn with_links(l1: f64, l2: f64, l3: f64) -> Self {
        Self { link_lengths: [l1, l2, l3], ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.link_lengths.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err("link lengths must be positive".into());
        }
        if self.joint_limits.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err("joint limits must satisfy min < max".into());
        }
        if !(self.self_collision_radius >= 0.0) {
            return Err("self-collision radius must be non-negative".into());
        }
        Ok(())
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn mount(&self) -> Vector3<f64> {
        self.mount_offset.to_vector()
    }

    pub fn forward(&self, q: &JointVector) -> ArmFrames {
        let [l1, l2, l3] = self.link_lengths;
        let (sy, cy) = q[0].sin_cos();
        let p1 = q[1];
        let p2 = p1 + q[2];
        let p3 = p2 + q[3];
        let planar = |r: f64, h: f64| Vector3::new(r * cy, r * sy, h);
        let shoulder = self.mount();
        let elbow = shoulder + planar(l1 * p1.cos(), l1 * p1.sin());
        let wrist = elbow + planar(l2 * p2.cos(), l2 * p2.sin());
        let tool = wrist + planar(l3 * p3.cos(), l3 * p3.sin());
        let approach = planar(p3.cos(), p3.sin());
        ArmFrames { shoulder, elbow, wrist, tool, approach }
    }

    /// 6x4 Jacobian of (tool position, approach axis) w.r.t. the joints.
    fn jacobian(&self, q: &JointVector) -> SMatrix<f64, 6, 4> {
        let [l1, l2, l3] = self.link_lengths;
        let (sy, cy) = q[0].sin_cos();
        let phi = [q[1], q[1] + q[2], q[1] + q[2] + q[3]];
        let lens = [l1, l2, l3];
        let radial: f64 = (0..3).map(|i| lens[i] * phi[i].cos()).sum();
        let mut j = SMatrix::<f64, 6, 4>::zeros();
        j[(0, 0)] = -radial * sy;
        j[(1, 0)] = radial * cy;
        let (s3, c3) = phi[2].sin_cos();
        j[(3, 0)] = -c3 * sy;
        j[(4, 0)] = c3 * cy;
        for col in 1..4 {
            let mut dr = 0.0;
            let mut dh = 0.0;
            for i in (col - 1)..3 {
                dr -= lens[i] * phi[i].sin();
                dh += lens[i] * phi[i].cos();
            }
            j[(0, col)] = dr * cy;
            j[(1, col)] = dr * sy;
            j[(2, col)] = dh;
            j[(3, col)] = -s3 * cy;
            j[(4, col)] = -s3 * sy;
            j[(5, col)] = c3;
        }
        j
    }

    fn clamp(&self, q: &mut JointVector) {
        for (i, (v, [lo, hi])) in q.iter_mut().zip(self.joint_limits.iter()).enumerate() {
            if i == 0 && hi - lo >= 2.0 * PI - 1e-9 {
                // Continuous yaw: wrap instead of pinning at the limit.
                *v = lo + (*v - lo).rem_euclid(2.0 * PI);
            } else {
                *v = v.clamp(*lo, *hi);
            }
        }
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.iter()
            .zip(self.joint_limits.iter())
            .all(|(v, [lo, hi])| *v >= *lo - 1e-12 && *v <= *hi + 1e-12)
    }

    /// True when the distal links keep `self_collision_radius` from the
    /// shoulder and every link clears each obstacle point by the same radius.
    /// Obstacles are expected in the base frame.
    pub fn collision_free(&self, q: &JointVector, obstacles: &PointCloud) -> bool {
        let f = self.forward(q);
        let r = self.self_collision_radius;
        if segment_distance(&f.shoulder, &f.elbow, &f.wrist) < r
            || segment_distance(&f.shoulder, &f.wrist, &f.tool) < r
        {
            return false;
        }
        let links = [(f.shoulder, f.elbow), (f.elbow, f.wrist), (f.wrist, f.tool)];
        obstacles.points.iter().all(|p| {
            let v = p.to_vector();
            links.iter().all(|(a, b)| segment_distance(&v, a, b) >= r)
        })
    }

    fn pose_error(&self, q: &JointVector, target: &Vector3<f64>, approach: &Vector3<f64>) -> (SVector<f64, 6>, f64, f64) {
        let f = self.forward(q);
        let dp = target - f.tool;
        let da = approach - f.approach;
        let angle = f.approach.dot(approach).clamp(-1.0, 1.0).acos();
        let e = SVector::<f64, 6>::new(
            dp.x,
            dp.y,
            dp.z,
            ORIENTATION_WEIGHT * da.x,
            ORIENTATION_WEIGHT * da.y,
            ORIENTATION_WEIGHT * da.z,
        );
        (e, dp.norm(), angle)
    }

    /// Runs damped least squares from `q`; returns the final configuration and
    /// whether it meets the IK tolerances.
    fn descend(&self, mut q: JointVector, target: &EEPose) -> (JointVector, bool) {
        let goal = target.position.to_vector();
        let approach = target.approach_dir();
        let mut weights = SMatrix::<f64, 6, 6>::identity();
        for i in 3..6 {
            weights[(i, i)] = ORIENTATION_WEIGHT;
        }
        let damping = Matrix4::<f64>::identity() * (DLS_DAMPING * DLS_DAMPING);
        let (mut err, mut pos_err, mut ang_err) = self.pose_error(&q, &goal, &approach);
        let mut best = err.norm();
        let mut stalled = 0;
        for _ in 0..DLS_MAX_ITERS {
            if pos_err < 1e-7 && ang_err < 1e-7 {
                break;
            }
            let j = weights * self.jacobian(&q);
            let jt = j.transpose();
            let Some(inv) = (jt * j + damping).try_inverse() else {
                break;
            };
            let dq: Vector4<f64> = inv * (jt * err);
            let scale = (DLS_MAX_STEP / dq.amax()).min(1.0);
            for i in 0..4 {
                q[i] += scale * dq[i];
            }
            self.clamp(&mut q);
            (err, pos_err, ang_err) = self.pose_error(&q, &goal, &approach);
            let n = err.norm();
            if n < best * (1.0 - 1e-6) {
                best = n;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= 15 {
                    break;
                }
            }
        }
        (q, pos_err <= IK_POSITION_TOL && ang_err <= IK_ANGLE_TOL)
    }

    /// Random start: yaw jittered around the target azimuth, pitch joints
    /// uniform within their limits.
    fn random_configuration<R: Rng>(&self, rng: &mut R, azimuth: f64) -> JointVector {
        let mut q = [0.0; 4];
        for (v, [lo, hi]) in q.iter_mut().zip(self.joint_limits.iter()) {
            *v = rng.random_range(*lo..*hi);
        }
        q[0] = azimuth + rng.random_range(-YAW_JITTER..YAW_JITTER);
        self.clamp(&mut q);
        q
    }
}

/// Seeded damped least-squares IK with `restarts` random initial
/// configurations. Restart `k` draws its start from `seed.derive(k)`.
pub fn solve_ik(arm: &ArmModel, target: &EEPose, seed: RngSeed, restarts: usize) -> Option<JointVector> {
    let mount = arm.mount();
    let dist = (target.position.to_vector() - mount).norm();
    if dist > arm.reach() + IK_POSITION_TOL {
        return None;
    }
    let rel = target.position.to_vector() - mount;
    let azimuth = if rel.x.hypot(rel.y) > 1e-9 {
        rel.y.atan2(rel.x)
    } else {
        target.planar_approach().map_or(0.0, |(x, y)| y.atan2(x))
    };
    (0..restarts.max(1)).find_map(|k| {
        let mut rng = seed.derive(k as u64).rng();
        let q0 = arm.random_configuration(&mut rng, azimuth);
        let (q, ok) = arm.descend(q0, target);
        ok.then_some(q)
    })
}

/// Distance from `p` to segment `ab`.
pub(crate) fn segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;

    fn straight_ahead(arm: &ArmModel) -> EEPose {
        let m = arm.mount_offset;
        EEPose::tilted(Point3::new(m.x + arm.reach(), m.y, m.z), 0.0, 0.0)
    }

    #[test]
    fn forward_kinematics_straight() {
        let arm = ArmModel::default();
        let f = arm.forward(&[0.0; 4]);
        assert!((f.tool - Vector3::new(0.8, 0.0, 0.4)).norm() < 1e-12);
        assert!((f.approach - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let arm = ArmModel::default();
        let q = [0.3, -0.4, 1.1, -0.7];
        let j = arm.jacobian(&q);
        let h = 1e-6;
        for col in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[col] += h;
            qm[col] -= h;
            let fp = arm.forward(&qp);
            let fm = arm.forward(&qm);
            let dp = (fp.tool - fm.tool) / (2.0 * h);
            let da = (fp.approach - fm.approach) / (2.0 * h);
            for r in 0..3 {
                assert!((j[(r, col)] - dp[r]).abs() < 1e-6);
                assert!((j[(r + 3, col)] - da[r]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn full_extension_gives_straight_configuration() {
        let arm = ArmModel::default();
        let q = solve_ik(&arm, &straight_ahead(&arm), RngSeed(11), 20).expect("reachable");
        assert!(q[0].abs() < 1e-3);
        for v in &q[1..] {
            assert!(v.abs() < 0.1, "pitch joints should be straight: {q:?}");
        }
    }

    #[test]
    fn beyond_reach_has_no_solution() {
        let arm = ArmModel::default();
        let m = arm.mount_offset;
        let t = EEPose::tilted(Point3::new(m.x + arm.reach() + 0.05, m.y, m.z), 0.0, 0.0);
        assert!(solve_ik(&arm, &t, RngSeed(1), 20).is_none());
    }

    #[test]
    fn ik_round_trip_through_forward_kinematics() {
        // Default links, target 0.4 m ahead of and 0.2 m above the arm base.
        let arm = ArmModel { mount_offset: Point3::ORIGIN, ..ArmModel::default() };
        let target = EEPose::tilted(Point3::new(0.4, 0.0, 0.2), 0.0, 30f64.to_radians());
        let q = solve_ik(&arm, &target, RngSeed(5), 20).expect("solution");
        assert!(arm.within_limits(&q));
        let f = arm.forward(&q);
        assert!((f.tool - target.position.to_vector()).norm() <= IK_POSITION_TOL);
        assert!(f.approach.dot(&target.approach_dir()).acos() <= IK_ANGLE_TOL);
    }

    #[test]
    fn wall_through_every_configuration_collides() {
        let arm = ArmModel::default();
        let m = arm.mount_offset;
        let target = EEPose::tilted(Point3::new(m.x + 0.45, m.y, m.z), 0.0, 0.3);
        let q = solve_ik(&arm, &target, RngSeed(2), 20).unwrap();
        // Obstacle right at the tool tip.
        let cloud = PointCloud::new(vec![target.position], Frame::Base);
        assert!(!arm.collision_free(&q, &cloud));
        assert!(arm.collision_free(&q, &PointCloud::empty(Frame::Base)));
    }
}
