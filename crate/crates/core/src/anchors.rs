//! Physical anchors and the deterministic grounding of symbolic predicates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::geometry::{se2_inverse_transform, BasePose, Box2, Point3, PointCloud};
use crate::reachability::DualEllipsoidShell;

/// Symbol naming the robot in predicates and PDDL.
pub const ROBOT: &str = "r";

/// Fused anchor positions further than this from a new detection are
/// replaced rather than averaged.
pub const FUSION_GATE: f64 = 0.15;
/// Largest fused-position change between consecutive cycles that still
/// counts as stably segmented.
pub const STABLE_DRIFT: f64 = 0.03;
/// Cap on the running-mean weight so old evidence fades.
const MAX_FUSED: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotAnchor {
    pub chassis_pose: BasePose,
    pub gripper_closed: bool,
    pub gripper_current: f64,
    /// Object segmented inside the gripper region of interest, if any.
    pub gripper_roi: Option<String>,
}

impl RobotAnchor {
    pub fn at(chassis_pose: BasePose) -> Self {
        Self { chassis_pose, gripper_closed: false, gripper_current: 0.0, gripper_roi: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnchor {
    pub id: String,
    pub expected_position: Point3,
    pub cloud: PointCloud,
    pub footprint_xy: Option<Box2>,
    pub stable_segmented: bool,
    pub last_observed_cycle: Option<u64>,
    pub previous_observed_cycle: Option<u64>,
    pub fused_count: u32,
    /// Fused-position change caused by the latest detection.
    pub last_shift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    New,
    Fused,
    /// Detection landed beyond the fusion gate; the anchor jumped this far.
    Jumped(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorStore {
    pub robot: RobotAnchor,
    pub objects: BTreeMap<String, ObjectAnchor>,
    pub cycle: u64,
}

impl AnchorStore {
    pub fn new(robot: RobotAnchor) -> Self {
        Self { robot, objects: BTreeMap::new(), cycle: 0 }
    }

    /// Starts a perception cycle. Anchors not re-observed during it lose
    /// their stable flag.
    pub fn tick(&mut self) {
        self.cycle += 1;
        for a in self.objects.values_mut() {
            a.stable_segmented = false;
        }
    }

    /// Writes a detection of `id` at `position` with segmented `cloud`
    /// (world frame) into the current cycle.
    pub fn observe(&mut self, id: &str, position: Point3, cloud: PointCloud) -> Observation {
        let cycle = self.cycle;
        let footprint = Box2::bounding(&cloud.points);
        let Some(a) = self.objects.get_mut(id) else {
            self.objects.insert(
                id.to_string(),
                ObjectAnchor {
                    id: id.to_string(),
                    expected_position: position,
                    cloud,
                    footprint_xy: footprint,
                    stable_segmented: false,
                    last_observed_cycle: Some(cycle),
                    previous_observed_cycle: None,
                    fused_count: 1,
                    last_shift: 0.0,
                },
            );
            return Observation::New;
        };
        let jump = a.expected_position.distance(&position);
        let (fused, outcome) = if jump > FUSION_GATE {
            a.fused_count = 1;
            (position, Observation::Jumped(jump))
        } else {
            let n = (a.fused_count + 1).min(MAX_FUSED);
            a.fused_count = n;
            let w = 1.0 / n as f64;
            let p = a.expected_position.to_vector() * (1.0 - w) + position.to_vector() * w;
            (Point3::from_vector(&p), Observation::Fused)
        };
        a.last_shift = a.expected_position.distance(&fused);
        // Re-center the segmented cloud on the fused estimate.
        let (dx, dy, dz) = (fused.x - position.x, fused.y - position.y, fused.z - position.z);
        a.cloud = PointCloud::new(cloud.points.iter().map(|p| p.offset(dx, dy, dz)).collect(), cloud.frame);
        a.footprint_xy = Box2::bounding(&a.cloud.points);
        a.expected_position = fused;
        if a.last_observed_cycle != Some(cycle) {
            a.previous_observed_cycle = a.last_observed_cycle;
        }
        a.last_observed_cycle = Some(cycle);
        a.stable_segmented = matches!(outcome, Observation::Fused)
            && a.previous_observed_cycle.is_some_and(|c| c + 1 == cycle)
            && a.last_shift < STABLE_DRIFT;
        outcome
    }

    /// Drops the anchor of `id`, e.g. when it is known to be stale.
    pub fn invalidate(&mut self, id: &str) -> Option<ObjectAnchor> {
        self.objects.remove(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredicateConfig {
    pub eps_near: f64,
    pub eps_in: f64,
    /// Gripper current (amperes) confirming a loaded grasp.
    pub load_threshold: f64,
}

impl Default for PredicateConfig {
    fn default() -> Self {
        Self { eps_near: 1.0, eps_in: 0.6, load_threshold: 0.3 }
    }
}

impl PredicateConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.eps_near > 0.0) {
            return Err("eps_near must be positive".into());
        }
        if !(self.eps_in > 0.0 && self.eps_in <= 1.0) {
            return Err("eps_in must lie in (0, 1]".into());
        }
        if !(self.load_threshold >= 0.0) {
            return Err("load_threshold must be non-negative".into());
        }
        Ok(())
    }
}

/// Ground predicate; the robot argument is implicit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Predicate {
    Near(String),
    Aligned(String),
    Holding(String),
    In(String, String),
    Found(String),
}

impl Predicate {
    pub fn name(&self) -> &'static str {
        match self {
            Predicate::Near(_) => "near",
            Predicate::Aligned(_) => "aligned",
            Predicate::Holding(_) => "holding",
            Predicate::In(..) => "in",
            Predicate::Found(_) => "found",
        }
    }

    /// Object arguments in order (the robot argument excluded).
    pub fn objects(&self) -> Vec<&str> {
        match self {
            Predicate::Near(o) | Predicate::Aligned(o) | Predicate::Holding(o) | Predicate::Found(o) => vec![o],
            Predicate::In(o, c) => vec![o, c],
        }
    }

    pub fn mentions(&self, id: &str) -> bool {
        self.objects().contains(&id)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Near(o) | Predicate::Aligned(o) | Predicate::Holding(o) => write!(f, "({} {ROBOT} {o})", self.name()),
            Predicate::Found(o) => write!(f, "(found {o})"),
            Predicate::In(o, c) => write!(f, "(in {o} {c})"),
        }
    }
}

pub type SymbolicState = BTreeSet<Predicate>;

/// `area(obj ∩ container) / area(obj)`.
pub fn overlap_ratio(obj_box: &Box2, container_box: &Box2) -> Result<f64, GeometryError> {
    let a = obj_box.area();
    if !(a > 0.0) {
        return Err(GeometryError::DegenerateBox("object box has zero area"));
    }
    Ok((obj_box.intersection_area(container_box) / a).clamp(0.0, 1.0))
}

/// Grounds the symbolic state in the anchor store. Missing evidence makes a
/// predicate false, never an error.
pub fn derive_state(store: &AnchorStore, cfg: &PredicateConfig, shell: &DualEllipsoidShell) -> SymbolicState {
    let mut s = SymbolicState::new();
    let robot = &store.robot;
    for (id, a) in &store.objects {
        if a.last_observed_cycle.is_some() {
            s.insert(Predicate::Found(id.clone()));
        }
        let near = robot.chassis_pose.planar_distance_to(&a.expected_position) <= cfg.eps_near;
        if near {
            s.insert(Predicate::Near(id.clone()));
            let local = se2_inverse_transform(&robot.chassis_pose, &a.expected_position);
            if a.stable_segmented && shell.contains(&local) {
                s.insert(Predicate::Aligned(id.clone()));
            }
        }
    }
    if robot.gripper_closed && robot.gripper_current >= cfg.load_threshold {
        if let Some(o) = &robot.gripper_roi {
            s.insert(Predicate::Holding(o.clone()));
        }
    }
    for (o, ao) in &store.objects {
        let Some(bo) = ao.footprint_xy.filter(|_| !ao.cloud.is_empty()) else { continue };
        for (c, ac) in &store.objects {
            if o == c || ac.cloud.is_empty() {
                continue;
            }
            let Some(bc) = ac.footprint_xy else { continue };
            if overlap_ratio(&bo, &bc).is_ok_and(|r| r >= cfg.eps_in) {
                s.insert(Predicate::In(o.clone(), c.clone()));
            }
        }
    }
    s
}

/// Renders a state as a single line of PDDL literals.
pub fn format_state(state: &SymbolicState) -> String {
    state.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ")
}
