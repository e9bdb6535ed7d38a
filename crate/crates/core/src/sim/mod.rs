//! Deterministic desk-scale world: simulated perception writing into the
//! anchor store, frontier search, the four action primitives and scripted
//! disturbances.

pub mod grid;
mod scenario;
mod world;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use scenario::Scenario;
pub use world::{Disturbance, DisturbanceScript, Effect, OutcomeModel, Region, SensorModel, SimObject, Trigger, World};

use crate::alignment::{refine_base_pose, AlignmentObjectiveConfig, ChassisModel, PsoConfig};
use crate::anchors::{derive_state, AnchorStore, Observation, Predicate, PredicateConfig, RobotAnchor, SymbolicState};
use crate::geometry::{se2_inverse_transform, wrap, BasePose, EEPose, Frame, Point3, PointCloud, RngSeed};
use crate::grasping::{match_and_score, tilt_penalty, GraspCandidate, GraspScoreConfig};
use crate::planner::ActionName;
use crate::reachability::DualEllipsoidShell;
use grid::{Cell, STEP_COST};

/// obj_find stops approaching once the target is this close (planar).
pub const APPROACH_RANGE: f64 = 0.8;
/// Extra perception ticks spent waiting for an anchor to stabilize.
pub const DWELL_TICKS: usize = 3;
/// A grasp aimed further than this from the object closes on air.
pub const GRASP_CAPTURE: f64 = 0.05;
pub const PLACE_CLEARANCE: f64 = 0.05;
/// Elevation of the commanded grasp approach below horizontal.
pub const GRASP_TILT: f64 = 0.9;
/// Obstacle cells further than this from the target are left out of the
/// alignment cloud; they cannot touch any candidate chassis pose.
pub const CLOUD_RADIUS: f64 = 1.6;
/// Lowest top-ranked tilt penalty accepted by the grasp filter.
pub const TILT_PASS: f64 = 0.5;
/// Planar distance at which a placement from outside the shell falls short.
pub const SHORT_REACH: f64 = 0.6;
/// Half-width of the uniform error on a drop position.
pub const PLACE_NOISE: f64 = 0.005;
const MAX_FIND_STEPS: usize = 400;
/// Relative shrink of the shell the base is refined against, so the
/// re-anchored target stays inside despite sensing noise.
pub const ALIGN_MARGIN: f64 = 0.08;
/// Where a carried object rides relative to the base.
pub const CARRY_AHEAD: f64 = 0.3;
pub const CARRY_HEIGHT: f64 = 0.9;
/// Views per panoramic scan during search.
const SCAN_VIEWS: usize = 4;
/// Sweep rays aim this far above a cell's surface, roughly an object's center.
const SWEEP_LIFT: f64 = 0.05;
const GRASP_CANDIDATES: usize = 4;
const GRIPPER_LOAD_CURRENT: f64 = 0.6;

/// Simulated durations (seconds) and speed (m/s).
pub const NAV_SPEED: f64 = 0.5;
pub const PERCEIVE_SECONDS: f64 = 0.5;
pub const ALIGN_SECONDS: f64 = 1.0;
pub const GRASP_SECONDS: f64 = 4.0;
pub const PLACE_SECONDS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignMode {
    /// Operability-aware base refinement.
    Refine,
    /// Ablation: drive to `eps_near` range facing the target, no refinement.
    Approach,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub predicates: PredicateConfig,
    pub grasp: GraspScoreConfig,
    pub alignment: AlignmentObjectiveConfig,
    pub pso: PsoConfig,
    pub chassis: ChassisModel,
    /// Frontier score weight per grid cell of path cost.
    pub lambda_travel: f64,
    pub align_mode: AlignMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            predicates: PredicateConfig::default(),
            grasp: GraspScoreConfig::default(),
            alignment: AlignmentObjectiveConfig::default(),
            pso: PsoConfig::default(),
            chassis: ChassisModel::default(),
            lambda_travel: 0.01,
            align_mode: AlignMode::Refine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Found,
    Exhausted,
    Unreachable,
    Aligned,
    AlignFailed,
    Holding,
    EmptyGrasp,
    Placed,
    PlacementMiss,
}

impl Outcome {
    pub fn success(&self) -> bool {
        matches!(self, Outcome::Found | Outcome::Aligned | Outcome::Holding | Outcome::Placed)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Found => "found",
            Outcome::Exhausted => "exhausted",
            Outcome::Unreachable => "unreachable",
            Outcome::Aligned => "aligned",
            Outcome::AlignFailed => "align_failed",
            Outcome::Holding => "holding",
            Outcome::EmptyGrasp => "empty_grasp",
            Outcome::Placed => "placed",
            Outcome::PlacementMiss => "placement_miss",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Evidence the robot itself can notice, drained by the executive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SimEvent {
    /// A detection landed beyond the fusion gate of its anchor.
    Jumped { id: String, distance: f64 },
    /// An anchored object expected in view went undetected twice running.
    Occluded { id: String },
    /// The gripper lost its load during navigation.
    Slipped { id: String },
}

/// Region-level target-existence belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierBelief {
    pub region_belief: BTreeMap<String, f64>,
    pub lambda_travel: f64,
}

/// Grounds the symbolic state; with [`AlignMode::Approach`] the operability
/// check is bypassed and `aligned` degenerates to `near`.
pub fn ground_state(store: &AnchorStore, cfg: &PredicateConfig, shell: &DualEllipsoidShell, mode: AlignMode) -> SymbolicState {
    let mut s = derive_state(store, cfg, shell);
    if mode == AlignMode::Approach {
        let near: Vec<String> = s.iter().filter_map(|p| if let Predicate::Near(o) = p { Some(o.clone()) } else { None }).collect();
        s.extend(near.into_iter().map(Predicate::Aligned));
    }
    s
}

/// Per-invocation record of cells swept by the sensor.
#[derive(Debug, Clone)]
pub struct SearchMap {
    pub searched: Vec<bool>,
}

impl SearchMap {
    pub fn new(world: &World) -> Self {
        Self { searched: vec![false; world.grid.len()] }
    }
}

pub struct Sim<'a> {
    pub world: World,
    pub store: AnchorStore,
    pub sensor: SensorModel,
    pub outcomes: OutcomeModel,
    pub shell: &'a DualEllipsoidShell,
    /// The shell tightened by [`ALIGN_MARGIN`], used as the refinement target.
    align_shell: DualEllipsoidShell,
    pub cfg: SimConfig,
    /// Objects the perception handler segments.
    pub watch: Vec<String>,
    pub events: Vec<SimEvent>,
    /// Ground-truth happenings the robot cannot observe directly.
    pub world_log: Vec<String>,
    misses: BTreeMap<String, u32>,
    rng: ChaCha8Rng,
    seed: RngSeed,
    align_calls: u64,
    /// Sensor pan override (world yaw); the chassis heading otherwise.
    gaze: Option<f64>,
}

fn in_fov(sensor: &SensorModel, robot: &BasePose, p: &Point3) -> bool {
    let (dx, dy) = (p.x - robot.x, p.y - robot.y);
    let d = dx.hypot(dy);
    d <= sensor.fov_radius && (d < 1e-9 || wrap(dy.atan2(dx) - robot.theta).abs() <= sensor.fov_halfangle)
}

impl<'a> Sim<'a> {
    pub fn new(scenario: &Scenario, shell: &'a DualEllipsoidShell, cfg: SimConfig, seed: RngSeed) -> Self {
        let world = scenario.world.clone();
        let store = AnchorStore::new(RobotAnchor::at(world.robot));
        Self {
            world,
            store,
            sensor: scenario.sensor,
            outcomes: scenario.outcomes,
            shell,
            align_shell: DualEllipsoidShell::new(shell.outer.scaled(1.0 - ALIGN_MARGIN), shell.inner.scaled(1.0 + ALIGN_MARGIN))
                .unwrap_or_else(|_| shell.clone()),
            cfg,
            watch: vec![scenario.task.task_obj.clone(), scenario.task.task_container.clone()],
            events: Vec::new(),
            world_log: Vec::new(),
            misses: BTreeMap::new(),
            rng: seed.derive(0x51).rng(),
            seed,
            align_calls: 0,
            gaze: None,
        }
    }

    pub fn state(&self) -> SymbolicState {
        ground_state(&self.store, &self.cfg.predicates, self.shell, self.cfg.align_mode)
    }

    fn sync_robot(&mut self) {
        let held = self.world.held.clone();
        let r = &mut self.store.robot;
        r.chassis_pose = self.world.robot;
        r.gripper_closed = held.is_some();
        r.gripper_current = if held.is_some() { GRIPPER_LOAD_CURRENT } else { 0.0 };
        r.gripper_roi = held;
    }

    fn eye(&self) -> Point3 {
        Point3::new(self.world.robot.x, self.world.robot.y, self.sensor.height)
    }

    fn sensor_pose(&self) -> BasePose {
        let r = self.world.robot;
        BasePose::new(r.x, r.y, self.gaze.unwrap_or(r.theta))
    }

    fn visible(&self, target: &Point3, own: &[Cell]) -> bool {
        in_fov(&self.sensor, &self.sensor_pose(), target) && self.world.grid.line_of_sight(&self.eye(), target, |c| own.contains(&c))
    }

    fn anchor_cells(&self, id: &str) -> Vec<Cell> {
        let Some(b) = self.store.objects.get(id).and_then(|a| a.footprint_xy) else { return Vec::new() };
        let g = &self.world.grid;
        match (g.cell_of(b.min_x, b.min_y), g.cell_of(b.max_x, b.max_y)) {
            (Some(lo), Some(hi)) => (lo.1..=hi.1).flat_map(|y| (lo.0..=hi.0).map(move |x| (x, y))).collect(),
            _ => Vec::new(),
        }
    }

    /// One perception tick: detects watched objects, writes anchors and
    /// sweeps the search map.
    pub fn perceive(&mut self, search: Option<&mut SearchMap>) {
        self.store.tick();
        self.sync_robot();
        self.world.clock += PERCEIVE_SECONDS;
        let noise = Normal::new(0.0, self.sensor.position_noise_sigma).expect("validated sigma");
        for id in self.watch.clone() {
            if self.world.held.as_deref() == Some(id.as_str()) {
                self.misses.remove(&id);
                continue;
            }
            let seen = self.world.objects.get(&id).is_some_and(|o| self.visible(&o.position, &self.world.footprint_cells(&id)))
                && !self.world.occluded.contains_key(&id);
            if seen && self.rng.random::<f64>() < self.sensor.p_detect {
                let o = &self.world.objects[&id];
                let (nx, ny, nz) = (noise.sample(&mut self.rng), noise.sample(&mut self.rng), noise.sample(&mut self.rng));
                let p = o.position.offset(nx, ny, nz);
                let b = o.footprint().translated(nx, ny);
                let top = o.top() + nz;
                let cloud = PointCloud::new(
                    vec![
                        Point3::new(b.min_x, b.min_y, top),
                        Point3::new(b.max_x, b.min_y, top),
                        Point3::new(b.min_x, b.max_y, top),
                        Point3::new(b.max_x, b.max_y, top),
                        Point3::new(p.x, p.y, top),
                    ],
                    Frame::World,
                );
                if let Observation::Jumped(d) = self.store.observe(&id, p, cloud) {
                    self.events.push(SimEvent::Jumped { id: id.clone(), distance: d });
                }
                self.misses.remove(&id);
            } else if let Some(a) = self.store.objects.get(&id) {
                if self.visible(&a.expected_position, &self.anchor_cells(&id)) {
                    let m = self.misses.entry(id.clone()).or_insert(0);
                    *m += 1;
                    if *m == 2 {
                        self.events.push(SimEvent::Occluded { id: id.clone() });
                    }
                }
            }
        }
        self.world.occluded.retain(|_, t| {
            *t -= 1;
            *t > 0
        });
        if let Some(map) = search {
            self.sweep(map);
        }
    }

    fn sweep(&self, map: &mut SearchMap) {
        let g = &self.world.grid;
        let eye = self.eye();
        let r = self.sensor.fov_radius;
        let (Some(lo), Some(hi)) = (
            g.cell_of((eye.x - r).max(g.origin[0]), (eye.y - r).max(g.origin[1])),
            g.cell_of(
                (eye.x + r).min(g.origin[0] + g.nx as f64 * g.cell - 1e-9),
                (eye.y + r).min(g.origin[1] + g.ny as f64 * g.cell - 1e-9),
            ),
        ) else {
            return;
        };
        for iy in lo.1..=hi.1 {
            for ix in lo.0..=hi.0 {
                let c = (ix, iy);
                let i = g.index(c);
                if map.searched[i] {
                    continue;
                }
                let (x, y) = g.center(c);
                let p = Point3::new(x, y, g.height(c) + SWEEP_LIFT);
                if in_fov(&self.sensor, &self.sensor_pose(), &p) && g.line_of_sight(&eye, &p, |n| n == c) {
                    map.searched[i] = true;
                }
            }
        }
    }

    fn searchable(&self, c: Cell) -> bool {
        self.world.grid.height(c) < self.sensor.height
    }

    /// Region belief: prior times the unswept fraction of its searchable cells.
    pub fn belief(&self, map: &SearchMap) -> FrontierBelief {
        let mut total = vec![0usize; self.world.regions.len()];
        let mut open = vec![0usize; self.world.regions.len()];
        for c in self.world.grid.cells() {
            if let Some(r) = self.world.region_at(c).filter(|_| self.searchable(c)) {
                total[r] += 1;
                if !map.searched[self.world.grid.index(c)] {
                    open[r] += 1;
                }
            }
        }
        let region_belief = self
            .world
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), if total[i] == 0 { 0.0 } else { r.prior * open[i] as f64 / total[i] as f64 }))
            .collect();
        FrontierBelief { region_belief, lambda_travel: self.cfg.lambda_travel }
    }

    /// Best frontier as (cell, region index, score): a reachable free cell
    /// next to an unswept searchable cell, scored by that cell's region
    /// belief minus travel cost.
    fn best_frontier(&self, map: &SearchMap, belief: &FrontierBelief, blacklist: &HashSet<Cell>) -> Option<(Cell, usize, f64)> {
        let g = &self.world.grid;
        let start = self.world.robot_cell()?;
        let costs = g.costs_from(&self.world.free, start);
        let beliefs: Vec<f64> = self.world.regions.iter().map(|r| belief.region_belief[&r.id]).collect();
        let mut best: Option<(Cell, usize, f64)> = None;
        for c in g.cells() {
            let Some(&cost) = costs.get(&c) else { continue };
            if blacklist.contains(&c) {
                continue;
            }
            let Some((r, b)) = self.frontier_region(map, &beliefs, c) else { continue };
            let score = b - belief.lambda_travel * cost as f64 / STEP_COST as f64;
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((c, r, score));
            }
        }
        best
    }

    /// The frontier search would head for next from a fresh start.
    pub fn next_frontier(&self, map: &SearchMap, belief: &FrontierBelief) -> Option<(Cell, usize, f64)> {
        self.best_frontier(map, belief, &HashSet::new())
    }

    fn frontier_region(&self, map: &SearchMap, beliefs: &[f64], c: Cell) -> Option<(usize, f64)> {
        let g = &self.world.grid;
        let mut best: Option<(usize, f64)> = None;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (x, y) = (c.0 as isize + dx, c.1 as isize + dy);
                if (dx, dy) == (0, 0) || x < 0 || y < 0 || x >= g.nx as isize || y >= g.ny as isize {
                    continue;
                }
                let n = (x as usize, y as usize);
                if map.searched[g.index(n)] || !self.searchable(n) {
                    continue;
                }
                let Some(r) = self.world.region_at(n) else { continue };
                if beliefs[r] > 0.0 && best.is_none_or(|(_, b)| beliefs[r] > b) {
                    best = Some((r, beliefs[r]));
                }
            }
        }
        best
    }

    /// Heading from `c` toward the unswept cells of region `r` in sensor range.
    fn view_heading(&self, map: &SearchMap, c: Cell, r: usize) -> f64 {
        let g = &self.world.grid;
        let (cx, cy) = g.center(c);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for m in g.cells() {
            if map.searched[g.index(m)] || self.world.region_at(m) != Some(r) || !self.searchable(m) {
                continue;
            }
            let (x, y) = g.center(m);
            if (x - cx).hypot(y - cy) <= self.sensor.fov_radius {
                sx += x;
                sy += y;
                n += 1;
            }
        }
        if n == 0 {
            return self.world.robot.theta;
        }
        (sy / n as f64 - cy).atan2(sx / n as f64 - cx)
    }

    /// Moves the robot along a grid path of `cost` units. A leg that
    /// actually travels while carrying may first shake the load loose; it
    /// then falls straight down from the gripper.
    fn navigate(&mut self, to: BasePose, cost: u32) {
        self.world.clock += cost as f64 / STEP_COST as f64 * self.world.grid.cell / NAV_SPEED;
        if cost > 0 {
            if let Some(id) = self.world.held.clone() {
                let slip = self.world.pending_slip || (self.outcomes.p_slip > 0.0 && self.rng.random::<f64>() < self.outcomes.p_slip);
                if slip {
                    self.world.pending_slip = false;
                    let o = &self.world.objects[&id];
                    let (x, y) = (o.position.x, o.position.y);
                    let z = self.surface_z(x, y, o.half_extents[2], &id);
                    self.world.objects.get_mut(&id).expect("held object exists").position = Point3::new(x, y, z);
                    self.world.held = None;
                    self.store.invalidate(&id);
                    self.sync_robot();
                    self.events.push(SimEvent::Slipped { id });
                }
            }
        }
        self.world.robot = to;
        if let Some(id) = &self.world.held {
            let (c, s) = to.heading();
            let o = self.world.objects.get_mut(id).expect("held object exists");
            o.position = Point3::new(to.x + CARRY_AHEAD * c, to.y + CARRY_AHEAD * s, CARRY_HEIGHT);
        }
    }

    /// Path cost from the robot to `goal`, entering through a free
    /// neighbour when the goal cell itself fails the clearance test.
    fn cost_to(&self, goal: &BasePose) -> Option<u32> {
        let g = &self.world.grid;
        if g.disk_collides(goal.x, goal.y, self.cfg.chassis.radius) {
            return None;
        }
        let start = self.world.robot_cell()?;
        let gc = g.cell_of(goal.x, goal.y)?;
        if self.world.free[g.index(gc)] || gc == start {
            return g.path_cost(&self.world.free, start, gc);
        }
        let mut best = None;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (x, y) = (gc.0 as isize + dx, gc.1 as isize + dy);
                if x < 0 || y < 0 || x >= g.nx as isize || y >= g.ny as isize {
                    continue;
                }
                let n = (x as usize, y as usize);
                if self.world.free[g.index(n)] {
                    if let Some(c) = g.path_cost(&self.world.free, start, n) {
                        best = Some(best.map_or(c + STEP_COST, |b: u32| b.min(c + STEP_COST)));
                    }
                }
            }
        }
        best
    }

    /// Cheapest reachable free cell whose center lies within `range` of
    /// `target`, preferring cells at least `min_range` away.
    fn standoff(&self, target: &Point3, min_range: f64, range: f64) -> Option<(BasePose, u32)> {
        let g = &self.world.grid;
        let start = self.world.robot_cell()?;
        let costs = g.costs_from(&self.world.free, start);
        let mut best: Option<(Cell, u32, bool)> = None;
        for c in g.cells() {
            let Some(&cost) = costs.get(&c) else { continue };
            let (x, y) = g.center(c);
            let d = (x - target.x).hypot(y - target.y);
            if d > range || g.disk_collides(x, y, self.cfg.chassis.radius) {
                continue;
            }
            let preferred = d >= min_range;
            let better = match best {
                None => true,
                Some((_, bc, bp)) => (preferred && !bp) || (preferred == bp && cost < bc),
            };
            if better {
                best = Some((c, cost, preferred));
            }
        }
        let (c, cost, _) = best?;
        let (x, y) = g.center(c);
        Some((BasePose::new(x, y, (target.y - y).atan2(target.x - x)), cost))
    }

    fn face(&mut self, target: &Point3) {
        let r = self.world.robot;
        self.world.robot = BasePose::new(r.x, r.y, (target.y - r.y).atan2(target.x - r.x));
    }

    /// Perceives with the sensor panned toward the first anchored id until
    /// every id is stably segmented.
    fn dwell(&mut self, ids: &[&str]) {
        let r = self.world.robot;
        self.gaze = ids.iter().find_map(|id| self.store.objects.get(*id)).map(|a| (a.expected_position.y - r.y).atan2(a.expected_position.x - r.x));
        for _ in 0..DWELL_TICKS {
            self.perceive(None);
            if ids.iter().all(|id| self.store.objects.get(*id).is_some_and(|a| a.stable_segmented)) {
                break;
            }
        }
        self.gaze = None;
    }

    /// Perceives in [`SCAN_VIEWS`] directions starting at the current heading
    /// and stops at the first view that detects `target`.
    fn scan(&mut self, target: &str, map: &mut SearchMap) -> bool {
        let theta = self.world.robot.theta;
        let mut found = false;
        for k in 0..SCAN_VIEWS {
            self.gaze = Some(wrap(theta + k as f64 * std::f64::consts::TAU / SCAN_VIEWS as f64));
            self.perceive(Some(map));
            let cycle = self.store.cycle;
            if self.store.objects.get(target).is_some_and(|a| a.last_observed_cycle == Some(cycle)) {
                found = true;
                break;
            }
        }
        self.gaze = None;
        found
    }

    /// Frontier search until `target` is detected, then approach to within
    /// [`APPROACH_RANGE`] and wait for the anchor to stabilize.
    pub fn obj_find(&mut self, target: &str) -> Outcome {
        let mut map = SearchMap::new(&self.world);
        let mut blacklist = HashSet::new();
        for _ in 0..MAX_FIND_STEPS {
            if self.scan(target, &mut map) {
                return self.approach(target);
            }
            let belief = self.belief(&map);
            if belief.region_belief.values().all(|&b| b <= 0.0) {
                return Outcome::Exhausted;
            }
            let Some((c, r, _)) = self.best_frontier(&map, &belief, &blacklist) else {
                return Outcome::Exhausted;
            };
            blacklist.insert(c);
            let (x, y) = self.world.grid.center(c);
            let heading = self.view_heading(&map, c, r);
            let start = self.world.robot_cell().expect("robot inside grid");
            let cost = self.world.grid.path_cost(&self.world.free, start, c).unwrap_or(0);
            let goal = if c == start { BasePose::new(self.world.robot.x, self.world.robot.y, heading) } else { BasePose::new(x, y, heading) };
            self.navigate(goal, cost);
        }
        Outcome::Exhausted
    }

    fn approach(&mut self, target: &str) -> Outcome {
        let p = self.store.objects[target].expected_position;
        if self.world.robot.planar_distance_to(&p) > APPROACH_RANGE {
            let Some((goal, cost)) = self.standoff(&p, 0.0, APPROACH_RANGE) else {
                return Outcome::Unreachable;
            };
            self.navigate(goal, cost);
        } else {
            self.face(&p);
        }
        self.dwell(&[target]);
        Outcome::Found
    }

    /// Moves to a base pose serving `target` and confirms `aligned` by
    /// re-anchoring.
    pub fn align(&mut self, target: &str) -> Outcome {
        self.world.clock += ALIGN_SECONDS;
        let Some(anchor) = self.store.objects.get(target).map(|a| a.expected_position) else {
            return Outcome::AlignFailed;
        };
        let (goal, cost) = match self.cfg.align_mode {
            AlignMode::Refine => {
                let r = self.world.robot;
                let azimuth = (anchor.y - r.y).atan2(anchor.x - r.x);
                let ee = EEPose::tilted(anchor, azimuth, GRASP_TILT);
                let cloud = self.world.grid.obstacle_cloud(&anchor, CLOUD_RADIUS);
                self.align_calls += 1;
                let seed = self.seed.derive(0xA11 + self.align_calls);
                let res = refine_base_pose(&ee, &self.align_shell, &cloud, &self.cfg.chassis, &self.cfg.alignment, &self.cfg.pso, seed);
                if !res.feasible {
                    return Outcome::AlignFailed;
                }
                match self.cost_to(&res.pose) {
                    Some(cost) => (res.pose, cost),
                    None => return Outcome::AlignFailed,
                }
            }
            AlignMode::Approach => {
                let near = self.cfg.predicates.eps_near;
                match self.standoff(&anchor, near - self.world.grid.cell, near) {
                    Some(g) => g,
                    None => return Outcome::AlignFailed,
                }
            }
        };
        self.navigate(goal, cost);
        self.dwell(&[target]);
        if self.state().contains(&Predicate::Aligned(target.to_string())) {
            Outcome::Aligned
        } else {
            Outcome::AlignFailed
        }
    }

    fn synth_candidates(&mut self, center: &Point3, in_shell: bool) -> (Vec<GraspCandidate>, Vec<GraspCandidate>) {
        let (lo, hi) = if in_shell { (0.0, 12f64.to_radians()) } else { (25f64.to_radians(), 50f64.to_radians()) };
        let mut prev = Vec::with_capacity(GRASP_CANDIDATES);
        let mut cur = Vec::with_capacity(GRASP_CANDIDATES);
        for _ in 0..GRASP_CANDIDATES {
            let tilt = self.rng.random_range(lo..hi);
            let az = self.rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let p = center.offset(self.rng.random_range(-0.01..0.01), self.rng.random_range(-0.01..0.01), 0.0);
            let conf = self.rng.random_range(0.5..1.0);
            prev.push(GraspCandidate { pose: EEPose::tilted(p, az, std::f64::consts::FRAC_PI_2 - tilt), confidence: conf, frame_index: 0 });
            let q = p.offset(self.rng.random_range(-0.003..0.003), self.rng.random_range(-0.003..0.003), 0.0);
            let t2 = (tilt + self.rng.random_range(-1f64.to_radians()..1f64.to_radians())).max(0.0);
            let c2 = (conf * self.rng.random_range(0.95..1.0)).clamp(0.0, 1.0);
            cur.push(GraspCandidate { pose: EEPose::tilted(q, az, std::f64::consts::FRAC_PI_2 - t2), confidence: c2, frame_index: 1 });
        }
        (cur, prev)
    }

    /// Closes the gripper on the anchored target. Success needs the real
    /// object under the aim point; its odds depend on the object actually
    /// lying in the shell and the best grasp passing the tilt filter.
    pub fn grasp(&mut self, target: &str) -> Outcome {
        self.world.clock += GRASP_SECONDS;
        let aim = self.store.objects.get(target).map(|a| a.expected_position);
        let truth = self.world.objects.get(target).cloned();
        let robot = self.world.robot;
        let in_shell = truth.as_ref().is_some_and(|o| self.shell.contains(&se2_inverse_transform(&robot, &o.position)));
        let captured = match (&truth, aim) {
            (Some(o), Some(a)) => o.graspable && self.world.held.is_none() && o.position.planar_distance(&a) <= GRASP_CAPTURE,
            _ => false,
        };
        let center = truth.as_ref().map_or(aim.unwrap_or(Point3::ORIGIN), |o| o.position);
        let (cur, prev) = self.synth_candidates(&center, in_shell);
        let ranked = match_and_score(&cur, &prev, &self.cfg.grasp);
        let passes = ranked.first().is_some_and(|top| tilt_penalty(&cur[top.current], &self.cfg.grasp) >= TILT_PASS);
        let p = if in_shell && passes { self.outcomes.p_grasp } else { self.outcomes.p_grasp_misaligned };
        let draw: f64 = self.rng.random();
        let knock: f64 = self.rng.random();
        if captured && draw < p {
            self.world.held = Some(target.to_string());
        } else if captured && !in_shell && knock < self.outcomes.p_knock {
            self.world.objects.remove(target);
            self.world_log.push(format!("{target} knocked out of the workspace"));
        }
        self.perceive(None);
        if self.state().contains(&Predicate::Holding(target.to_string())) {
            Outcome::Holding
        } else {
            Outcome::EmptyGrasp
        }
    }

    /// Resting height for an object of half height `hz` released at (x, y).
    fn surface_z(&self, x: f64, y: f64, hz: f64, skip: &str) -> f64 {
        let support = self
            .world
            .objects
            .values()
            .filter(|o| o.container && o.id != skip && o.footprint().contains_xy(x, y))
            .map(|o| o.top())
            .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
        let floor = self.world.grid.cell_of(x, y).map_or(0.0, |c| self.world.grid.height(c));
        support.unwrap_or(floor).max(floor) + hz
    }

    /// Releases the held object above the anchored container centroid.
    pub fn place(&mut self, obj: &str, container: &str) -> Outcome {
        self.world.clock += PLACE_SECONDS;
        if self.world.held.as_deref() != Some(obj) {
            return Outcome::PlacementMiss;
        }
        let r = self.world.robot;
        let drop = self.store.objects.get(container).and_then(|a| {
            let (cx, cy) = a.footprint_xy?.center();
            let top = a.cloud.points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
            Some(Point3::new(cx, cy, top + PLACE_CLEARANCE))
        });
        let (x, y) = match drop {
            Some(d) => {
                let reachable = self.shell.contains(&se2_inverse_transform(&r, &d));
                let (nx, ny): (f64, f64) = (self.rng.random_range(-PLACE_NOISE..PLACE_NOISE), self.rng.random_range(-PLACE_NOISE..PLACE_NOISE));
                let lucky = self.rng.random::<f64>() < self.outcomes.p_place_misaligned;
                if reachable || lucky {
                    (d.x + nx, d.y + ny)
                } else {
                    let (dx, dy) = (d.x - r.x, d.y - r.y);
                    let n = dx.hypot(dy).max(1e-9);
                    (r.x + dx / n * SHORT_REACH, r.y + dy / n * SHORT_REACH)
                }
            }
            None => (r.x, r.y),
        };
        let hz = self.world.objects[obj].half_extents[2];
        let z = self.surface_z(x, y, hz, obj);
        self.world.objects.get_mut(obj).expect("held object exists").position = Point3::new(x, y, z);
        self.world.held = None;
        // The robot moved it; the old anchor is known to be stale.
        self.store.invalidate(obj);
        self.dwell(&[obj, container]);
        if self.state().contains(&Predicate::In(obj.to_string(), container.to_string())) {
            Outcome::Placed
        } else {
            Outcome::PlacementMiss
        }
    }

    pub fn dispatch(&mut self, action: ActionName, args: &[String]) -> Outcome {
        match action {
            ActionName::ObjFind => self.obj_find(&args[0]),
            ActionName::Align => self.align(&args[0]),
            ActionName::Grasp => self.grasp(&args[0]),
            ActionName::Place => self.place(&args[0], &args[1]),
        }
    }

    /// Fires every unfired event whose trigger matches; returns their
    /// descriptions.
    pub fn apply_disturbances(
        &mut self,
        script: &DisturbanceScript,
        cycle: u64,
        successes: &BTreeMap<(ActionName, String), u32>,
        fired: &mut [bool],
    ) -> Vec<String> {
        let mut out = Vec::new();
        for (i, e) in script.events.iter().enumerate() {
            if fired[i] {
                continue;
            }
            let due = match &e.trigger {
                Trigger::Cycle(c) => *c == cycle,
                Trigger::After { action, object, count } => successes.get(&(*action, object.clone())).is_some_and(|n| n >= count),
            };
            if !due {
                continue;
            }
            fired[i] = true;
            out.push(self.apply_effect(&e.effect));
        }
        out
    }

    fn apply_effect(&mut self, effect: &Effect) -> String {
        match effect {
            Effect::Displace { id, dx, dy } => {
                if self.world.held.as_deref() == Some(id.as_str()) || !self.world.objects.contains_key(id) {
                    return format!("displace {id} skipped");
                }
                let (x, y, hz) = {
                    let o = &self.world.objects[id];
                    (o.position.x + dx, o.position.y + dy, o.half_extents[2])
                };
                let z = self.surface_z(x, y, hz, id);
                self.world.objects.get_mut(id).expect("checked").position = Point3::new(x, y, z);
                format!("displace {id} by ({dx}, {dy})")
            }
            Effect::Occlude { id, ticks } => {
                self.world.occluded.insert(id.clone(), *ticks);
                format!("occlude {id} for {ticks} ticks")
            }
            Effect::Remove { id } => {
                self.world.objects.remove(id);
                if self.world.held.as_deref() == Some(id.as_str()) {
                    self.world.held = None;
                }
                format!("remove {id}")
            }
            Effect::Slip => {
                self.world.pending_slip = true;
                "slip armed".to_string()
            }
        }
    }
}
