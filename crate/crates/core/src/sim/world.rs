use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::grid::{Cell, Grid};
use crate::geometry::{BasePose, Box2, Point3};
use crate::planner::ActionName;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub id: String,
    /// Center of the object's bounding box.
    pub position: Point3,
    pub half_extents: [f64; 3],
    pub container: bool,
    pub graspable: bool,
}

impl SimObject {
    pub fn footprint(&self) -> Box2 {
        Box2::centered(self.position.x, self.position.y, self.half_extents[0], self.half_extents[1])
    }

    pub fn top(&self) -> f64 {
        self.position.z + self.half_extents[2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub prior: f64,
    pub rects: Vec<Box2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub fov_radius: f64,
    pub fov_halfangle: f64,
    pub p_detect: f64,
    pub position_noise_sigma: f64,
    /// Camera height above the floor.
    pub height: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { fov_radius: 2.5, fov_halfangle: 0.8, p_detect: 0.95, position_noise_sigma: 0.02, height: 1.0 }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fov_radius > 0.0 && self.fov_halfangle > 0.0 && self.height > 0.0) {
            return Err("sensor range, half-angle and height must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.p_detect) {
            return Err("p_detect must lie in [0, 1]".into());
        }
        if !(self.position_noise_sigma >= 0.0) {
            return Err("position noise must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub p_grasp: f64,
    pub p_grasp_misaligned: f64,
    /// Chance that a failed grasp from outside the shell knocks the object
    /// out of the workspace.
    pub p_knock: f64,
    pub p_place_misaligned: f64,
    pub p_slip: f64,
}

impl Default for OutcomeModel {
    fn default() -> Self {
        Self { p_grasp: 0.9, p_grasp_misaligned: 0.3, p_knock: 0.2, p_place_misaligned: 0.7, p_slip: 0.0 }
    }
}

impl OutcomeModel {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("p_grasp", self.p_grasp),
            ("p_grasp_misaligned", self.p_grasp_misaligned),
            ("p_knock", self.p_knock),
            ("p_place_misaligned", self.p_place_misaligned),
            ("p_slip", self.p_slip),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    /// Fires at the start of this executive cycle.
    Cycle(u64),
    /// Fires at the start of the cycle following the `count`-th successful
    /// dispatch of `action` on `object`.
    After { action: ActionName, object: String, count: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Effect {
    Displace { id: String, dx: f64, dy: f64 },
    /// Suppresses detection of `id` for this many perception ticks.
    Occlude { id: String, ticks: u32 },
    Remove { id: String },
    /// The next navigation leg while carrying drops the load.
    Slip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub trigger: Trigger,
    pub effect: Effect,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceScript {
    pub events: Vec<Disturbance>,
}

impl DisturbanceScript {
    pub fn validate(&self) -> Result<(), String> {
        let mut last = 0;
        for e in &self.events {
            if let Trigger::Cycle(c) = e.trigger {
                if c < last {
                    return Err(format!("cycle trigger {c} follows {last}"));
                }
                last = c;
            }
        }
        Ok(())
    }
}

/// Ground truth of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub grid: Grid,
    /// Cells whose center can host the robot disk.
    pub free: Vec<bool>,
    pub regions: Vec<Region>,
    /// Region index per cell.
    pub region_of: Vec<Option<usize>>,
    pub objects: BTreeMap<String, SimObject>,
    pub robot: BasePose,
    pub held: Option<String>,
    /// Remaining occluded perception ticks per object.
    pub occluded: BTreeMap<String, u32>,
    pub pending_slip: bool,
    /// Simulated seconds elapsed.
    pub clock: f64,
}

impl World {
    pub fn new(grid: Grid, regions: Vec<Region>, objects: BTreeMap<String, SimObject>, robot: BasePose, robot_radius: f64) -> Self {
        let free = grid.clearance_map(robot_radius);
        let region_of = grid
            .cells()
            .map(|c| {
                let (x, y) = grid.center(c);
                regions.iter().position(|r| r.rects.iter().any(|b| b.contains_xy(x, y)))
            })
            .collect();
        Self { grid, free, regions, region_of, objects, robot, held: None, occluded: BTreeMap::new(), pending_slip: false, clock: 0.0 }
    }

    pub fn robot_cell(&self) -> Option<Cell> {
        self.grid.cell_of(self.robot.x, self.robot.y)
    }

    pub fn region_at(&self, c: Cell) -> Option<usize> {
        self.region_of[self.grid.index(c)]
    }

    /// Cells covered by an object's footprint.
    pub fn footprint_cells(&self, id: &str) -> Vec<Cell> {
        let Some(o) = self.objects.get(id) else { return Vec::new() };
        let b = o.footprint();
        let (Some(lo), Some(hi)) = (self.grid.cell_of(b.min_x, b.min_y), self.grid.cell_of(b.max_x, b.max_y)) else {
            return self.grid.cell_of(o.position.x, o.position.y).into_iter().collect();
        };
        (lo.1..=hi.1).flat_map(|y| (lo.0..=hi.0).map(move |x| (x, y))).collect()
    }
}
