//! Line-oriented scenario files. The format is described in
//! `scenarios/FORMAT.md`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::Grid;
use super::world::{Disturbance, DisturbanceScript, Effect, OutcomeModel, Region, SensorModel, SimObject, Trigger, World};
use crate::alignment::ChassisModel;
use crate::error::ScenarioError;
use crate::geometry::{BasePose, Box2, Point3};
use crate::planner::{ActionName, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub level: u8,
    pub world: World,
    pub sensor: SensorModel,
    pub outcomes: OutcomeModel,
    pub disturbances: DisturbanceScript,
    pub task: TaskSpec,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::new(0, format!("{}: {e}", path.display())))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::parse(&name, &text)
    }

    pub fn parse(name: &str, text: &str) -> Result<Self, ScenarioError> {
        Parser::default().run(name, text)
    }
}

#[derive(Default)]
struct Parser {
    size: Option<(f64, f64)>,
    origin: [f64; 2],
    cell: Option<f64>,
    rects: Vec<(usize, [f64; 5])>,
    regions: Vec<Region>,
    objects: BTreeMap<String, (usize, SimObject)>,
    robot: Option<BasePose>,
    sensor: SensorModel,
    outcomes: OutcomeModel,
    events: Vec<(usize, Disturbance)>,
    task_obj: Option<String>,
    task_container: Option<String>,
    instruction: String,
    level: Option<u8>,
}

fn num(line: usize, tok: Option<&str>, what: &str) -> Result<f64, ScenarioError> {
    let tok = tok.ok_or_else(|| ScenarioError::new(line, format!("missing {what}")))?;
    let v: f64 = tok.parse().map_err(|_| ScenarioError::new(line, format!("{what}: `{tok}` is not a number")))?;
    if !v.is_finite() {
        return Err(ScenarioError::new(line, format!("{what} must be finite")));
    }
    Ok(v)
}

fn word<'a>(line: usize, tok: Option<&'a str>, what: &str) -> Result<&'a str, ScenarioError> {
    tok.ok_or_else(|| ScenarioError::new(line, format!("missing {what}")))
}

fn nums<const N: usize>(line: usize, toks: &mut std::str::SplitWhitespace<'_>, what: &str) -> Result<[f64; N], ScenarioError> {
    let mut out = [0.0; N];
    for v in &mut out {
        *v = num(line, toks.next(), what)?;
    }
    Ok(out)
}

impl Parser {
    fn run(mut self, name: &str, text: &str) -> Result<Scenario, ScenarioError> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(s) = content.strip_prefix('[') {
                section = s
                    .strip_suffix(']')
                    .ok_or_else(|| ScenarioError::new(line, "unterminated section header"))?
                    .trim()
                    .to_string();
                if !["grid", "occupied", "regions", "objects", "robot", "sensor", "outcomes", "disturbances", "task"].contains(&section.as_str()) {
                    return Err(ScenarioError::new(line, format!("unknown section [{section}]")));
                }
                continue;
            }
            let mut toks = content.split_whitespace();
            let key = toks.next().unwrap_or_default();
            match section.as_str() {
                "" => return Err(ScenarioError::new(line, "entry before any section header")),
                "grid" => self.grid_line(line, key, &mut toks)?,
                "occupied" => {
                    if key != "rect" {
                        return Err(ScenarioError::new(line, format!("expected `rect`, found `{key}`")));
                    }
                    let r = nums::<5>(line, &mut toks, "rect x0 y0 x1 y1 height")?;
                    if r[0] > r[2] || r[1] > r[3] || r[4] <= 0.0 {
                        return Err(ScenarioError::new(line, "rect needs x0 <= x1, y0 <= y1 and a positive height"));
                    }
                    self.rects.push((line, r));
                }
                "regions" => self.region_line(line, key, &mut toks)?,
                "objects" => self.object_line(line, key, &mut toks)?,
                "robot" => {
                    if key != "pose" {
                        return Err(ScenarioError::new(line, format!("expected `pose`, found `{key}`")));
                    }
                    let [x, y, t] = nums::<3>(line, &mut toks, "pose x y theta")?;
                    self.robot = Some(BasePose::new(x, y, t));
                }
                "sensor" => {
                    let v = num(line, toks.next(), key)?;
                    match key {
                        "fov_radius" => self.sensor.fov_radius = v,
                        "fov_halfangle" => self.sensor.fov_halfangle = v,
                        "p_detect" => self.sensor.p_detect = v,
                        "noise" => self.sensor.position_noise_sigma = v,
                        "height" => self.sensor.height = v,
                        _ => return Err(ScenarioError::new(line, format!("unknown sensor key `{key}`"))),
                    }
                }
                "outcomes" => {
                    let v = num(line, toks.next(), key)?;
                    match key {
                        "p_grasp" => self.outcomes.p_grasp = v,
                        "p_grasp_misaligned" => self.outcomes.p_grasp_misaligned = v,
                        "p_knock" => self.outcomes.p_knock = v,
                        "p_place_misaligned" => self.outcomes.p_place_misaligned = v,
                        "p_slip" => self.outcomes.p_slip = v,
                        _ => return Err(ScenarioError::new(line, format!("unknown outcome key `{key}`"))),
                    }
                }
                "disturbances" => self.disturbance_line(line, key, &mut toks)?,
                "task" => match key {
                    "object" => self.task_obj = Some(word(line, toks.next(), "object id")?.to_string()),
                    "container" => self.task_container = Some(word(line, toks.next(), "container id")?.to_string()),
                    "instruction" => self.instruction = toks.by_ref().collect::<Vec<_>>().join(" "),
                    "level" => {
                        let v = num(line, toks.next(), "level")?;
                        if ![1.0, 2.0, 3.0].contains(&v) {
                            return Err(ScenarioError::new(line, "level must be 1, 2 or 3"));
                        }
                        self.level = Some(v as u8);
                    }
                    _ => return Err(ScenarioError::new(line, format!("unknown task key `{key}`"))),
                },
                _ => unreachable!(),
            }
            if !matches!(section.as_str(), "task" | "disturbances") {
                if let Some(extra) = toks.next() {
                    return Err(ScenarioError::new(line, format!("unexpected token `{extra}`")));
                }
            }
        }
        self.finish(name)
    }

    fn grid_line(&mut self, line: usize, key: &str, toks: &mut std::str::SplitWhitespace<'_>) -> Result<(), ScenarioError> {
        match key {
            "size" => {
                let [w, h] = nums::<2>(line, toks, "size width height")?;
                if w <= 0.0 || h <= 0.0 {
                    return Err(ScenarioError::new(line, "grid size must be positive"));
                }
                self.size = Some((w, h));
            }
            "origin" => self.origin = nums::<2>(line, toks, "origin x y")?,
            "cell" => {
                let c = num(line, toks.next(), "cell size")?;
                if c <= 0.0 {
                    return Err(ScenarioError::new(line, "cell size must be positive"));
                }
                self.cell = Some(c);
            }
            _ => return Err(ScenarioError::new(line, format!("unknown grid key `{key}`"))),
        }
        Ok(())
    }

    fn region_line(&mut self, line: usize, key: &str, toks: &mut std::str::SplitWhitespace<'_>) -> Result<(), ScenarioError> {
        if key != "region" {
            return Err(ScenarioError::new(line, format!("expected `region`, found `{key}`")));
        }
        let id = word(line, toks.next(), "region id")?.to_string();
        let prior = num(line, toks.next(), "prior")?;
        let [x0, y0, x1, y1] = nums::<4>(line, toks, "region x0 y0 x1 y1")?;
        if !(0.0..=1.0).contains(&prior) {
            return Err(ScenarioError::new(line, "prior must lie in [0, 1]"));
        }
        if x0 > x1 || y0 > y1 {
            return Err(ScenarioError::new(line, "region needs x0 <= x1 and y0 <= y1"));
        }
        let rect = Box2::new(x0, y0, x1, y1);
        match self.regions.iter_mut().find(|r| r.id == id) {
            Some(r) if r.prior != prior => return Err(ScenarioError::new(line, format!("region `{id}` redeclared with a different prior"))),
            Some(r) => r.rects.push(rect),
            None => self.regions.push(Region { id, prior, rects: vec![rect] }),
        }
        Ok(())
    }

    fn object_line(&mut self, line: usize, key: &str, toks: &mut std::str::SplitWhitespace<'_>) -> Result<(), ScenarioError> {
        if key != "object" {
            return Err(ScenarioError::new(line, format!("expected `object`, found `{key}`")));
        }
        let id = word(line, toks.next(), "object id")?.to_string();
        if id == crate::anchors::ROBOT {
            return Err(ScenarioError::new(line, "object id `r` is reserved for the robot"));
        }
        let [x, y, z, hx, hy, hz] = nums::<6>(line, toks, "object x y z half_x half_y half_z")?;
        if hx <= 0.0 || hy <= 0.0 || hz <= 0.0 {
            return Err(ScenarioError::new(line, "object half extents must be positive"));
        }
        let mut obj = SimObject { id: id.clone(), position: Point3::new(x, y, z), half_extents: [hx, hy, hz], container: false, graspable: true };
        for flag in toks.by_ref() {
            match flag {
                "container" => obj.container = true,
                "fixed" => obj.graspable = false,
                _ => return Err(ScenarioError::new(line, format!("unknown object flag `{flag}`"))),
            }
        }
        if self.objects.insert(id.clone(), (line, obj)).is_some() {
            return Err(ScenarioError::new(line, format!("object `{id}` declared twice")));
        }
        Ok(())
    }

    fn disturbance_line(&mut self, line: usize, key: &str, toks: &mut std::str::SplitWhitespace<'_>) -> Result<(), ScenarioError> {
        let trigger = match key {
            "at" => {
                let c = num(line, toks.next(), "cycle")?;
                if c < 0.0 || c.fract() != 0.0 {
                    return Err(ScenarioError::new(line, "cycle must be a non-negative integer"));
                }
                Trigger::Cycle(c as u64)
            }
            "after" => {
                let action: ActionName = word(line, toks.next(), "action")?.parse().map_err(|e: String| ScenarioError::new(line, e))?;
                let object = word(line, toks.next(), "object")?.to_string();
                Trigger::After { action, object, count: 1 }
            }
            _ => return Err(ScenarioError::new(line, format!("expected `at` or `after`, found `{key}`"))),
        };
        let mut effect_word = word(line, toks.next(), "effect")?;
        let trigger = match (trigger, effect_word.parse::<u32>()) {
            (Trigger::After { action, object, .. }, Ok(n)) if n >= 1 => {
                effect_word = word(line, toks.next(), "effect")?;
                Trigger::After { action, object, count: n }
            }
            (t, _) => t,
        };
        let effect = match effect_word {
            "displace" => {
                let id = word(line, toks.next(), "object id")?.to_string();
                let [dx, dy] = nums::<2>(line, toks, "displace dx dy")?;
                Effect::Displace { id, dx, dy }
            }
            "occlude" => {
                let id = word(line, toks.next(), "object id")?.to_string();
                let t = num(line, toks.next(), "occlusion ticks")?;
                if t < 1.0 || t.fract() != 0.0 {
                    return Err(ScenarioError::new(line, "occlusion ticks must be a positive integer"));
                }
                Effect::Occlude { id, ticks: t as u32 }
            }
            "remove" => Effect::Remove { id: word(line, toks.next(), "object id")?.to_string() },
            "slip" => Effect::Slip,
            other => return Err(ScenarioError::new(line, format!("unknown effect `{other}`"))),
        };
        if let Some(extra) = toks.next() {
            return Err(ScenarioError::new(line, format!("unexpected token `{extra}`")));
        }
        self.events.push((line, Disturbance { trigger, effect }));
        Ok(())
    }

    fn finish(self, name: &str) -> Result<Scenario, ScenarioError> {
        let (w, h) = self.size.ok_or_else(|| ScenarioError::new(0, "[grid] size is required"))?;
        let cell = self.cell.unwrap_or(0.1);
        let (nx, ny) = ((w / cell).round() as usize, (h / cell).round() as usize);
        if nx == 0 || ny == 0 {
            return Err(ScenarioError::new(0, "grid has no cells"));
        }
        let mut grid = Grid::new(self.origin, cell, nx, ny);
        for (_, r) in &self.rects {
            grid.fill_rect(r[0], r[1], r[2], r[3], r[4]);
        }
        let prior_sum: f64 = self.regions.iter().map(|r| r.prior).sum();
        if prior_sum > 1.0 + 1e-9 {
            return Err(ScenarioError::new(0, format!("region priors sum to {prior_sum} > 1")));
        }
        let mut objects = BTreeMap::new();
        for (id, (line, o)) in self.objects {
            if grid.cell_of(o.position.x, o.position.y).is_none() {
                return Err(ScenarioError::new(line, format!("object `{id}` lies outside the grid")));
            }
            objects.insert(id, o);
        }
        let robot = self.robot.ok_or_else(|| ScenarioError::new(0, "[robot] pose is required"))?;
        let radius = ChassisModel::default().radius;
        if grid.disk_collides(robot.x, robot.y, radius) {
            return Err(ScenarioError::new(0, "robot start pose collides with an occupied cell"));
        }
        let task = TaskSpec {
            task_obj: self.task_obj.ok_or_else(|| ScenarioError::new(0, "[task] object is required"))?,
            task_container: self.task_container.ok_or_else(|| ScenarioError::new(0, "[task] container is required"))?,
            instruction_text: self.instruction,
        };
        task.validate().map_err(|e| ScenarioError::new(0, e))?;
        if let Some(c) = objects.get(&task.task_container) {
            if !c.container {
                return Err(ScenarioError::new(0, format!("task container `{}` lacks the container flag", c.id)));
            }
        }
        self.sensor.validate().map_err(|e| ScenarioError::new(0, e))?;
        self.outcomes.validate().map_err(|e| ScenarioError::new(0, e))?;
        for (line, d) in &self.events {
            let id = match (&d.trigger, &d.effect) {
                (_, Effect::Displace { id, .. } | Effect::Occlude { id, .. } | Effect::Remove { id }) => Some(id),
                (Trigger::After { object, .. }, Effect::Slip) => Some(object),
                _ => None,
            };
            if let Some(id) = id.filter(|id| !objects.contains_key(*id)) {
                return Err(ScenarioError::new(*line, format!("disturbance names unknown object `{id}`")));
            }
        }
        let disturbances = DisturbanceScript { events: self.events.into_iter().map(|(_, d)| d).collect() };
        disturbances.validate().map_err(|e| ScenarioError::new(0, e))?;
        Ok(Scenario {
            name: name.to_string(),
            level: self.level.unwrap_or(1),
            world: World::new(grid, self.regions, objects, robot, radius),
            sensor: self.sensor,
            outcomes: self.outcomes,
            disturbances,
            task,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
[grid]
size 4 3
[occupied]
rect 1.5 1.0 2.5 2.0 0.6   # table
[regions]
region room 1.0 0 0 4 3
[objects]
object orange 1.6 1.1 0.64 0.04 0.04 0.04
object bowl 2.2 1.5 0.65 0.1 0.1 0.05 container
[robot]
pose 0.5 1.5 0
[disturbances]
after align orange displace orange 1.0 0
at 3 occlude orange 2
after grasp orange 2 slip
[task]
object orange
container bowl
level 3
instruction put the orange in the bowl
";

    #[test]
    fn parses_every_section() {
        let s = Scenario::parse("small", SMALL).unwrap();
        assert_eq!(s.level, 3);
        assert_eq!(s.world.grid.nx, 40);
        assert!(s.world.objects["bowl"].container);
        assert_eq!(s.task.instruction_text, "put the orange in the bowl");
        assert_eq!(s.disturbances.events.len(), 3);
        assert_eq!(
            s.disturbances.events[2].trigger,
            Trigger::After { action: ActionName::Grasp, object: "orange".into(), count: 2 }
        );
        assert!(s.world.grid.occupied(s.world.grid.cell_of(2.0, 1.5).unwrap()));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = SMALL.replace("object bowl 2.2", "object bowl x2.2");
        let e = Scenario::parse("bad", &bad).unwrap_err();
        assert_eq!(e.line, 9);
        let bad = SMALL.replace("[robot]", "[robit]");
        assert_eq!(Scenario::parse("bad", &bad).unwrap_err().line, 10);
        let bad = SMALL.replace("displace orange 1.0 0", "displace pear 1.0 0");
        assert_eq!(Scenario::parse("bad", &bad).unwrap_err().line, 13);
    }

    #[test]
    fn rejects_inconsistent_worlds() {
        assert!(Scenario::parse("x", &SMALL.replace("pose 0.5 1.5 0", "pose 2.0 1.5 0")).is_err());
        assert!(Scenario::parse("x", &SMALL.replace("region room 1.0", "region room 1.5")).is_err());
        assert!(Scenario::parse("x", &SMALL.replace(" container\n", "\n")).is_err());
        assert!(Scenario::parse("x", &SMALL.replace("at 3 occlude", "at 3 vanish")).is_err());
    }
}
