use std::collections::BTreeMap;
use std::path::Path;

use anchor_core::alignment::ChassisModel;
use anchor_core::anchors::overlap_ratio;
use anchor_core::executive::{run_scenario, Ablation};
use anchor_core::geometry::{se2_inverse_transform, wrap, RngSeed};
use anchor_core::reachability::default_shell;
use anchor_core::sim::{AlignMode, Outcome, Scenario, SearchMap, Sim, SimConfig, SimEvent, CARRY_AHEAD, CARRY_HEIGHT};

fn scenario(text: &str) -> Scenario {
    Scenario::parse("fixture", text).unwrap()
}

fn fixture(name: &str) -> Scenario {
    Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/fixtures").join(name)).unwrap()
}

/// Robot at (1, 2) facing +x with the orange on the floor 2.2 m ahead.
fn open_room(extra_occupied: &str, sensor: &str, outcomes: &str) -> Scenario {
    scenario(&format!(
        "[grid]\nsize 5 4\n[occupied]\n{extra_occupied}\n[regions]\nregion room 1.0 0 0 5 4\n\
         [objects]\nobject orange 3.2 2.0 0.04 0.04 0.04 0.04\nobject bowl 3.2 3.0 0.05 0.1 0.1 0.05 container\n\
         [robot]\npose 1.0 2.0 0\n[sensor]\n{sensor}\n[outcomes]\n{outcomes}\n[task]\nobject orange\ncontainer bowl\n"
    ))
}

#[test]
fn wall_hides_the_object() {
    let shell = default_shell();
    let clear = open_room("", "p_detect 1.0\nnoise 0.0", "");
    let mut sim = Sim::new(&clear, shell, SimConfig::default(), RngSeed(1));
    sim.perceive(None);
    assert!(sim.store.objects.contains_key("orange"));

    let walled = open_room("rect 2.4 0 2.6 4 2.0", "p_detect 1.0\nnoise 0.0", "");
    let mut sim = Sim::new(&walled, shell, SimConfig::default(), RngSeed(1));
    sim.perceive(None);
    assert!(!sim.store.objects.contains_key("orange"));
}

#[test]
fn noiseless_detection_is_exact() {
    let s = open_room("", "p_detect 1.0\nnoise 0.0", "");
    let mut sim = Sim::new(&s, default_shell(), SimConfig::default(), RngSeed(7));
    sim.perceive(None);
    assert_eq!(sim.store.objects["orange"].expected_position, s.world.objects["orange"].position);
}

#[test]
fn detection_rate_matches_p_detect() {
    let s = open_room("", "p_detect 0.95", "");
    let shell = default_shell();
    let hits = (0..1000)
        .filter(|&i| {
            let mut sim = Sim::new(&s, shell, SimConfig::default(), RngSeed(i));
            sim.perceive(None);
            sim.store.objects.contains_key("orange")
        })
        .count();
    assert!((925..=975).contains(&hits), "{hits} detections out of 1000");
}

#[test]
fn misaligned_grasp_rate_matches_its_probability() {
    let s = open_room("", "p_detect 1.0\nnoise 0.0", "p_grasp_misaligned 0.3\np_knock 0");
    let shell = default_shell();
    let local = se2_inverse_transform(&s.world.robot, &s.world.objects["orange"].position);
    assert!(!shell.contains(&local));
    let hits = (0..1000)
        .filter(|&i| {
            let mut sim = Sim::new(&s, shell, SimConfig::default(), RngSeed(i));
            sim.perceive(None);
            sim.grasp("orange") == Outcome::Holding
        })
        .count();
    assert!((263..=337).contains(&hits), "{hits} grasps out of 1000");
}

/// Corridor with a low-prior region just behind the robot and a high-prior
/// region further ahead.
fn two_regions(lambda: f64) -> (Scenario, SimConfig) {
    let s = scenario(
        "[grid]\nsize 10 2\n[regions]\nregion near 0.1 0 0 2 2\nregion far 0.9 6 0 10 2\n\
         [objects]\nobject orange 8 1 0.04 0.04 0.04 0.04\nobject bowl 9 1 0.05 0.1 0.1 0.05 container\n\
         [robot]\npose 3 1 0\n[task]\nobject orange\ncontainer bowl\n",
    );
    (s, SimConfig { lambda_travel: lambda, ..SimConfig::default() })
}

#[test]
fn frontier_prefers_the_likely_region_over_the_close_one() {
    for (lambda, expect) in [(0.01, "far"), (0.05, "near")] {
        let (s, cfg) = two_regions(lambda);
        let sim = Sim::new(&s, default_shell(), cfg, RngSeed(0));
        let map = SearchMap::new(&sim.world);
        let belief = sim.belief(&map);
        let (cell, region, score) = sim.next_frontier(&map, &belief).unwrap();
        assert_eq!(sim.world.regions[region].id, expect, "lambda {lambda}");

        // Score arithmetic: the nearest frontier of each region, in cells.
        let g = &sim.world.grid;
        let start = sim.world.robot_cell().unwrap();
        let cells = |c| g.path_cost(&sim.world.free, start, c).unwrap() as f64 / 10.0;
        let frontier_cost = |x_edge: f64| {
            g.cells()
                .filter(|&c| sim.world.free[g.index(c)] && (g.center(c).0 - x_edge).abs() < 0.06)
                .map(cells)
                .fold(f64::INFINITY, f64::min)
        };
        let (near, far) = (0.1 - lambda * frontier_cost(2.05), 0.9 - lambda * frontier_cost(5.95));
        assert_eq!(expect == "far", far > near);
        assert!((score - near.max(far)).abs() < 1e-9, "score {score}, near {near}, far {far}");
        assert!((score - (belief.region_belief[expect] - lambda * cells(cell))).abs() < 1e-9);
    }
}

#[test]
fn absent_target_exhausts_the_search() {
    let mut s = fixture("level1_clean.scn");
    s.world.objects.remove("orange");
    let mut sim = Sim::new(&s, default_shell(), SimConfig::default(), RngSeed(3));
    assert_eq!(sim.obj_find("orange"), Outcome::Exhausted);
    assert!(!sim.store.objects.contains_key("orange"));
}

#[test]
fn aligned_target_lies_in_the_shell_and_grasps() {
    let s = fixture("level1_clean.scn");
    let shell = default_shell();
    let mut sim = Sim::new(&s, shell, SimConfig::default(), RngSeed(5));
    assert_eq!(sim.obj_find("orange"), Outcome::Found);
    assert_eq!(sim.align("orange"), Outcome::Aligned);
    let truth = sim.world.objects["orange"].position;
    assert!(shell.contains(&se2_inverse_transform(&sim.world.robot, &truth)));
    assert_eq!(sim.grasp("orange"), Outcome::Holding);
    assert_eq!(sim.world.held.as_deref(), Some("orange"));
}

#[test]
fn approach_ablation_stops_at_near_range_facing_the_target() {
    let s = fixture("level1_clean.scn");
    let cfg = SimConfig { align_mode: AlignMode::Approach, ..SimConfig::default() };
    let eps = cfg.predicates.eps_near;
    let mut sim = Sim::new(&s, default_shell(), cfg, RngSeed(5));
    sim.obj_find("orange");
    assert_eq!(sim.align("orange"), Outcome::Aligned);
    let r = sim.world.robot;
    let o = s.world.objects["orange"].position;
    let d = r.planar_distance_to(&o);
    assert!(d <= eps && d >= eps - s.world.grid.cell, "stopped {d} m away");
    assert!(wrap(r.theta - (o.y - r.y).atan2(o.x - r.x)).abs() < 1e-9);
}

fn holding_orange(seed: u64) -> Sim<'static> {
    let s = Box::leak(Box::new(fixture("level1_clean.scn")));
    let mut sim = Sim::new(s, default_shell(), SimConfig::default(), RngSeed(seed));
    assert_eq!(sim.obj_find("orange"), Outcome::Found);
    assert_eq!(sim.align("orange"), Outcome::Aligned);
    assert_eq!(sim.grasp("orange"), Outcome::Holding);
    sim
}

#[test]
fn carried_object_rides_with_the_base() {
    let mut sim = holding_orange(11);
    let before = sim.world.robot;
    sim.obj_find("bowl");
    sim.align("bowl");
    let r = sim.world.robot;
    assert_ne!(r, before);
    let (c, s) = r.heading();
    let p = sim.world.objects["orange"].position;
    assert!((p.x - (r.x + CARRY_AHEAD * c)).abs() < 1e-12);
    assert!((p.y - (r.y + CARRY_AHEAD * s)).abs() < 1e-12);
    assert_eq!(p.z, CARRY_HEIGHT);
}

#[test]
fn scripted_slip_drops_the_load_where_it_was_carried() {
    let mut sim = holding_orange(11);
    let carried = sim.world.objects["orange"].position;
    sim.world.pending_slip = true;
    sim.events.clear();
    sim.obj_find("bowl");
    sim.align("bowl");
    assert!(sim.events.contains(&SimEvent::Slipped { id: "orange".into() }));
    assert_eq!(sim.world.held, None);
    assert!(!sim.state().iter().any(|p| p.name() == "holding"));
    let dropped = sim.world.objects["orange"].position;
    assert_eq!((dropped.x, dropped.y), (carried.x, carried.y));
    assert!(dropped.z <= carried.z);
}

#[test]
fn displaced_container_defeats_the_stale_anchor() {
    let mut sim = holding_orange(13);
    assert_eq!(sim.obj_find("bowl"), Outcome::Found);
    assert_eq!(sim.align("bowl"), Outcome::Aligned);
    sim.world.objects.get_mut("bowl").unwrap().position.y -= 1.0;
    assert_eq!(sim.place("orange", "bowl"), Outcome::PlacementMiss);
}

#[test]
fn half_overlapping_drop_is_a_miss() {
    // A 0.4 m bowl whose true position has moved half its width since it was
    // anchored, so the drop lands on its rim.
    let s = scenario(
        "[grid]\nsize 5 4\n[occupied]\nrect 2.5 1.5 3.5 2.5 0.6\n[regions]\nregion room 1.0 0 0 5 4\n\
         [objects]\nobject orange 2.6 1.7 0.64 0.04 0.04 0.04\nobject bowl 2.9 2.1 0.65 0.2 0.2 0.05 container\n\
         [robot]\npose 1.8 2.0 0\n[sensor]\np_detect 1.0\nnoise 0.0\n[outcomes]\np_place_misaligned 1.0\n\
         [task]\nobject orange\ncontainer bowl\n",
    );
    let eps_in = SimConfig::default().predicates.eps_in;
    for seed in 0..20 {
        let mut sim = Sim::new(&s, default_shell(), SimConfig::default(), RngSeed(seed));
        sim.perceive(None);
        sim.perceive(None);
        sim.world.held = Some("orange".into());
        sim.world.objects.get_mut("bowl").unwrap().position.x += 0.2;
        assert_eq!(sim.place("orange", "bowl"), Outcome::PlacementMiss);
        let r = overlap_ratio(&sim.world.objects["orange"].footprint(), &sim.world.objects["bowl"].footprint()).unwrap();
        assert!((r - 0.5).abs() <= 0.0625 + 1e-9 && r < eps_in, "overlap {r}");
    }
}

#[test]
fn displacement_leaves_the_anchor_stale_by_the_displacement() {
    let s = scenario(
        "[grid]\nsize 5 4\n[occupied]\nrect 2.5 1.5 3.5 2.5 0.6\n[regions]\nregion room 1.0 0 0 5 4\n\
         [objects]\nobject orange 2.55 1.6 0.64 0.04 0.04 0.04\nobject bowl 2.55 2.4 0.65 0.1 0.1 0.05 container\n\
         [robot]\npose 1.2 2.0 0\n[sensor]\np_detect 1.0\nnoise 0.0\n\
         [disturbances]\nat 3 displace orange 0.2 0.1\n[task]\nobject orange\ncontainer bowl\n",
    );
    let mut sim = Sim::new(&s, default_shell(), SimConfig::default(), RngSeed(0));
    sim.perceive(None);
    let mut fired = vec![false];
    let world = sim.world.clone();
    assert!(sim.apply_disturbances(&s.disturbances, 2, &BTreeMap::new(), &mut fired).is_empty());
    assert_eq!(sim.world, world);
    assert_eq!(sim.apply_disturbances(&s.disturbances, 3, &BTreeMap::new(), &mut fired).len(), 1);
    let stale = sim.world.objects["orange"].position.to_vector() - sim.store.objects["orange"].expected_position.to_vector();
    assert!((stale - nalgebra::Vector3::new(0.2, 0.1, 0.0)).norm() < 1e-12, "{stale:?}");
}

#[test]
fn same_seed_same_world() {
    let s = fixture("displaced_after_align.scn");
    let run = |seed| {
        let mut sim = Sim::new(&s, default_shell(), SimConfig::default(), RngSeed(seed));
        let outcomes = [sim.obj_find("orange"), sim.align("orange"), sim.grasp("orange")];
        (outcomes, sim.world.clone(), sim.store.clone())
    };
    assert_eq!(run(9), run(9));
}

#[test]
fn robot_never_overlaps_an_occupied_cell() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let radius = ChassisModel::default().radius;
    for level in ["level2", "level3"] {
        let mut files: Vec<_> = std::fs::read_dir(root.join(level)).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        for (i, f) in files.iter().enumerate() {
            let s = Scenario::load(f).unwrap();
            for ablation in [Ablation::Full, Ablation::NoAlign] {
                let t = run_scenario(&s, RngSeed(i as u64), ablation, 100);
                let poses = t.cycles.iter().map(|c| c.anchors.robot.chassis_pose).chain([t.end.final_anchors.robot.chassis_pose]);
                for p in poses {
                    assert!(!s.world.grid.disk_collides(p.x, p.y, radius), "{} {ablation}: robot at {p:?}", s.name);
                }
            }
        }
    }
}
