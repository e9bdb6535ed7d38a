use std::collections::HashSet;

use anchor_core::anchors::{derive_state, AnchorStore, ObjectAnchor, Predicate, PredicateConfig, RobotAnchor};
use anchor_core::geometry::{BasePose, Box2, EEPose, Frame, Point3, PointCloud};
use anchor_core::grasping::{match_and_score, tilt, tilt_penalty, GraspCandidate, GraspScoreConfig};
use anchor_core::planner::{parse_domain, parse_problem, plan, problem_pddl, validate_plan, ActionName};
use anchor_core::recovery::{classify, handle, Anomaly, AnomalyKind, Directive, Layer, RecoveryConfig, RecoveryState};
use anchor_core::sim::{ground_state, AlignMode};
use proptest::prelude::*;

mod common;
use common::{arm_like_shell as shell, oracle_length, problem};

// ------------------------------------------------------------- predicates

prop_compose! {
    fn object_anchor(id: &'static str)(
        dx in -1.5f64..1.5, dy in -1.5f64..1.5, z in 0.0f64..1.2,
        half in 0.02f64..0.2, stable in any::<bool>(), seen in any::<bool>(), has_cloud in any::<bool>(),
    ) -> (f64, f64, ObjectAnchor) {
        let p = Point3::new(dx, dy, z);
        let pts = if has_cloud {
            vec![p.offset(-half, -half, 0.0), p.offset(half, half, 0.0), p]
        } else {
            Vec::new()
        };
        let footprint = Box2::bounding(&pts);
        (dx, dy, ObjectAnchor {
            id: id.to_string(),
            expected_position: p,
            cloud: PointCloud::new(pts, Frame::World),
            footprint_xy: footprint,
            stable_segmented: stable,
            last_observed_cycle: seen.then_some(3),
            previous_observed_cycle: None,
            fused_count: 1,
            last_shift: 0.0,
        })
    }
}

prop_compose! {
    fn store()(
        x in -3.0f64..3.0, y in -3.0f64..3.0, th in -3.1f64..3.1,
        closed in any::<bool>(), current in 0.0f64..1.0, roi in 0usize..3,
        objs in (object_anchor("orange"), object_anchor("bowl"), object_anchor("cup")),
    ) -> AnchorStore {
        let mut s = AnchorStore::new(RobotAnchor::at(BasePose::new(x, y, th)));
        s.robot.gripper_closed = closed;
        s.robot.gripper_current = current;
        s.robot.gripper_roi = ["orange", "bowl", "cup"].get(roi).filter(|_| roi < 2).map(|s| s.to_string());
        for (dx, dy, mut a) in [objs.0, objs.1, objs.2] {
            let p = &mut a.expected_position;
            *p = Point3::new(x + dx, y + dy, p.z);
            let shift = |q: &Point3| q.offset(x, y, 0.0);
            a.cloud = PointCloud::new(a.cloud.points.iter().map(shift).collect(), Frame::World);
            a.footprint_xy = Box2::bounding(&a.cloud.points);
            s.objects.insert(a.id.clone(), a);
        }
        s
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn aligned_implies_near(s in store(), eps_near in 0.1f64..1.5) {
        let cfg = PredicateConfig { eps_near, ..PredicateConfig::default() };
        let sh = shell();
        for state in [derive_state(&s, &cfg, &sh), ground_state(&s, &cfg, &sh, AlignMode::Approach)] {
            for p in &state {
                if let Predicate::Aligned(o) = p {
                    prop_assert!(state.contains(&Predicate::Near(o.clone())));
                }
                if let Predicate::In(o, c) = p {
                    prop_assert_ne!(o, c);
                }
                if let Predicate::Holding(_) = p {
                    prop_assert!(s.robot.gripper_closed && s.robot.gripper_current >= cfg.load_threshold);
                }
            }
        }
    }
}

// ---------------------------------------------------------------- planner

prop_compose! {
    fn instance()(n in 2usize..=3)(
        n in Just(n),
        init in any::<u64>(),
        density in 0u32..4,
        mask in any::<u64>(),
        goal_pair in (0..n, 0..n),
    ) -> (usize, u64, (usize, usize)) {
        let bits = 4 * n + n * n;
        // Thin the random init so sparse states are common too.
        let init = if density == 0 { 0 } else { init & (mask | (mask >> density)) & ((1u64 << bits) - 1) };
        (n, init, goal_pair)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn planner_matches_exhaustive_search((n, init, goal) in instance()) {
        let (p, goal_bit) = problem(n, init, goal);
        let got = plan(&p);
        prop_assert_eq!(got.as_ref().map(|pl| pl.cost), oracle_length(n, init, goal_bit));
        if let Some(pl) = got {
            prop_assert_eq!(pl.cost, pl.actions.len());
            prop_assert!(validate_plan(&p, &pl));
        }
    }

    #[test]
    fn pddl_round_trip_is_a_fixpoint((n, init, goal) in instance()) {
        let (p, _) = problem(n, init, goal);
        let text = problem_pddl(&p);
        let back = parse_problem(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(problem_pddl(&back), text);
        prop_assert_eq!(plan(&back), plan(&p));
    }
}

#[test]
fn domain_parses() {
    parse_domain(anchor_core::planner::domain_pddl()).unwrap();
}

// --------------------------------------------------------------- recovery

#[derive(Debug, Clone)]
enum Step {
    Anomaly(AnomalyKind, usize),
    Success(usize),
}

const KEYS: [(ActionName, &str); 4] =
    [(ActionName::Grasp, "orange"), (ActionName::Align, "orange"), (ActionName::Place, "orange"), (ActionName::ObjFind, "bowl")];

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        4 => (0..AnomalyKind::ALL.len(), 0..KEYS.len()).prop_map(|(k, i)| Step::Anomaly(AnomalyKind::ALL[k], i)),
        1 => (0..KEYS.len()).prop_map(Step::Success),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn retries_are_bounded_per_key(steps in prop::collection::vec(step(), 1..40), limit in 0u32..4) {
        let cfg = RecoveryConfig { l1_retry_limit: limit, enabled: true };
        let mut st = RecoveryState::default();
        // Local retries since the key's budget was last refunded.
        let mut streak = [0u32; KEYS.len()];
        for (cycle, s) in steps.iter().enumerate() {
            match s {
                Step::Success(i) => {
                    st.record_success(KEYS[*i].0, KEYS[*i].1);
                    streak[*i] = 0;
                }
                Step::Anomaly(kind, i) => {
                    let (action, obj) = KEYS[*i];
                    let a = Anomaly::new(*kind, cycle as u64, action, obj, "");
                    let before = st.attempts(action, obj);
                    let (d, ev) = handle(&mut st, &a, &cfg);
                    prop_assert_eq!(ev.layer, classify(&a));
                    match d {
                        Directive::RetryLocal => {
                            prop_assert_eq!(ev.layer, Layer::L1);
                            streak[*i] += 1;
                        }
                        Directive::EscalateReplan => {
                            // Minimum responsible layer: an L1 fault escalates
                            // only once its budget is spent.
                            if ev.layer == Layer::L1 {
                                prop_assert_eq!(before, limit);
                            }
                            streak = [0; KEYS.len()];
                        }
                        Directive::Terminate => {
                            prop_assert!(matches!(kind, AnomalyKind::Unreachable | AnomalyKind::TargetMissing));
                        }
                    }
                    if ev.layer == Layer::L1 && before < limit {
                        prop_assert_eq!(d, Directive::RetryLocal);
                    }
                    prop_assert!(streak[*i] <= limit);
                    prop_assert!(st.l1_attempts.values().all(|&v| v <= limit));
                }
            }
        }
    }

    #[test]
    fn disabled_recovery_terminates_on_the_first_anomaly(kind in 0..AnomalyKind::ALL.len(), key in 0..KEYS.len()) {
        let cfg = RecoveryConfig { enabled: false, ..RecoveryConfig::default() };
        let a = Anomaly::new(AnomalyKind::ALL[kind], 0, KEYS[key].0, KEYS[key].1, "");
        prop_assert_eq!(handle(&mut RecoveryState::default(), &a, &cfg).0, Directive::Terminate);
    }
}

// --------------------------------------------------------------- grasping

prop_compose! {
    fn candidate(frame: u64)(
        x in -0.05f64..0.05, y in -0.05f64..0.05, az in -3.1f64..3.1, down in 0.0f64..1.2, conf in 0.0f64..=1.0,
    ) -> GraspCandidate {
        GraspCandidate {
            pose: EEPose::tilted(Point3::new(x, y, 0.7), az, std::f64::consts::FRAC_PI_2 - down),
            confidence: conf,
            frame_index: frame,
        }
    }
}

proptest! {
    #[test]
    fn ranking_invariants(
        cur in prop::collection::vec(candidate(1), 0..8),
        prev in prop::collection::vec(candidate(0), 0..8),
    ) {
        let cfg = GraspScoreConfig::default();
        let ranked = match_and_score(&cur, &prev, &cfg);
        let mut used_c = HashSet::new();
        let mut used_p = HashSet::new();
        for w in ranked.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        for r in &ranked {
            prop_assert!((0.0..=1.0).contains(&r.score));
            prop_assert!(used_c.insert(r.current) && used_p.insert(r.previous));
            let d = cur[r.current].pose.position.distance(&prev[r.previous].pose.position);
            prop_assert!(d <= cfg.match_translation_tol);
        }
        prop_assert!(ranked.len() <= cur.len().min(prev.len()));
    }

    #[test]
    fn tilt_penalty_is_monotone(a in candidate(0), b in candidate(0)) {
        let cfg = GraspScoreConfig::default();
        let (pa, pb) = (tilt_penalty(&a, &cfg), tilt_penalty(&b, &cfg));
        prop_assert!(pa > 0.0 && pa <= 1.0);
        if tilt(&a) <= tilt(&b) {
            prop_assert!(pa >= pb);
        }
    }
}
