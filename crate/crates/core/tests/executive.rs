use std::path::{Path, PathBuf};

use anchor_core::error::TrialError;
use anchor_core::executive::{replay, run_scenario, run_trial, Ablation, FailureReason, TrialConfig, TrialStatus, TrialTrace};
use anchor_core::geometry::RngSeed;
use anchor_core::recovery::AnomalyKind;
use anchor_core::sim::Scenario;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/fixtures").join(name)
}

fn run(name: &str, seed: u64, ablation: Ablation) -> TrialTrace {
    run_trial(&TrialConfig::new(fixture(name), seed, ablation)).unwrap()
}

fn count(t: &TrialTrace, prefix: &str) -> usize {
    t.dispatched().iter().filter(|a| a.starts_with(prefix)).count()
}

#[test]
fn clean_level_one_runs_the_canonical_sequence() {
    for seed in 0..5 {
        let t = run("level1_clean.scn", seed, Ablation::Full);
        assert!(t.end.status.is_success(), "seed {seed}: {}", t.end.status);
        assert!(count(&t, "obj_find(") <= 2);
        assert_eq!(count(&t, "align("), 2);
        assert_eq!(count(&t, "grasp("), 1);
        assert_eq!(count(&t, "place("), 1);
        assert_eq!(t.dispatched().len(), count(&t, "obj_find(") + 4);
        assert!(t.end.cycles <= 8, "{} cycles", t.end.cycles);
        assert!(t.end.episodes.is_empty());
    }
}

#[test]
fn preplaced_object_needs_no_action() {
    for ablation in Ablation::ALL {
        let t = run("preplaced.scn", 0, ablation);
        assert_eq!(t.end.status, TrialStatus::Success);
        assert!(t.dispatched().is_empty());
        assert_eq!(t.end.steps, 0);
    }
}

#[test]
fn displaced_target_needs_the_closed_loop() {
    let open = run("displaced_after_align.scn", 0, Ablation::OpenLoop);
    assert_eq!(open.end.status, TrialStatus::Failure(FailureReason::Terminated(AnomalyKind::EmptyGrasp)));

    let full = run("displaced_after_align.scn", 0, Ablation::Full);
    assert!(full.end.status.is_success(), "{}", full.end.status);
    let miss = full
        .cycles
        .iter()
        .position(|c| c.anomalies.iter().any(|a| a.event.kind == AnomalyKind::EmptyGrasp))
        .expect("the first grasp closes on air");
    let later: Vec<_> = full.cycles[miss + 1..].iter().filter_map(|c| c.action.as_deref()).collect();
    assert!(later.contains(&"obj_find(orange)"), "after the miss: {later:?}");
    assert!(full.end.episodes.iter().all(|e| e.recovered));
}

#[test]
fn removed_target_terminates_as_missing() {
    let t = run("removed_target.scn", 0, Ablation::Full);
    assert_eq!(t.end.status, TrialStatus::Failure(FailureReason::Terminated(AnomalyKind::TargetMissing)));
}

#[test]
fn recovery_disabled_stops_at_the_first_anomaly() {
    let t = run("displaced_after_align.scn", 0, Ablation::NoRecovery);
    let first = t.cycles.iter().position(|c| !c.anomalies.is_empty()).unwrap();
    assert_eq!(first + 1, t.cycles.len());
    assert!(matches!(t.end.status, TrialStatus::Failure(FailureReason::Terminated(_))));
    assert!(t.end.episodes.iter().all(|e| !e.recovered));
}

#[test]
fn traces_are_byte_identical_across_runs() {
    for name in ["level1_clean.scn", "displaced_after_align.scn"] {
        for ablation in Ablation::ALL {
            let a = run(name, 4, ablation).to_jsonl();
            let b = run(name, 4, ablation).to_jsonl();
            assert_eq!(a, b, "{name} {ablation}");
        }
    }
}

#[test]
fn traces_replay_to_their_status() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut files = vec![fixture("level1_clean.scn"), fixture("displaced_after_align.scn"), fixture("removed_target.scn")];
    for level in ["level2", "level3"] {
        let mut f: Vec<_> = std::fs::read_dir(root.join(level)).unwrap().map(|e| e.unwrap().path()).collect();
        f.sort();
        files.extend(f);
    }
    for (i, f) in files.iter().enumerate() {
        let s = Scenario::load(f).unwrap();
        for ablation in Ablation::ALL {
            let t = run_scenario(&s, RngSeed(i as u64), ablation, 100);
            let text = t.to_jsonl();
            let back = TrialTrace::read_jsonl(text.as_bytes()).unwrap();
            assert_eq!(back.to_jsonl(), text);
            let r = replay(&back).unwrap_or_else(|e| panic!("{} {ablation}: {e}", s.name));
            assert_eq!(r.status, t.end.status, "{} {ablation}", s.name);
        }
    }
}

#[test]
fn each_cycle_dispatches_at_most_the_plan_head() {
    let s = Scenario::load(&fixture("displaced_after_align.scn")).unwrap();
    for seed in 0..3 {
        let t = run_scenario(&s, RngSeed(seed), Ablation::Full, 100);
        for c in &t.cycles {
            match (&c.plan, &c.action) {
                (Some(p), Some(a)) => assert_eq!(&p[0], a),
                (_, None) => {}
                (None, Some(a)) => panic!("cycle {} dispatched {a} without a plan", c.cycle),
            }
        }
        assert_eq!(t.end.steps as usize, t.dispatched().len());
    }
}

#[test]
fn cycle_budget_ends_the_trial() {
    let mut cfg = TrialConfig::new(fixture("level1_clean.scn"), 0, Ablation::Full);
    cfg.max_cycles = 2;
    let t = run_trial(&cfg).unwrap();
    assert_eq!(t.end.status, TrialStatus::Failure(FailureReason::Budget));
    assert_eq!(t.dispatched().len(), 2);
    assert_eq!(replay(&t).unwrap().status, t.end.status);
}

#[test]
fn bad_configuration_fails_before_cycle_zero() {
    let mut cfg = TrialConfig::new(fixture("level1_clean.scn"), 0, Ablation::Full);
    cfg.max_cycles = 0;
    assert!(matches!(run_trial(&cfg), Err(TrialError::Config(_))));
    assert!(run_trial(&TrialConfig::new(fixture("no_such_file.scn"), 0, Ablation::Full)).is_err());
}

#[test]
fn tampered_trace_is_rejected() {
    let t = run("displaced_after_align.scn", 0, Ablation::Full);
    let mut bad = t.clone();
    let c = bad.cycles.iter_mut().find(|c| c.plan.is_some()).unwrap();
    c.plan.as_mut().unwrap().reverse();
    assert!(replay(&bad).is_err());
    let mut bad = t;
    bad.cycles[0].state = "(found bowl)".into();
    assert!(replay(&bad).is_err());
}
