//! Closed-loop trial driver: each cycle re-grounds the state from anchors,
//! replans, dispatches only the first action and routes anomalies through
//! recovery. Traces are JSON lines and can be replayed.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::anchors::{format_state, AnchorStore, PredicateConfig};
use crate::error::TrialError;
use crate::geometry::RngSeed;
use crate::planner::{build_problem, plan, Action, ActionName, TaskSpec};
use crate::reachability::{default_shell, DualEllipsoidShell};
use crate::recovery::{handle, Anomaly, AnomalyKind, Directive, Layer, RecoveryConfig, RecoveryEvent, RecoveryState};
use crate::sim::{ground_state, AlignMode, Outcome, Scenario, Sim, SimConfig, SimEvent};

pub const DEFAULT_MAX_CYCLES: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoAlign,
    NoRecovery,
    OpenLoop,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoAlign, Ablation::NoRecovery, Ablation::OpenLoop];

    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoAlign => "no-align",
            Ablation::NoRecovery => "no-recovery",
            Ablation::OpenLoop => "open-loop",
        }
    }

    pub fn align_mode(&self) -> AlignMode {
        match self {
            Ablation::NoAlign | Ablation::OpenLoop => AlignMode::Approach,
            Ablation::Full | Ablation::NoRecovery => AlignMode::Refine,
        }
    }

    pub fn recovery(&self) -> RecoveryConfig {
        RecoveryConfig { enabled: matches!(self, Ablation::Full | Ablation::NoAlign), ..RecoveryConfig::default() }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown ablation `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub scenario: PathBuf,
    /// Overrides the scenario's own task when set.
    pub task: Option<TaskSpec>,
    pub seed: RngSeed,
    pub ablation: Ablation,
    pub max_cycles: u64,
}

impl TrialConfig {
    pub fn new(scenario: impl Into<PathBuf>, seed: u64, ablation: Ablation) -> Self {
        Self { scenario: scenario.into(), task: None, seed: RngSeed(seed), ablation, max_cycles: DEFAULT_MAX_CYCLES }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Terminated(AnomalyKind),
    Budget,
    /// Open-loop execution ran its whole plan without reaching the goal.
    PlanExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Success,
    Failure(FailureReason),
}

impl TrialStatus {
    pub fn is_success(&self) -> bool {
        *self == TrialStatus::Success
    }
}

impl fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrialStatus::Success => f.write_str("success"),
            TrialStatus::Failure(FailureReason::Terminated(k)) => write!(f, "failure (terminated on {k:?})"),
            TrialStatus::Failure(FailureReason::Budget) => f.write_str("failure (cycle budget exhausted)"),
            TrialStatus::Failure(FailureReason::PlanExhausted) => f.write_str("failure (plan exhausted)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario: String,
    pub level: u8,
    pub task: TaskSpec,
    pub seed: u64,
    pub ablation: Ablation,
    pub max_cycles: u64,
    pub predicates: PredicateConfig,
    /// The shell used for grounding, in its text format.
    pub shell: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub event: RecoveryEvent,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u64,
    pub disturbances: Vec<String>,
    /// Anchor store the cycle's state was grounded from.
    pub anchors: AnchorStore,
    pub state: String,
    /// `None` when the planner found no plan.
    pub plan: Option<Vec<String>>,
    pub action: Option<String>,
    pub outcome: Option<Outcome>,
    pub events: Vec<SimEvent>,
    pub anomalies: Vec<AnomalyRecord>,
    pub directive: Option<Directive>,
    pub clock: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub attempts: u32,
    pub successes: u32,
}

/// A run of anomalies charged to one (action, object) key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub action: ActionName,
    pub object: String,
    /// Layer of the first anomaly; escalation does not open a new episode.
    pub layer: Layer,
    pub opened_cycle: u64,
    pub anomalies: u32,
    pub recovered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEnd {
    pub status: TrialStatus,
    pub cycles: u64,
    pub steps: u32,
    pub sim_time: f64,
    /// Indexed by [`ActionName::ALL`] order: align, grasp, obj_find, place.
    pub stages: [StageCount; 4],
    pub episodes: Vec<Episode>,
    pub final_anchors: AnchorStore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTrace {
    pub header: TraceHeader,
    pub cycles: Vec<CycleRecord>,
    pub end: TrialEnd,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Cycle(CycleRecord),
    End(TrialEnd),
}

impl TrialTrace {
    pub fn write_jsonl(&self, w: &mut impl Write) -> std::io::Result<()> {
        let line = |w: &mut dyn Write, l: &TraceLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut *w, l)?;
            w.write_all(b"\n")
        };
        line(w, &TraceLine::Header(self.header.clone()))?;
        for c in &self.cycles {
            line(w, &TraceLine::Cycle(c.clone()))?;
        }
        line(w, &TraceLine::End(self.end.clone()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, TrialError> {
        let mut header = None;
        let mut cycles = Vec::new();
        let mut end = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| TrialError::Trace(format!("line {}: {e}", i + 1)))?;
            match parsed {
                TraceLine::Header(h) if header.is_none() && cycles.is_empty() => header = Some(h),
                TraceLine::Cycle(c) if header.is_some() && end.is_none() => cycles.push(c),
                TraceLine::End(e) if header.is_some() && end.is_none() => end = Some(e),
                _ => return Err(TrialError::Trace(format!("line {}: record out of order", i + 1))),
            }
        }
        Ok(Self {
            header: header.ok_or_else(|| TrialError::Trace("missing header".into()))?,
            cycles,
            end: end.ok_or_else(|| TrialError::Trace("missing end record".into()))?,
        })
    }

    pub fn dispatched(&self) -> Vec<&str> {
        self.cycles.iter().filter_map(|c| c.action.as_deref()).collect()
    }
}

pub fn run_trial(cfg: &TrialConfig) -> Result<TrialTrace, TrialError> {
    if cfg.max_cycles < 1 {
        return Err(TrialError::Config("max_cycles must be at least 1".into()));
    }
    let mut scenario = Scenario::load(&cfg.scenario)?;
    if let Some(t) = &cfg.task {
        t.validate().map_err(TrialError::Config)?;
        scenario.task = t.clone();
    }
    Ok(run_scenario(&scenario, cfg.seed, cfg.ablation, cfg.max_cycles))
}

struct Loop<'a> {
    scenario: &'a Scenario,
    ablation: Ablation,
    sim: Sim<'static>,
    recovery: RecoveryState,
    recovery_cfg: RecoveryConfig,
    successes: BTreeMap<(ActionName, String), u32>,
    fired: Vec<bool>,
    stages: [StageCount; 4],
    episodes: Vec<Episode>,
    cycles: Vec<CycleRecord>,
    steps: u32,
}

fn stage_index(a: ActionName) -> usize {
    ActionName::ALL.iter().position(|x| *x == a).expect("known action")
}

fn severity(d: Directive) -> u8 {
    match d {
        Directive::RetryLocal => 0,
        Directive::EscalateReplan => 1,
        Directive::Terminate => 2,
    }
}

impl Loop<'_> {
    fn begin_cycle(&mut self, cycle: u64) -> CycleRecord {
        let disturbances = self.sim.apply_disturbances(&self.scenario.disturbances, cycle, &self.successes, &mut self.fired);
        CycleRecord {
            cycle,
            disturbances,
            anchors: self.sim.store.clone(),
            state: format_state(&self.sim.state()),
            plan: None,
            action: None,
            outcome: None,
            events: Vec::new(),
            anomalies: Vec::new(),
            directive: None,
            clock: self.sim.world.clock,
        }
    }

    /// Dispatches `a`, turns its outcome and the perception evidence into
    /// anomalies and returns the combined directive.
    fn execute(&mut self, rec: &mut CycleRecord, a: &Action) -> Option<Directive> {
        self.sim.events.clear();
        let outcome = self.sim.dispatch(a.name, &a.args);
        self.steps += 1;
        let s = &mut self.stages[stage_index(a.name)];
        s.attempts += 1;
        rec.action = Some(a.to_string());
        rec.outcome = Some(outcome);
        rec.events = std::mem::take(&mut self.sim.events);

        let mut anomalies = Vec::new();
        let kind = match outcome {
            Outcome::Exhausted => Some(AnomalyKind::TargetMissing),
            Outcome::Unreachable => Some(AnomalyKind::Unreachable),
            Outcome::AlignFailed => Some(AnomalyKind::AlignmentInfeasible),
            Outcome::EmptyGrasp => Some(AnomalyKind::EmptyGrasp),
            Outcome::PlacementMiss => Some(AnomalyKind::PlacementMiss),
            _ => None,
        };
        if let Some(k) = kind {
            anomalies.push(Anomaly::new(k, rec.cycle, a.name, a.target(), format!("{} returned {outcome}", a)));
        }
        for e in &rec.events {
            anomalies.push(match e {
                SimEvent::Jumped { id, distance } => {
                    Anomaly::new(AnomalyKind::TargetDisplaced, rec.cycle, a.name, id, format!("{id} re-detected {distance:.3} m from its anchor"))
                }
                SimEvent::Occluded { id } => Anomaly::new(AnomalyKind::TargetOccluded, rec.cycle, a.name, id, format!("{id} missing from view twice")),
                SimEvent::Slipped { id } => {
                    Anomaly::new(AnomalyKind::GripperSlip, rec.cycle, ActionName::Grasp, id, format!("gripper current dropped while carrying {id}"))
                }
            });
        }

        let mut combined: Option<Directive> = None;
        for an in anomalies {
            let (d, event) = handle(&mut self.recovery, &an, &self.recovery_cfg);
            self.open_episode(&event);
            if d == Directive::EscalateReplan {
                // Re-anchor from scratch instead of trusting the suspect anchor.
                self.sim.store.invalidate(&an.object);
            }
            if combined.is_none_or(|c| severity(d) > severity(c)) {
                combined = Some(d);
            }
            rec.anomalies.push(AnomalyRecord { event, evidence: an.evidence });
        }
        if outcome.success() {
            self.stages[stage_index(a.name)].successes += 1;
            self.recovery.record_success(a.name, a.target());
            *self.successes.entry((a.name, a.target().to_string())).or_insert(0) += 1;
            // Anomalies raised by this very dispatch stay open.
            for ep in self.episodes.iter_mut().filter(|e| !e.recovered && e.opened_cycle < rec.cycle && e.action == a.name && e.object == a.target()) {
                ep.recovered = true;
            }
        }
        rec.directive = combined;
        combined
    }

    fn open_episode(&mut self, e: &RecoveryEvent) {
        if let Some(ep) = self.episodes.iter_mut().find(|x| !x.recovered && x.action == e.action && x.object == e.object) {
            ep.anomalies += 1;
            return;
        }
        self.episodes.push(Episode { action: e.action, object: e.object.clone(), layer: e.layer, opened_cycle: e.cycle, anomalies: 1, recovered: false });
    }

    fn terminated(rec: &CycleRecord) -> Option<TrialStatus> {
        if rec.directive != Some(Directive::Terminate) {
            return None;
        }
        let kind = rec.anomalies.iter().find(|a| a.event.directive == Directive::Terminate).map(|a| a.event.kind)?;
        Some(TrialStatus::Failure(FailureReason::Terminated(kind)))
    }

    fn unreachable(&mut self, rec: &mut CycleRecord) -> TrialStatus {
        let an = Anomaly::new(AnomalyKind::Unreachable, rec.cycle, ActionName::ObjFind, &self.scenario.task.task_obj, "planner found no plan");
        let (d, event) = handle(&mut self.recovery, &an, &self.recovery_cfg);
        self.open_episode(&event);
        rec.anomalies.push(AnomalyRecord { event, evidence: an.evidence });
        rec.directive = Some(d);
        TrialStatus::Failure(FailureReason::Terminated(AnomalyKind::Unreachable))
    }

    fn closed_loop(&mut self, max_cycles: u64) -> TrialStatus {
        let task = self.scenario.task.clone();
        for cycle in 0..=max_cycles {
            let mut rec = self.begin_cycle(cycle);
            let state = self.sim.state();
            if state.contains(&task.goal()) {
                self.cycles.push(rec);
                return TrialStatus::Success;
            }
            if cycle == max_cycles {
                self.cycles.push(rec);
                break;
            }
            let Some(p) = plan(&build_problem(&task, &state)) else {
                let status = self.unreachable(&mut rec);
                self.cycles.push(rec);
                return status;
            };
            rec.plan = Some(p.actions.iter().map(|a| a.to_string()).collect());
            self.execute(&mut rec, &p.actions[0]);
            let stop = Self::terminated(&rec);
            self.cycles.push(rec);
            if let Some(status) = stop {
                return status;
            }
        }
        TrialStatus::Failure(FailureReason::Budget)
    }

    /// Plans once from the initial state and runs the whole plan.
    fn open_loop(&mut self, max_cycles: u64) -> TrialStatus {
        let task = self.scenario.task.clone();
        let mut rec = self.begin_cycle(0);
        let state = self.sim.state();
        if state.contains(&task.goal()) {
            self.cycles.push(rec);
            return TrialStatus::Success;
        }
        let Some(p) = plan(&build_problem(&task, &state)) else {
            let status = self.unreachable(&mut rec);
            self.cycles.push(rec);
            return status;
        };
        let steps: Vec<String> = p.actions.iter().map(|a| a.to_string()).collect();
        let mut pending = Some(rec);
        for (k, a) in p.actions.iter().enumerate() {
            let mut rec = pending.take().unwrap_or_else(|| self.begin_cycle(k as u64));
            if k as u64 >= max_cycles {
                self.cycles.push(rec);
                return TrialStatus::Failure(FailureReason::Budget);
            }
            rec.plan = Some(steps[k..].to_vec());
            self.execute(&mut rec, a);
            let stop = Self::terminated(&rec);
            self.cycles.push(rec);
            if let Some(status) = stop {
                return status;
            }
        }
        let rec = self.begin_cycle(p.actions.len() as u64);
        let done = self.sim.state().contains(&task.goal());
        self.cycles.push(rec);
        if done {
            TrialStatus::Success
        } else {
            TrialStatus::Failure(FailureReason::PlanExhausted)
        }
    }
}

/// Runs one trial on an already-loaded scenario. A pure function of its
/// arguments.
pub fn run_scenario(scenario: &Scenario, seed: RngSeed, ablation: Ablation, max_cycles: u64) -> TrialTrace {
    run_scenario_with(scenario, seed, ablation, max_cycles, default_shell(), SimConfig::default())
}

pub fn run_scenario_with(
    scenario: &Scenario,
    seed: RngSeed,
    ablation: Ablation,
    max_cycles: u64,
    shell: &'static DualEllipsoidShell,
    mut cfg: SimConfig,
) -> TrialTrace {
    cfg.align_mode = ablation.align_mode();
    let header = TraceHeader {
        scenario: scenario.name.clone(),
        level: scenario.level,
        task: scenario.task.clone(),
        seed: seed.0,
        ablation,
        max_cycles,
        predicates: cfg.predicates,
        shell: shell.to_text(),
    };
    let mut sim = Sim::new(scenario, shell, cfg, seed);
    // Initial anchoring before the first state is grounded.
    sim.perceive(None);
    sim.events.clear();
    let mut lp = Loop {
        scenario,
        ablation,
        sim,
        recovery: RecoveryState::default(),
        recovery_cfg: ablation.recovery(),
        successes: BTreeMap::new(),
        fired: vec![false; scenario.disturbances.events.len()],
        stages: [StageCount::default(); 4],
        episodes: Vec::new(),
        cycles: Vec::new(),
        steps: 0,
    };
    let status = if lp.ablation == Ablation::OpenLoop { lp.open_loop(max_cycles) } else { lp.closed_loop(max_cycles) };
    if status.is_success() {
        // Reaching the goal resolves whatever was still open.
        for ep in &mut lp.episodes {
            ep.recovered = true;
        }
    }
    let end = TrialEnd {
        status,
        cycles: lp.cycles.len() as u64,
        steps: lp.steps,
        sim_time: lp.sim.world.clock,
        stages: lp.stages,
        episodes: lp.episodes,
        final_anchors: lp.sim.store.clone(),
    };
    TrialTrace { header, cycles: lp.cycles, end }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub status: TrialStatus,
    pub cycles_checked: usize,
}

/// Re-grounds every logged state from its anchor snapshot, re-plans the
/// closed-loop cycles and re-derives the terminal status.
pub fn replay(trace: &TrialTrace) -> Result<ReplayReport, TrialError> {
    let h = &trace.header;
    let shell = DualEllipsoidShell::from_text(&h.shell)?;
    let mode = h.ablation.align_mode();
    let goal = h.task.goal();
    for c in &trace.cycles {
        let state = ground_state(&c.anchors, &h.predicates, &shell, mode);
        if format_state(&state) != c.state {
            return Err(TrialError::Trace(format!("cycle {}: logged state does not follow from its anchors", c.cycle)));
        }
        if h.ablation != Ablation::OpenLoop {
            if let Some(logged) = &c.plan {
                let p = plan(&build_problem(&h.task, &state)).ok_or_else(|| TrialError::Trace(format!("cycle {}: state has no plan", c.cycle)))?;
                let replanned: Vec<String> = p.actions.iter().map(|a| a.to_string()).collect();
                if &replanned != logged {
                    return Err(TrialError::Trace(format!("cycle {}: logged plan differs from the replanned one", c.cycle)));
                }
                if c.action.as_ref() != replanned.first() {
                    return Err(TrialError::Trace(format!("cycle {}: dispatched action is not the plan head", c.cycle)));
                }
            }
        }
    }
    let last = trace.cycles.last();
    let status = match last {
        Some(c) if c.action.is_none() && c.plan.is_none() && c.directive.is_none() && c.state_contains(&goal.to_string()) => TrialStatus::Success,
        Some(c) if c.directive == Some(Directive::Terminate) => {
            let kind = c
                .anomalies
                .iter()
                .find(|a| a.event.directive == Directive::Terminate)
                .map(|a| a.event.kind)
                .ok_or_else(|| TrialError::Trace("terminate directive without an anomaly".into()))?;
            TrialStatus::Failure(FailureReason::Terminated(kind))
        }
        Some(_) if h.ablation == Ablation::OpenLoop && trace.cycles.len() as u64 <= h.max_cycles => TrialStatus::Failure(FailureReason::PlanExhausted),
        Some(_) => TrialStatus::Failure(FailureReason::Budget),
        None => return Err(TrialError::Trace("trace has no cycles".into())),
    };
    if status != trace.end.status {
        return Err(TrialError::Trace(format!("replayed status `{status}` differs from logged `{}`", trace.end.status)));
    }
    Ok(ReplayReport { status, cycles_checked: trace.cycles.len() })
}

impl CycleRecord {
    fn state_contains(&self, literal: &str) -> bool {
        // Literals are space-separated and parenthesized, so match whole ones.
        let mut rest = self.state.as_str();
        while let Some(start) = rest.find('(') {
            let end = rest[start..].find(')').map_or(rest.len(), |e| start + e + 1);
            if &rest[start..end] == literal {
                return true;
            }
            rest = &rest[end..];
        }
        false
    }
}
