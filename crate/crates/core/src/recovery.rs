//! Two-layer failure recovery: local retries for manipulation faults (L1),
//! re-anchoring and replanning for task-level faults (L2), and the rules for
//! declaring a trial lost.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::planner::ActionName;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnomalyKind {
    EmptyGrasp,
    GripperSlip,
    PlacementMiss,
    /// Base refinement found no pose serving the target.
    AlignmentInfeasible,
    TargetDisplaced,
    TargetOccluded,
    SceneChanged,
    Unreachable,
    /// Exploration exhausted every region without detecting the target.
    TargetMissing,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 9] = [
        AnomalyKind::EmptyGrasp,
        AnomalyKind::GripperSlip,
        AnomalyKind::PlacementMiss,
        AnomalyKind::AlignmentInfeasible,
        AnomalyKind::TargetDisplaced,
        AnomalyKind::TargetOccluded,
        AnomalyKind::SceneChanged,
        AnomalyKind::Unreachable,
        AnomalyKind::TargetMissing,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    L1,
    L2,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::L1 => "L1",
            Layer::L2 => "L2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub detected_at_cycle: u64,
    /// Action and object the anomaly is charged to; keys the retry budget.
    pub action: ActionName,
    pub object: String,
    pub evidence: String,
}

impl Anomaly {
    pub fn new(kind: AnomalyKind, cycle: u64, action: ActionName, object: &str, evidence: impl Into<String>) -> Self {
        Self { kind, detected_at_cycle: cycle, action, object: object.to_string(), evidence: evidence.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub l1_retry_limit: u32,
    pub enabled: bool,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { l1_retry_limit: 2, enabled: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Nominal,
    L1Retry,
    L2Replan,
    TerminalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Directive {
    RetryLocal,
    EscalateReplan,
    Terminate,
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Directive::RetryLocal => "retry-local",
            Directive::EscalateReplan => "escalate-replan",
            Directive::Terminate => "terminate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryState {
    pub l1_attempts: BTreeMap<(ActionName, String), u32>,
    pub mode: Mode,
}

impl Default for RecoveryState {
    fn default() -> Self {
        Self { l1_attempts: BTreeMap::new(), mode: Mode::Nominal }
    }
}

impl RecoveryState {
    pub fn attempts(&self, action: ActionName, object: &str) -> u32 {
        self.l1_attempts.get(&(action, object.to_string())).copied().unwrap_or(0)
    }

    /// A successful execution refunds the retry budget of its key.
    pub fn record_success(&mut self, action: ActionName, object: &str) {
        self.l1_attempts.remove(&(action, object.to_string()));
        if self.mode != Mode::TerminalFailure {
            self.mode = Mode::Nominal;
        }
    }
}

/// One structured log record per directive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryEvent {
    pub cycle: u64,
    pub kind: AnomalyKind,
    pub layer: Layer,
    pub directive: Directive,
    pub attempts: u32,
    pub action: ActionName,
    pub object: String,
}

pub fn classify(a: &Anomaly) -> Layer {
    match a.kind {
        AnomalyKind::EmptyGrasp | AnomalyKind::GripperSlip | AnomalyKind::PlacementMiss | AnomalyKind::AlignmentInfeasible => Layer::L1,
        AnomalyKind::TargetDisplaced
        | AnomalyKind::TargetOccluded
        | AnomalyKind::SceneChanged
        | AnomalyKind::Unreachable
        | AnomalyKind::TargetMissing => Layer::L2,
    }
}

/// Routes an anomaly to the lowest layer able to handle it.
pub fn handle(state: &mut RecoveryState, a: &Anomaly, cfg: &RecoveryConfig) -> (Directive, RecoveryEvent) {
    let key = (a.action, a.object.clone());
    let layer = classify(a);
    let mut attempts = state.l1_attempts.get(&key).copied().unwrap_or(0);
    let directive = if !cfg.enabled || matches!(a.kind, AnomalyKind::Unreachable | AnomalyKind::TargetMissing) {
        Directive::Terminate
    } else if layer == Layer::L1 && attempts < cfg.l1_retry_limit {
        attempts += 1;
        state.l1_attempts.insert(key, attempts);
        Directive::RetryLocal
    } else {
        Directive::EscalateReplan
    };
    state.mode = match directive {
        Directive::RetryLocal => Mode::L1Retry,
        Directive::EscalateReplan => {
            // A fresh plan starts with a fresh retry budget.
            state.l1_attempts.clear();
            Mode::L2Replan
        }
        Directive::Terminate => Mode::TerminalFailure,
    };
    let event = RecoveryEvent { cycle: a.detected_at_cycle, kind: a.kind, layer, directive, attempts, action: a.action, object: a.object.clone() };
    (directive, event)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grasp_fail(cycle: u64) -> Anomaly {
        Anomaly::new(AnomalyKind::EmptyGrasp, cycle, ActionName::Grasp, "orange", "no load current")
    }

    #[test]
    fn classification() {
        let layer = |k| classify(&Anomaly::new(k, 0, ActionName::Grasp, "o", ""));
        assert_eq!(layer(AnomalyKind::EmptyGrasp), Layer::L1);
        assert_eq!(layer(AnomalyKind::GripperSlip), Layer::L1);
        assert_eq!(layer(AnomalyKind::TargetDisplaced), Layer::L2);
    }

    #[test]
    fn retries_then_escalates() {
        let cfg = RecoveryConfig::default();
        let mut s = RecoveryState::default();
        assert_eq!(handle(&mut s, &grasp_fail(1), &cfg).0, Directive::RetryLocal);
        assert_eq!(s.mode, Mode::L1Retry);
        assert_eq!(handle(&mut s, &grasp_fail(2), &cfg).0, Directive::RetryLocal);
        let (d, ev) = handle(&mut s, &grasp_fail(3), &cfg);
        assert_eq!(d, Directive::EscalateReplan);
        assert_eq!(ev.attempts, 2);
        assert_eq!(s.attempts(ActionName::Grasp, "orange"), 0);
        assert_eq!(s.mode, Mode::L2Replan);
    }

    #[test]
    fn success_refunds_budget() {
        let cfg = RecoveryConfig::default();
        let mut s = RecoveryState::default();
        handle(&mut s, &grasp_fail(1), &cfg);
        handle(&mut s, &grasp_fail(2), &cfg);
        s.record_success(ActionName::Grasp, "orange");
        assert_eq!(handle(&mut s, &grasp_fail(3), &cfg).0, Directive::RetryLocal);
    }

    #[test]
    fn terminal_rules() {
        let mut s = RecoveryState::default();
        let cfg = RecoveryConfig::default();
        let unreachable = Anomaly::new(AnomalyKind::Unreachable, 4, ActionName::ObjFind, "orange", "planner found no plan");
        assert_eq!(handle(&mut s, &unreachable, &cfg).0, Directive::Terminate);
        assert_eq!(s.mode, Mode::TerminalFailure);
        let disabled = RecoveryConfig { enabled: false, ..cfg };
        assert_eq!(handle(&mut RecoveryState::default(), &grasp_fail(1), &disabled).0, Directive::Terminate);
    }
}
