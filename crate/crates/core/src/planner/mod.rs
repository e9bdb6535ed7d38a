//! The fixed four-action domain, problem templating from a task record and
//! breadth-first satisficing search returning the minimum-cost plan.

mod pddl;

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use pddl::{domain_pddl, export_pddl, parse_domain, parse_problem, problem_pddl, DOMAIN_NAME};

use crate::anchors::{Predicate, SymbolicState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_obj: String,
    pub task_container: String,
    pub instruction_text: String,
}

impl TaskSpec {
    pub fn new(task_obj: &str, task_container: &str) -> Self {
        Self { task_obj: task_obj.into(), task_container: task_container.into(), instruction_text: String::new() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.task_obj.is_empty() || self.task_container.is_empty() {
            return Err("task object and container must be named".into());
        }
        if self.task_obj == self.task_container {
            return Err(format!("task object and container are both `{}`", self.task_obj));
        }
        Ok(())
    }

    pub fn goal(&self) -> Predicate {
        Predicate::In(self.task_obj.clone(), self.task_container.clone())
    }
}

/// Action names, declared in their tie-break (alphabetical) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionName {
    Align,
    Grasp,
    ObjFind,
    Place,
}

impl ActionName {
    pub const ALL: [ActionName; 4] = [ActionName::Align, ActionName::Grasp, ActionName::ObjFind, ActionName::Place];

    pub fn as_str(&self) -> &'static str {
        match self {
            ActionName::Align => "align",
            ActionName::Grasp => "grasp",
            ActionName::ObjFind => "obj_find",
            ActionName::Place => "place",
        }
    }

    pub fn arity(&self) -> usize {
        if *self == ActionName::Place {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for ActionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionName::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown action `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub name: ActionName,
    pub args: Vec<String>,
}

impl Action {
    pub fn new(name: ActionName, args: &[&str]) -> Self {
        assert_eq!(args.len(), name.arity(), "wrong arity for {name}");
        Self { name, args: args.iter().map(|s| s.to_string()).collect() }
    }

    /// The object the action is about (first argument).
    pub fn target(&self) -> &str {
        &self.args[0]
    }

    pub fn applicable(&self, s: &SymbolicState) -> bool {
        let o = self.args[0].clone();
        match self.name {
            // Re-finding is allowed whenever the robot is not near the object:
            // a found-but-distant object must be reachable again.
            ActionName::ObjFind => !s.contains(&Predicate::Near(o)),
            ActionName::Align => s.contains(&Predicate::Found(o.clone())) && s.contains(&Predicate::Near(o)),
            ActionName::Grasp => s.contains(&Predicate::Aligned(o)) && !s.iter().any(|p| matches!(p, Predicate::Holding(_))),
            ActionName::Place => s.contains(&Predicate::Holding(o)) && s.contains(&Predicate::Aligned(self.args[1].clone())),
        }
    }

    /// Planner-side prediction of the successor state.
    pub fn apply(&self, s: &SymbolicState) -> SymbolicState {
        let mut next = s.clone();
        let o = self.args[0].clone();
        match self.name {
            ActionName::ObjFind => {
                next.insert(Predicate::Found(o.clone()));
                next.insert(Predicate::Near(o));
            }
            ActionName::Align => {
                // One base pose: aligning to `o` gives up any other alignment.
                next.retain(|p| !matches!(p, Predicate::Aligned(x) if *x != o));
                next.insert(Predicate::Aligned(o));
            }
            ActionName::Grasp => {
                next.insert(Predicate::Holding(o));
            }
            ActionName::Place => {
                next.remove(&Predicate::Holding(o.clone()));
                next.insert(Predicate::In(o, self.args[1].clone()));
            }
        }
        next
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, self.args.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub actions: Vec<Action>,
    pub cost: usize,
}

impl Plan {
    pub fn from_actions(actions: Vec<Action>) -> Self {
        let cost = actions.len();
        Self { actions, cost }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanningProblem {
    pub name: String,
    /// Object symbols in declaration order; argument tie-breaks follow it.
    pub objects: Vec<String>,
    pub init: SymbolicState,
    pub goal: SymbolicState,
}

/// Templated problem: `:init` mirrors `state`, the goal is
/// `in(task_obj, task_container)`. Objects are the task pair followed by any
/// other object mentioned in the state, alphabetically.
pub fn build_problem(task: &TaskSpec, state: &SymbolicState) -> PlanningProblem {
    let mut objects = vec![task.task_obj.clone(), task.task_container.clone()];
    let mut extra: Vec<String> = state
        .iter()
        .flat_map(|p| p.objects().into_iter().map(String::from).collect::<Vec<_>>())
        .filter(|o| !objects.contains(o))
        .collect();
    extra.sort();
    extra.dedup();
    objects.extend(extra);
    PlanningProblem { name: "anchor-task".into(), objects, init: state.clone(), goal: [task.goal()].into_iter().collect() }
}

/// Every ground action over `objects`, in tie-break order: action name, then
/// argument declaration indices.
pub fn ground_actions(objects: &[String]) -> Vec<Action> {
    let mut out = Vec::new();
    for name in ActionName::ALL {
        for o in objects {
            if name.arity() == 1 {
                out.push(Action { name, args: vec![o.clone()] });
            } else {
                for c in objects {
                    out.push(Action { name, args: vec![o.clone(), c.clone()] });
                }
            }
        }
    }
    out
}

pub fn goal_reached(problem: &PlanningProblem, s: &SymbolicState) -> bool {
    problem.goal.is_subset(s)
}

/// Shortest plan by breadth-first search; among shortest plans the one that
/// is lexicographically smallest under the tie-break order. `None` iff the
/// goal is unreachable.
pub fn plan(problem: &PlanningProblem) -> Option<Plan> {
    if goal_reached(problem, &problem.init) {
        return Some(Plan::from_actions(Vec::new()));
    }
    let actions = ground_actions(&problem.objects);
    // Nodes store (state, parent index, action index); the path is rebuilt
    // from the parent chain.
    let mut nodes: Vec<(SymbolicState, usize, usize)> = vec![(problem.init.clone(), usize::MAX, usize::MAX)];
    let mut seen: HashSet<SymbolicState> = HashSet::from([problem.init.clone()]);
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        for (ai, a) in actions.iter().enumerate() {
            if !a.applicable(&nodes[i].0) {
                continue;
            }
            let next = a.apply(&nodes[i].0);
            if !seen.insert(next.clone()) {
                continue;
            }
            let done = goal_reached(problem, &next);
            nodes.push((next, i, ai));
            let j = nodes.len() - 1;
            if done {
                let mut path = Vec::new();
                let mut k = j;
                while k != 0 {
                    path.push(actions[nodes[k].2].clone());
                    k = nodes[k].1;
                }
                path.reverse();
                return Some(Plan::from_actions(path));
            }
            queue.push_back(j);
        }
    }
    None
}

/// Replays `plan` from the problem's init with the schema effects.
pub fn validate_plan(problem: &PlanningProblem, plan: &Plan) -> bool {
    let mut s = problem.init.clone();
    for a in &plan.actions {
        if !a.applicable(&s) {
            return false;
        }
        s = a.apply(&s);
    }
    plan.cost == plan.actions.len() && goal_reached(problem, &s)
}
