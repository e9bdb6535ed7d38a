//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use anchor_core::anchors::{Predicate, SymbolicState};
use anchor_core::geometry::Point3;
use anchor_core::planner::PlanningProblem;
use anchor_core::reachability::{DualEllipsoidShell, Ellipsoid};
use nalgebra::{Matrix3, Vector3};

/// Hand-sized shell resembling the default arm's.
pub fn arm_like_shell() -> DualEllipsoidShell {
    DualEllipsoidShell::new(
        Ellipsoid::new(Point3::new(0.1, 0.0, 0.33), Matrix3::from_diagonal(&Vector3::new(1.0 / 0.36, 1.0 / 0.47, 1.0 / 0.47))).unwrap(),
        Ellipsoid::new(Point3::new(0.1, 0.0, 0.39), Matrix3::from_diagonal(&Vector3::new(1.0 / 0.068, 1.0 / 0.068, 1.0 / 0.168))).unwrap(),
    )
    .unwrap()
}

/// Exhaustive breadth-first search over bitset states, written from the
/// domain definition alone. Returns the optimal plan length.
///
/// Bit layout for `n` objects: near, aligned, holding and found take `n`
/// bits each in that order, then `in(i, j)` at `4n + i*n + j`.
pub fn oracle_length(n: usize, init: u64, goal: u64) -> Option<usize> {
    let near = |i: usize| 1u64 << i;
    let aligned = |i: usize| 1u64 << (n + i);
    let holding = |i: usize| 1u64 << (2 * n + i);
    let found = |i: usize| 1u64 << (3 * n + i);
    let inside = |i: usize, j: usize| 1u64 << (4 * n + i * n + j);
    let any_holding: u64 = (0..n).map(holding).sum();
    let all_aligned: u64 = (0..n).map(aligned).sum();
    let mut seen = HashSet::from([init]);
    let mut queue = VecDeque::from([(init, 0usize)]);
    while let Some((s, d)) = queue.pop_front() {
        if s & goal == goal {
            return Some(d);
        }
        let mut next = Vec::new();
        for o in 0..n {
            if s & near(o) == 0 {
                next.push(s | found(o) | near(o));
            }
            if s & found(o) != 0 && s & near(o) != 0 {
                next.push((s & !all_aligned) | aligned(o));
            }
            if s & aligned(o) != 0 && s & any_holding == 0 {
                next.push(s | holding(o));
            }
            for c in 0..n {
                if s & holding(o) != 0 && s & aligned(c) != 0 {
                    next.push((s & !holding(o)) | inside(o, c));
                }
            }
        }
        for t in next {
            if seen.insert(t) {
                queue.push_back((t, d + 1));
            }
        }
    }
    None
}

pub fn decode(names: &[String], bits: u64) -> SymbolicState {
    let n = names.len();
    let mut s = SymbolicState::new();
    for i in 0..n {
        let o = names[i].clone();
        let set = |k: usize| bits & (1 << k) != 0;
        if set(i) {
            s.insert(Predicate::Near(o.clone()));
        }
        if set(n + i) {
            s.insert(Predicate::Aligned(o.clone()));
        }
        if set(2 * n + i) {
            s.insert(Predicate::Holding(o.clone()));
        }
        if set(3 * n + i) {
            s.insert(Predicate::Found(o.clone()));
        }
        for (j, c) in names.iter().enumerate() {
            if set(4 * n + i * n + j) {
                s.insert(Predicate::In(o.clone(), c.clone()));
            }
        }
    }
    s
}

/// Problem over the first `n` of orange, bowl, cup with init bits `init` and
/// goal `in(goal.0, goal.1)`; also returns the goal bit.
pub fn problem(n: usize, init: u64, goal: (usize, usize)) -> (PlanningProblem, u64) {
    let names: Vec<String> = ["orange", "bowl", "cup"][..n].iter().map(|s| s.to_string()).collect();
    let goal_bit = 1u64 << (4 * n + goal.0 * n + goal.1);
    let p = PlanningProblem {
        name: "anchor-task".into(),
        objects: names.clone(),
        init: decode(&names, init),
        goal: decode(&names, goal_bit),
    };
    (p, goal_bit)
}

