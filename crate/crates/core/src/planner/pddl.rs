//! Canonical PDDL text for the fixed domain and templated problems, plus a
//! small s-expression reader that parses both back.

use std::fmt::Write as _;

use super::PlanningProblem;
use crate::anchors::{Predicate, SymbolicState, ROBOT};
use crate::error::PddlError;

pub const DOMAIN_NAME: &str = "anchor";

const DOMAIN: &str = "\
(define (domain anchor)
  (:requirements :strips :typing :negative-preconditions :universal-preconditions :conditional-effects :equality)
  (:types robot object)
  (:predicates
    (near ?r - robot ?o - object)
    (aligned ?r - robot ?o - object)
    (holding ?r - robot ?o - object)
    (in ?o - object ?c - object)
    (found ?o - object))
  (:action obj_find
    :parameters (?r - robot ?o - object)
    :precondition (not (near ?r ?o))
    :effect (and (found ?o) (near ?r ?o)))
  (:action align
    :parameters (?r - robot ?o - object)
    :precondition (and (found ?o) (near ?r ?o))
    :effect (and (aligned ?r ?o)
                 (forall (?x - object) (when (not (= ?x ?o)) (not (aligned ?r ?x))))))
  (:action grasp
    :parameters (?r - robot ?o - object)
    :precondition (and (aligned ?r ?o) (forall (?x - object) (not (holding ?r ?x))))
    :effect (holding ?r ?o))
  (:action place
    :parameters (?r - robot ?o - object ?c - object)
    :precondition (and (holding ?r ?o) (aligned ?r ?c))
    :effect (and (in ?o ?c) (not (holding ?r ?o)))))
";

/// The fixed domain document.
pub fn domain_pddl() -> &'static str {
    DOMAIN
}

/// Canonical problem document.
pub fn problem_pddl(problem: &PlanningProblem) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "(define (problem {})", problem.name);
    let _ = writeln!(s, "  (:domain {DOMAIN_NAME})");
    let objects = if problem.objects.is_empty() { String::new() } else { format!(" {} - object", problem.objects.join(" ")) };
    let _ = writeln!(s, "  (:objects {ROBOT} - robot{objects})");
    let init: Vec<String> = problem.init.iter().map(|p| p.to_string()).collect();
    let _ = writeln!(s, "  (:init {})", init.join(" "));
    let goal: Vec<String> = problem.goal.iter().map(|p| p.to_string()).collect();
    let _ = writeln!(s, "  (:goal (and {})))", goal.join(" "));
    s
}

/// `(domain, problem)` documents.
pub fn export_pddl(problem: &PlanningProblem) -> (String, String) {
    (DOMAIN.to_string(), problem_pddl(problem))
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String, usize),
    List(Vec<Sexp>, usize),
}

impl Sexp {
    fn line(&self) -> usize {
        match self {
            Sexp::Atom(_, l) | Sexp::List(_, l) => *l,
        }
    }

    fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(a, _) => Some(a),
            Sexp::List(..) => None,
        }
    }

    fn list(&self) -> Result<&[Sexp], PddlError> {
        match self {
            Sexp::List(v, _) => Ok(v),
            Sexp::Atom(a, l) => Err(syntax(*l, format!("expected a list, found `{a}`"))),
        }
    }

    /// Structure without line numbers, for comparing documents.
    fn shape(&self) -> String {
        match self {
            Sexp::Atom(a, _) => a.clone(),
            Sexp::List(v, _) => format!("({})", v.iter().map(Sexp::shape).collect::<Vec<_>>().join(" ")),
        }
    }
}

fn syntax(line: usize, msg: impl Into<String>) -> PddlError {
    PddlError::Syntax { line, msg: msg.into() }
}

/// Reads exactly one top-level s-expression; `;` starts a comment.
fn read(text: &str) -> Result<Sexp, PddlError> {
    let mut tokens = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split(';').next().unwrap_or("");
        let spaced = line.replace('(', " ( ").replace(')', " ) ");
        tokens.extend(spaced.split_whitespace().map(|t| (t.to_ascii_lowercase(), i + 1)));
    }
    let mut pos = 0;
    let e = read_expr(&tokens, &mut pos)?;
    if let Some((t, l)) = tokens.get(pos) {
        return Err(syntax(*l, format!("unexpected `{t}` after the document")));
    }
    Ok(e)
}

fn read_expr(tokens: &[(String, usize)], pos: &mut usize) -> Result<Sexp, PddlError> {
    let Some((t, line)) = tokens.get(*pos) else {
        let last = tokens.last().map_or(1, |t| t.1);
        return Err(syntax(last, "unexpected end of input"));
    };
    *pos += 1;
    match t.as_str() {
        "(" => {
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos) {
                    Some((c, _)) if c == ")" => {
                        *pos += 1;
                        return Ok(Sexp::List(items, *line));
                    }
                    Some(_) => items.push(read_expr(tokens, pos)?),
                    None => return Err(syntax(*line, "unbalanced `(`")),
                }
            }
        }
        ")" => Err(syntax(*line, "unbalanced `)`")),
        _ => Ok(Sexp::Atom(t.clone(), *line)),
    }
}

/// Parses a domain document and checks it is the fixed domain.
pub fn parse_domain(text: &str) -> Result<(), PddlError> {
    let doc = read(text)?;
    let items = doc.list()?;
    if items.first().and_then(Sexp::atom) != Some("define") {
        return Err(syntax(doc.line(), "expected `(define ...)`"));
    }
    if doc.shape() != read(DOMAIN)?.shape() {
        return Err(PddlError::Semantic("domain differs from the fixed four-action domain".into()));
    }
    Ok(())
}

/// Parses a problem document written by [`problem_pddl`] or by hand in the
/// same STRIPS subset.
pub fn parse_problem(text: &str) -> Result<PlanningProblem, PddlError> {
    let doc = read(text)?;
    let items = doc.list()?;
    if items.first().and_then(Sexp::atom) != Some("define") {
        return Err(syntax(doc.line(), "expected `(define ...)`"));
    }
    let head = items.get(1).ok_or_else(|| syntax(doc.line(), "missing problem name"))?.list()?;
    let name = match head {
        [Sexp::Atom(k, _), Sexp::Atom(n, _)] if k == "problem" => n.clone(),
        _ => return Err(syntax(items[1].line(), "expected `(problem <name>)`")),
    };
    let mut robot: Option<String> = None;
    let mut objects: Option<Vec<String>> = None;
    let mut init: Option<SymbolicState> = None;
    let mut goal: Option<SymbolicState> = None;
    for section in &items[2..] {
        let parts = section.list()?;
        let key = parts.first().and_then(Sexp::atom).ok_or_else(|| syntax(section.line(), "empty section"))?;
        match key {
            ":domain" => match parts {
                [_, Sexp::Atom(d, _)] if d == DOMAIN_NAME => {}
                _ => return Err(PddlError::Semantic(format!("line {}: problem must use domain `{DOMAIN_NAME}`", section.line()))),
            },
            ":objects" => {
                let (r, objs) = parse_objects(&parts[1..], section.line())?;
                robot = Some(r);
                objects = Some(objs);
            }
            ":init" => {
                let r = robot.as_deref().ok_or_else(|| syntax(section.line(), "`:objects` must precede `:init`"))?;
                let objs = objects.as_deref().unwrap_or(&[]);
                init = Some(parts[1..].iter().map(|l| parse_literal(l, r, objs)).collect::<Result<_, _>>()?);
            }
            ":goal" => {
                let r = robot.as_deref().ok_or_else(|| syntax(section.line(), "`:objects` must precede `:goal`"))?;
                let objs = objects.as_deref().unwrap_or(&[]);
                let body = parts.get(1).ok_or_else(|| syntax(section.line(), "empty goal"))?;
                let lits = match body.list()? {
                    [Sexp::Atom(a, _), rest @ ..] if a == "and" => rest,
                    _ => std::slice::from_ref(body),
                };
                goal = Some(lits.iter().map(|l| parse_literal(l, r, objs)).collect::<Result<_, _>>()?);
            }
            other => return Err(syntax(section.line(), format!("unknown section `{other}`"))),
        }
    }
    Ok(PlanningProblem {
        name,
        objects: objects.ok_or_else(|| syntax(doc.line(), "missing `:objects`"))?,
        init: init.ok_or_else(|| syntax(doc.line(), "missing `:init`"))?,
        goal: goal.ok_or_else(|| syntax(doc.line(), "missing `:goal`"))?,
    })
}

/// `r - robot a b - object`; untyped names default to `object`.
fn parse_objects(items: &[Sexp], line: usize) -> Result<(String, Vec<String>), PddlError> {
    let mut pending: Vec<String> = Vec::new();
    let mut robots = Vec::new();
    let mut objects = Vec::new();
    let mut it = items.iter();
    while let Some(item) = it.next() {
        let a = item.atom().ok_or_else(|| syntax(item.line(), "nested list in `:objects`"))?;
        if a == "-" {
            let ty = it.next().and_then(Sexp::atom).ok_or_else(|| syntax(item.line(), "missing type after `-`"))?;
            match ty {
                "robot" => robots.append(&mut pending),
                "object" => objects.append(&mut pending),
                other => return Err(PddlError::Semantic(format!("line {}: unknown type `{other}`", item.line()))),
            }
        } else {
            pending.push(a.to_string());
        }
    }
    objects.append(&mut pending);
    if robots.len() != 1 {
        return Err(PddlError::Semantic(format!("line {line}: exactly one robot object required, found {}", robots.len())));
    }
    Ok((robots.remove(0), objects))
}

fn parse_literal(e: &Sexp, robot: &str, objects: &[String]) -> Result<Predicate, PddlError> {
    let parts = e.list()?;
    let atoms: Vec<&str> = parts.iter().map(|p| p.atom().ok_or_else(|| syntax(p.line(), "nested literal"))).collect::<Result<_, _>>()?;
    let obj = |s: &str| -> Result<String, PddlError> {
        if objects.iter().any(|o| o == s) {
            Ok(s.to_string())
        } else {
            Err(PddlError::Semantic(format!("line {}: undeclared object `{s}`", e.line())))
        }
    };
    let rob = |s: &str| -> Result<(), PddlError> {
        if s == robot {
            Ok(())
        } else {
            Err(PddlError::Semantic(format!("line {}: expected robot `{robot}`, found `{s}`", e.line())))
        }
    };
    match atoms.as_slice() {
        ["near", r, o] => rob(r).and(obj(o)).map(Predicate::Near),
        ["aligned", r, o] => rob(r).and(obj(o)).map(Predicate::Aligned),
        ["holding", r, o] => rob(r).and(obj(o)).map(Predicate::Holding),
        ["in", o, c] => Ok(Predicate::In(obj(o)?, obj(c)?)),
        ["found", o] => obj(o).map(Predicate::Found),
        _ => Err(syntax(e.line(), format!("unknown literal `{}`", e.shape()))),
    }
}
