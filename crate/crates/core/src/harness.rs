//! Batch trials over a scenario suite and the (level × ablation) report.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{ScenarioError, TrialError};
use crate::executive::{run_scenario, Ablation, TrialTrace, DEFAULT_MAX_CYCLES};
use crate::geometry::RngSeed;
use crate::planner::ActionName;
use crate::recovery::Layer;
use crate::sim::Scenario;

/// Stage order used in reports.
pub const STAGES: [(ActionName, &str); 4] =
    [(ActionName::ObjFind, "find"), (ActionName::Align, "align"), (ActionName::Grasp, "grasp"), (ActionName::Place, "place")];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTally {
    pub attempts: u64,
    pub successes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyTally {
    pub detected: u64,
    pub recovered: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub level: u8,
    pub ablation: Ablation,
    pub trials: u64,
    pub successes: u64,
    /// In [`STAGES`] order.
    pub stages: [StageTally; 4],
    pub l1: AnomalyTally,
    pub l2: AnomalyTally,
    /// Dispatched primitives summed over trials.
    pub steps: u64,
    /// Simulated seconds summed over trials.
    pub sim_time: f64,
    /// Set when the cell could not run.
    pub error: Option<String>,
}

fn ratio(n: u64, d: u64) -> Option<f64> {
    (d > 0).then(|| n as f64 / d as f64)
}

impl CellReport {
    pub fn empty(level: u8, ablation: Ablation) -> Self {
        Self {
            level,
            ablation,
            trials: 0,
            successes: 0,
            stages: [StageTally::default(); 4],
            l1: AnomalyTally::default(),
            l2: AnomalyTally::default(),
            steps: 0,
            sim_time: 0.0,
            error: None,
        }
    }

    pub fn sr(&self) -> Option<f64> {
        ratio(self.successes, self.trials)
    }

    /// Recovered over detected anomaly episodes; `None` when none occurred.
    pub fn rr(&self) -> Option<f64> {
        ratio(self.l1.recovered + self.l2.recovered, self.l1.detected + self.l2.detected)
    }

    pub fn ssr(&self, stage: usize) -> Option<f64> {
        ratio(self.stages[stage].successes, self.stages[stage].attempts)
    }

    pub fn add_trial(&mut self, trace: &TrialTrace) {
        let end = &trace.end;
        self.trials += 1;
        self.successes += end.status.is_success() as u64;
        for (i, (name, _)) in STAGES.iter().enumerate() {
            let k = ActionName::ALL.iter().position(|a| a == name).expect("known action");
            self.stages[i].attempts += end.stages[k].attempts as u64;
            self.stages[i].successes += end.stages[k].successes as u64;
        }
        for ep in &end.episodes {
            let t = if ep.layer == Layer::L1 { &mut self.l1 } else { &mut self.l2 };
            t.detected += 1;
            t.recovered += ep.recovered as u64;
        }
        self.steps += end.steps as u64;
        self.sim_time += end.sim_time;
    }

    fn merge(&mut self, other: &CellReport) {
        self.trials += other.trials;
        self.successes += other.successes;
        for i in 0..4 {
            self.stages[i].attempts += other.stages[i].attempts;
            self.stages[i].successes += other.stages[i].successes;
        }
        self.l1.detected += other.l1.detected;
        self.l1.recovered += other.l1.recovered;
        self.l2.detected += other.l2.detected;
        self.l2.recovered += other.l2.recovered;
        self.steps += other.steps;
        self.sim_time += other.sim_time;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub cells: Vec<CellReport>,
    /// Host seconds spent; not part of the emitted files.
    pub wall_clock: f64,
}

impl BatchReport {
    pub fn cell(&self, level: u8, ablation: Ablation) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.level == level && c.ablation == ablation)
    }

    /// All levels of one ablation pooled.
    pub fn overall(&self, ablation: Ablation) -> CellReport {
        let mut all = CellReport::empty(0, ablation);
        for c in self.cells.iter().filter(|c| c.ablation == ablation && c.error.is_none()) {
            all.merge(c);
        }
        all
    }

    pub fn failed_cells(&self) -> impl Iterator<Item = &CellReport> {
        self.cells.iter().filter(|c| c.error.is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub levels: Vec<u8>,
    pub ablations: Vec<Ablation>,
    pub trials: u64,
    pub base_seed: u64,
    pub max_cycles: u64,
    pub trace_dir: Option<PathBuf>,
}

impl BatchConfig {
    pub fn new(levels: &[u8], ablations: &[Ablation], trials: u64, base_seed: u64) -> Self {
        Self { levels: levels.to_vec(), ablations: ablations.to_vec(), trials, base_seed, max_cycles: DEFAULT_MAX_CYCLES, trace_dir: None }
    }
}

/// A scenario file that failed to load, with the level its path implies.
#[derive(Debug, Clone)]
pub struct LoadFailure {
    pub path: PathBuf,
    pub level: Option<u8>,
    pub error: ScenarioError,
}

fn level_from_path(path: &Path) -> Option<u8> {
    path.components().rev().find_map(|c| c.as_os_str().to_str()?.strip_prefix("level")?.parse().ok())
}

/// Loads one scenario file, or every `*.scn` below a directory in path
/// order.
pub fn load_scenarios(path: &Path) -> Result<(Vec<Scenario>, Vec<LoadFailure>), TrialError> {
    let mut files = Vec::new();
    if path.is_dir() {
        let mut stack = vec![path.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir)? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.extension().is_some_and(|e| e == "scn") {
                    files.push(p);
                }
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for f in files {
        match Scenario::load(&f) {
            Ok(s) => ok.push(s),
            Err(error) => failed.push(LoadFailure { level: level_from_path(&f), path: f, error }),
        }
    }
    Ok((ok, failed))
}

/// Runs `trials` seeded trials per (level, ablation) cell. Trial `i` uses
/// seed `base_seed + i` and the `i mod n`-th scenario of its level (sorted
/// by name), so results do not depend on execution order.
pub fn run_batch(scenarios: &[Scenario], failures: &[LoadFailure], cfg: &BatchConfig) -> Result<BatchReport, TrialError> {
    let start = Instant::now();
    if cfg.trials < 1 {
        return Err(TrialError::Config("trials must be at least 1".into()));
    }
    if let Some(dir) = &cfg.trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut report = BatchReport::default();
    for &level in &cfg.levels {
        let mut suite: Vec<&Scenario> = scenarios.iter().filter(|s| s.level == level).collect();
        suite.sort_by(|a, b| a.name.cmp(&b.name));
        let broken: Vec<String> = failures
            .iter()
            .filter(|f| f.level.is_none_or(|l| l == level))
            .map(|f| format!("{}: {}", f.path.display(), f.error))
            .collect();
        for &ablation in &cfg.ablations {
            let mut cell = CellReport::empty(level, ablation);
            if !broken.is_empty() {
                cell.error = Some(broken.join("; "));
            } else if suite.is_empty() {
                cell.error = Some(format!("no scenarios for level {level}"));
            }
            if cell.error.is_some() {
                report.cells.push(cell);
                continue;
            }
            for i in 0..cfg.trials {
                let scenario = suite[(i % suite.len() as u64) as usize];
                let trace = run_scenario(scenario, RngSeed(cfg.base_seed.wrapping_add(i)), ablation, cfg.max_cycles);
                if let Some(dir) = &cfg.trace_dir {
                    let path = dir.join(format!("level{level}_{ablation}_{i:04}.jsonl"));
                    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
                    trace.write_jsonl(&mut f)?;
                    f.flush()?;
                }
                cell.add_trial(&trace);
            }
            report.cells.push(cell);
        }
    }
    report.wall_clock = start.elapsed().as_secs_f64();
    Ok(report)
}

pub const CSV_HEADER: [&str; 19] = [
    "level",
    "ablation",
    "trials",
    "successes",
    "find_attempts",
    "find_successes",
    "align_attempts",
    "align_successes",
    "grasp_attempts",
    "grasp_successes",
    "place_attempts",
    "place_successes",
    "l1_detected",
    "l1_recovered",
    "l2_detected",
    "l2_recovered",
    "steps",
    "sim_time",
    "error",
];

/// One row per cell of raw counts; rates are left to consumers.
pub fn write_csv(report: &BatchReport, w: impl Write) -> Result<(), TrialError> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| TrialError::Io(std::io::Error::other(e));
    out.write_record(CSV_HEADER).map_err(csv_err)?;
    for c in &report.cells {
        let mut row = vec![c.level.to_string(), c.ablation.to_string(), c.trials.to_string(), c.successes.to_string()];
        for s in &c.stages {
            row.push(s.attempts.to_string());
            row.push(s.successes.to_string());
        }
        row.extend([c.l1.detected, c.l1.recovered, c.l2.detected, c.l2.recovered, c.steps].map(|v| v.to_string()));
        row.push(c.sim_time.to_string());
        row.push(c.error.clone().unwrap_or_default());
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn csv_string(report: &BatchReport) -> String {
    let mut buf = Vec::new();
    write_csv(report, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "—".to_string(), |x| format!("{:.1}%", 100.0 * x))
}

/// Aligned text table: one block per ablation, one column per level
/// present, then the pooled column.
pub fn text_table(report: &BatchReport) -> String {
    let mut levels: Vec<u8> = report.cells.iter().map(|c| c.level).collect();
    levels.sort_unstable();
    levels.dedup();
    let mut ablations: Vec<Ablation> = report.cells.iter().map(|c| c.ablation).collect();
    ablations.sort_unstable();
    ablations.dedup();

    let mut out = String::new();
    for (bi, ab) in ablations.iter().enumerate() {
        if bi > 0 {
            out.push('\n');
        }
        let mut cols: Vec<(String, Option<CellReport>)> =
            levels.iter().map(|&l| (format!("Level {l}"), report.cell(l, *ab).filter(|c| c.error.is_none()).cloned())).collect();
        cols.push(("Overall".to_string(), Some(report.overall(*ab))));
        let mut rows: Vec<(String, Vec<String>)> = Vec::new();
        let metric = |f: &dyn Fn(&CellReport) -> String| cols.iter().map(|(_, c)| c.as_ref().map_or_else(|| "error".to_string(), f)).collect();
        rows.push(("SR".into(), metric(&|c| pct(c.sr()))));
        for (i, (_, name)) in STAGES.iter().enumerate() {
            rows.push((format!("SSR {name}"), metric(&|c| pct(c.ssr(i)))));
        }
        rows.push(("RR".into(), metric(&|c| pct(c.rr()))));
        rows.push(("Steps (dispatched)".into(), metric(&|c| ratio(c.steps, c.trials).map_or("—".into(), |v| format!("{v:.2}")))));
        rows.push((
            "Sim time (s)".into(),
            metric(&|c| if c.trials == 0 { "—".into() } else { format!("{:.1}", c.sim_time / c.trials as f64) }),
        ));
        rows.push(("Trials".into(), metric(&|c| c.trials.to_string())));

        let label_w = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(ab.as_str().len());
        let col_w: Vec<usize> = cols
            .iter()
            .enumerate()
            .map(|(i, (h, _))| rows.iter().map(|(_, v)| v[i].chars().count()).chain([h.chars().count()]).max().unwrap_or(0))
            .collect();
        let pad = |s: &str, w: usize| format!("{}{s}", " ".repeat(w - s.chars().count()));
        let _ = write!(out, "{}{}", ab, " ".repeat(label_w - ab.as_str().len()));
        for (i, (h, _)) in cols.iter().enumerate() {
            let _ = write!(out, "  {}", pad(h, col_w[i]));
        }
        out.push('\n');
        for (label, vals) in &rows {
            let _ = write!(out, "{label}{}", " ".repeat(label_w - label.chars().count()));
            for (i, v) in vals.iter().enumerate() {
                let _ = write!(out, "  {}", pad(v, col_w[i]));
            }
            out.push('\n');
        }
    }
    out
}
