//! `anchor-sim`: batch trials, one-off planning, shell fitting and trace
//! replay.
//!
//! Exit codes: 0 success, 1 a cell, plan or replay failed, 2 bad
//! configuration or unreadable input.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anchor_core::executive::{replay, Ablation, TrialTrace, DEFAULT_MAX_CYCLES};
use anchor_core::harness::{load_scenarios, run_batch, text_table, write_csv, BatchConfig};
use anchor_core::planner::{parse_problem, plan};
use anchor_core::reachability::ShellFitParams;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "anchor-sim", version, about = "Anchored mobile-manipulation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Full,
    NoAlign,
    NoRecovery,
    OpenLoop,
    All,
}

impl AblationArg {
    fn expand(self) -> Vec<Ablation> {
        match self {
            AblationArg::Full => vec![Ablation::Full],
            AblationArg::NoAlign => vec![Ablation::NoAlign],
            AblationArg::NoRecovery => vec![Ablation::NoRecovery],
            AblationArg::OpenLoop => vec![Ablation::OpenLoop],
            AblationArg::All => Ablation::ALL.to_vec(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded trials per (level, ablation) cell and write a CSV report.
    Run {
        /// A scenario file or a directory searched recursively for `*.scn`.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        level: LevelArg,
        #[arg(long, value_enum, default_value = "all")]
        ablation: AblationArg,
        #[arg(long, default_value_t = 20)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_CYCLES)]
        max_cycles: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write one JSONL trace per trial here.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Plan a PDDL problem in the fixed domain and print the plan.
    Plan {
        #[arg(long)]
        problem: PathBuf,
    },
    /// Fit the reachability shell and save it as text.
    FitShell {
        /// JSON with optional `arm`, `fit` and `seed` fields. Defaults
        /// throughout when omitted.
        #[arg(long)]
        arm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-derive a logged trial and check it against its terminal status.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
}

/// Outcome of a subcommand: `Ok(true)` clean, `Ok(false)` a reported
/// failure, `Err` a configuration problem.
type Status = Result<bool, String>;

fn main() -> ExitCode {
    let status = match Cli::parse().command {
        Command::Run { scenario, level, ablation, trials, seed, max_cycles, out, trace_dir } => {
            run(scenario, level, ablation, trials, seed, max_cycles, out, trace_dir)
        }
        Command::Plan { problem } => plan_cmd(problem),
        Command::FitShell { arm, out } => fit_shell(arm, out),
        Command::Replay { trace } => replay_cmd(trace),
    };
    match status {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    scenario: PathBuf,
    level: LevelArg,
    ablation: AblationArg,
    trials: u64,
    seed: u64,
    max_cycles: u64,
    out: PathBuf,
    trace_dir: Option<PathBuf>,
) -> Status {
    if trials < 1 {
        return Err("--trials must be at least 1".into());
    }
    if max_cycles < 1 {
        return Err("--max-cycles must be at least 1".into());
    }
    if !scenario.exists() {
        return Err(format!("{}: no such file or directory", scenario.display()));
    }
    let (scenarios, failures) = load_scenarios(&scenario).map_err(|e| e.to_string())?;
    for f in &failures {
        eprintln!("{}: {}", f.path.display(), f.error);
    }
    let levels = match level {
        LevelArg::One => vec![1],
        LevelArg::Two => vec![2],
        LevelArg::Three => vec![3],
        LevelArg::All => {
            let mut l: Vec<u8> = scenarios.iter().map(|s| s.level).chain(failures.iter().filter_map(|f| f.level)).collect();
            l.sort_unstable();
            l.dedup();
            l
        }
    };
    if levels.is_empty() {
        return Err(format!("no loadable scenarios under {}", scenario.display()));
    }
    let mut cfg = BatchConfig::new(&levels, &ablation.expand(), trials, seed);
    cfg.max_cycles = max_cycles;
    cfg.trace_dir = trace_dir;
    let report = run_batch(&scenarios, &failures, &cfg).map_err(|e| e.to_string())?;
    let file = File::create(&out).map_err(|e| format!("{}: {e}", out.display()))?;
    write_csv(&report, BufWriter::new(file)).map_err(|e| format!("{}: {e}", out.display()))?;
    print!("{}", text_table(&report));
    let mut ok = true;
    for c in report.failed_cells() {
        eprintln!("cell level {} {} skipped: {}", c.level, c.ablation, c.error.as_deref().unwrap_or(""));
        ok = false;
    }
    eprintln!("{} cells in {:.1} s", report.cells.len(), report.wall_clock);
    Ok(ok)
}

fn plan_cmd(problem: PathBuf) -> Status {
    let text = std::fs::read_to_string(&problem).map_err(|e| format!("{}: {e}", problem.display()))?;
    let p = parse_problem(&text).map_err(|e| format!("{}: {e}", problem.display()))?;
    match plan(&p) {
        Some(pl) => {
            for a in &pl.actions {
                println!("{a}");
            }
            println!("; cost {}", pl.cost);
            Ok(true)
        }
        None => {
            println!("; goal unreachable");
            Ok(false)
        }
    }
}

fn fit_shell(arm: Option<PathBuf>, out: PathBuf) -> Status {
    let params = match arm {
        Some(path) => {
            let f = File::open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            serde_json::from_reader(BufReader::new(f)).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ShellFitParams::default(),
    };
    let shell = params.run().map_err(|e| e.to_string())?;
    shell.save(&out).map_err(|e| format!("{}: {e}", out.display()))?;
    let (o, i) = (shell.outer.semi_axes(), shell.inner.semi_axes());
    println!("outer semi-axes {:.3} {:.3} {:.3}", o[0], o[1], o[2]);
    println!("inner semi-axes {:.3} {:.3} {:.3}", i[0], i[1], i[2]);
    let off = shell.offset();
    println!("offset {:.3} {:.3} {:.3}", off.x, off.y, off.z);
    Ok(true)
}

fn replay_cmd(trace: PathBuf) -> Status {
    let f = File::open(&trace).map_err(|e| format!("{}: {e}", trace.display()))?;
    let t = TrialTrace::read_jsonl(BufReader::new(f)).map_err(|e| format!("{}: {e}", trace.display()))?;
    let mut stdout = std::io::stdout().lock();
    match replay(&t) {
        Ok(r) => {
            let _ = writeln!(stdout, "{} ({} cycles checked)", r.status, r.cycles_checked);
            Ok(true)
        }
        Err(e) => {
            let _ = writeln!(stdout, "replay mismatch: {e}");
            Ok(false)
        }
    }
}
