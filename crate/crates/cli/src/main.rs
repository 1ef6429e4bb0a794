//! `cog` — run cognitive scenarios, check rule files, and inspect episodic
//! dumps.
//!
//! Exit codes: 0 goal reached; 2 bad config or range; 3 cycle limit hit;
//! 4 rule diagnostics; 5 corrupt dump.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cog_core::episodic::EpisodicStore;
use cog_core::hash::ScopeFilter;
use cog_core::scenario::{load_config, run_scenario, ScenarioError};
use cog_core::symbols::Symbol;

#[derive(Parser)]
#[command(name = "cog", version, about = "desk-scale cognitive-architecture runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config and write trace, dump, and metrics artifacts.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the config's random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Artifact directory.
        #[arg(long, default_value = "cog-out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = TraceLevel::Summary)]
        trace: TraceLevel,
    },
    /// Rule-file tools.
    Rules {
        #[command(subcommand)]
        command: RulesCommand,
    },
    /// Inspect an episodic dump.
    Episodic {
        #[command(subcommand)]
        command: EpisodicCommand,
    },
}

#[derive(Subcommand)]
enum RulesCommand {
    /// Parse and validate a rule file.
    Check { file: PathBuf },
}

#[derive(Subcommand)]
enum EpisodicCommand {
    /// Print episodes in a cycle range.
    Dump {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Cycle range `a..b` (inclusive); whole store when omitted.
        #[arg(long)]
        range: Option<String>,
    },
    /// Print repeated-state pairs in a cycle range.
    Repeats {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        range: Option<String>,
        /// `all`, `world` (the robot's world attributes), or a
        /// comma-separated attribute list.
        #[arg(long, default_value = "all")]
        scope: String,
        /// Report every same-state pair, not just consecutive ones.
        #[arg(long)]
        pairwise: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TraceLevel {
    Quiet,
    Summary,
    Full,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            trace,
        } => cmd_run(&scenario, seed, &out, trace),
        Command::Rules {
            command: RulesCommand::Check { file },
        } => cmd_rules_check(&file),
        Command::Episodic { command } => match command {
            EpisodicCommand::Dump { input, range } => cmd_episodic_dump(&input, range.as_deref()),
            EpisodicCommand::Repeats {
                input,
                range,
                scope,
                pairwise,
            } => cmd_episodic_repeats(&input, range.as_deref(), &scope, pairwise),
        },
    }
}

fn cmd_run(scenario: &Path, seed: Option<u64>, out: &Path, trace: TraceLevel) -> ExitCode {
    let (mut config, base) = match load_config(scenario) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let report = match run_scenario(&config, &base) {
        Ok(r) => r,
        Err(ScenarioError::Rules { file, diags }) => {
            eprintln!("rule diagnostics in {file}:");
            for d in diags {
                eprintln!("  {file}:{d}");
            }
            return ExitCode::from(4);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    if let Err(e) = write_artifacts(out, &report) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }

    match trace {
        TraceLevel::Quiet => {}
        TraceLevel::Summary => print!("{}", report.human_trace),
        TraceLevel::Full => {
            let dump_lines: Vec<&str> = report.episodic_dump.lines().collect();
            let offset = dump_lines.len().saturating_sub(report.reports.len());
            for (i, line) in report.human_trace.lines().enumerate() {
                println!("{line}");
                if let Some(dump) = dump_lines.get(offset + i) {
                    println!("    wm {dump}");
                }
            }
        }
    }

    if report.goal_reached {
        ExitCode::SUCCESS
    } else {
        eprintln!(
            "cycle limit reached after {} cycles without the goal",
            report.cycles_run
        );
        ExitCode::from(3)
    }
}

fn write_artifacts(out: &Path, report: &cog_core::scenario::RunReport) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("trace.txt"), &report.human_trace)?;
    std::fs::write(out.join("trace.jsonl"), &report.machine_trace)?;
    std::fs::write(out.join("episodic.jsonl"), &report.episodic_dump)?;
    let mut metrics = serde_json::to_string_pretty(&report.metrics).expect("metrics serialize");
    metrics.push('\n');
    std::fs::write(out.join("metrics.json"), metrics)?;
    Ok(())
}

fn cmd_rules_check(file: &Path) -> ExitCode {
    let text = match std::fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", file.display());
            return ExitCode::from(2);
        }
    };
    match cog_core::rules::parser::parse_rules(&text) {
        Ok(rules) => {
            println!("{} rules ok", rules.len());
            ExitCode::SUCCESS
        }
        Err(diags) => {
            for d in &diags {
                eprintln!("{}:{d}", file.display());
            }
            ExitCode::from(4)
        }
    }
}

fn parse_range(s: &str) -> Option<(u64, u64)> {
    let (a, b) = s.split_once("..")?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn load_store(input: &Path) -> Result<EpisodicStore, ExitCode> {
    let text = std::fs::read_to_string(input).map_err(|e| {
        eprintln!("error: {}: {e}", input.display());
        ExitCode::from(2)
    })?;
    EpisodicStore::load_dump(&text, 32).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(5)
    })
}

fn store_range(store: &EpisodicStore, range: Option<&str>) -> Result<(u64, u64), ExitCode> {
    let full = match (store.iter().next(), store.last_cycle()) {
        (Some(first), Some(last)) => (first.cycle, last),
        _ => {
            eprintln!("error: dump holds no episodes");
            return Err(ExitCode::from(2));
        }
    };
    let Some(raw) = range else { return Ok(full) };
    let Some((a, b)) = parse_range(raw) else {
        eprintln!("error: bad range `{raw}`, expected a..b");
        return Err(ExitCode::from(2));
    };
    if a > b || a < full.0 || b > full.1 {
        eprintln!(
            "error: range {a}..{b} is outside the recorded cycles {}..{}",
            full.0, full.1
        );
        return Err(ExitCode::from(2));
    }
    Ok((a, b))
}

fn cmd_episodic_dump(input: &Path, range: Option<&str>) -> ExitCode {
    let store = match load_store(input) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let (a, b) = match store_range(&store, range) {
        Ok(r) => r,
        Err(code) => return code,
    };
    // Re-dump keeps the canonical id space of the loaded store.
    let text = store.dump();
    for (i, line) in text.lines().enumerate() {
        let cycle = store.iter().nth(i).map(|e| e.cycle).unwrap_or(u64::MAX);
        if cycle >= a && cycle <= b {
            println!("{line}");
        }
    }
    ExitCode::SUCCESS
}

/// The robot world's attribute vocabulary, mirrored from the environment.
fn world_attrs() -> BTreeSet<Symbol> {
    ["world", "door", "holding", "remaining", "next-item", "item", "name", "at"]
        .map(Symbol::id)
        .into_iter()
        .collect()
}

fn cmd_episodic_repeats(
    input: &Path,
    range: Option<&str>,
    scope: &str,
    pairwise: bool,
) -> ExitCode {
    let store = match load_store(input) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let (a, b) = match store_range(&store, range) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let filter = match scope {
        "all" => ScopeFilter::All,
        "world" => ScopeFilter::Attrs(world_attrs()),
        list => ScopeFilter::attrs(list.split(',').map(|s| Symbol::id(s.trim()))),
    };
    match store.find_repeated_states(a, b, &filter, !pairwise) {
        Ok(pairs) => {
            for (i, j) in &pairs {
                println!("{i} {j}");
            }
            println!("{} pairs", pairs.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
