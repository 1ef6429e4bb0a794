//! Scenario configuration and the run loop: wire an environment, rules, and
//! memory seeds into an agent, run it to the goal or the cycle cap, and
//! collect traces, the episodic dump, and metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::env::{game::GameEnv, game::GameFixture, robot::RobotEnv, wordle::WordleEnv, Environment};
use crate::episodic::{parse_state_seed, EpisodicError};
use crate::kernel::{Agent, CycleReport, KernelError, KernelParams};
use crate::rules::parser::{parse_rules, Diagnostic};
use crate::rules::ImpasseKind;
use crate::semantic::{parse_seed, SemanticError};
use crate::symbols::Symbol;
use crate::wm::REAL;

#[derive(Debug, Clone, Deserialize)]
pub struct ScenarioConfig {
    pub environment: String,
    #[serde(default)]
    pub env_params: Json,
    #[serde(default)]
    pub rules: Vec<PathBuf>,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub episodic_seed: Option<PathBuf>,
    pub max_cycles: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: ParamOverrides,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ParamOverrides {
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub d: Option<f64>,
    pub tau_success: Option<f64>,
    pub tau_partial: Option<f64>,
    pub tau_match: Option<f64>,
    pub tie_limit: Option<usize>,
    pub snapshot_k: Option<u64>,
    pub depth_cap: Option<usize>,
}

impl ParamOverrides {
    fn apply(&self, seed: u64) -> KernelParams {
        let d = KernelParams::default();
        KernelParams {
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            alpha: self.alpha.unwrap_or(d.alpha),
            d: self.d.unwrap_or(d.d),
            tau_success: self.tau_success.unwrap_or(d.tau_success),
            tau_partial: self.tau_partial.unwrap_or(d.tau_partial),
            tau_match: self.tau_match.unwrap_or(d.tau_match),
            tie_limit: self.tie_limit.unwrap_or(d.tie_limit),
            snapshot_k: self.snapshot_k.unwrap_or(d.snapshot_k),
            depth_cap: self.depth_cap.unwrap_or(d.depth_cap),
            seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error("rule diagnostics in {file}:\n{}", render_diags(.diags))]
    Rules { file: String, diags: Vec<Diagnostic> },
    #[error("cycle limit {0} reached before the goal")]
    StepLimitExceeded(u64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Episodic(#[from] EpisodicError),
    #[error("io: {0}")]
    Io(String),
}

fn render_diags(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Everything one run produced.
pub struct RunReport {
    /// The agent as it ended, for inspection by verification suites.
    pub agent: Agent,
    pub reports: Vec<CycleReport>,
    pub human_trace: String,
    pub machine_trace: String,
    pub episodic_dump: String,
    pub metrics: Json,
    pub goal_reached: bool,
    pub cycles_run: u64,
}

pub fn load_config(path: &Path) -> Result<(ScenarioConfig, PathBuf), ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
    let config: ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| ScenarioError::Config(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((config, base))
}

pub fn build_env(config: &ScenarioConfig, base: &Path) -> Result<Box<dyn Environment>, ScenarioError> {
    let p = &config.env_params;
    match config.environment.as_str() {
        "wordle" => {
            let secret = p["secret"]
                .as_str()
                .ok_or_else(|| ScenarioError::Config("wordle needs env_params.secret".into()))?;
            let max_guesses = p["max_guesses"].as_u64().unwrap_or(6) as usize;
            Ok(Box::new(WordleEnv::new(secret, max_guesses)))
        }
        "robot" => {
            let items = p["items"].as_u64().unwrap_or(3) as usize;
            let episodes = p["episodes"].as_u64().unwrap_or(1) as usize;
            let instructor = p["instructor"].as_bool().unwrap_or(false);
            Ok(Box::new(RobotEnv::new(items, episodes, instructor)))
        }
        "game" => {
            let fixture_path = p["fixture"]
                .as_str()
                .ok_or_else(|| ScenarioError::Config("game needs env_params.fixture".into()))?;
            let text = std::fs::read_to_string(base.join(fixture_path))
                .map_err(|e| ScenarioError::Config(format!("{fixture_path}: {e}")))?;
            let fixture = GameFixture::from_json(&text)
                .map_err(|e| ScenarioError::Config(e.to_string()))?;
            let episodes = p["episodes"].as_u64().unwrap_or(1) as usize;
            Ok(Box::new(GameEnv::new(fixture, episodes)))
        }
        other => Err(ScenarioError::Config(format!("unknown environment {other}"))),
    }
}

/// Build the agent described by a config (rules, lexicon, episodic seed).
pub fn build_agent(
    config: &ScenarioConfig,
    base: &Path,
    env: &dyn Environment,
) -> Result<Agent, ScenarioError> {
    let params = config.params.apply(config.seed);
    let mut agent = Agent::new(params, env.world_scope())?;
    for rule_path in &config.rules {
        let full = base.join(rule_path);
        let text = std::fs::read_to_string(&full)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", full.display())))?;
        let rules = parse_rules(&text).map_err(|diags| ScenarioError::Rules {
            file: rule_path.display().to_string(),
            diags,
        })?;
        for rule in rules {
            agent
                .rules
                .add(rule)
                .map_err(|e| ScenarioError::Config(e.to_string()))?;
        }
    }
    if let Some(lex) = &config.lexicon {
        let full = base.join(lex);
        let text = std::fs::read_to_string(&full)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", full.display())))?;
        for chunk in parse_seed(&text)? {
            agent.semantic.store_chunk(chunk)?;
        }
    }
    if let Some(seed_path) = &config.episodic_seed {
        let full = base.join(seed_path);
        let text = std::fs::read_to_string(&full)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", full.display())))?;
        let states = parse_state_seed(&text)?;
        agent.episodic.seed_states(&states)?;
        agent.resume_after_seed();
    }
    Ok(agent)
}

/// Run to the goal, the cycle cap, or an error. Always returns the artifacts
/// gathered so far alongside the outcome.
pub fn run_scenario(
    config: &ScenarioConfig,
    base: &Path,
) -> Result<RunReport, ScenarioError> {
    let mut env = build_env(config, base)?;
    let mut agent = build_agent(config, base, env.as_ref())?;

    let mut reports = Vec::new();
    let mut human = String::new();
    let mut machine = String::new();
    let mut cycles_run = 0u64;
    while cycles_run < config.max_cycles && !env.goal_reached() {
        let report = agent.run_cycle(env.as_mut())?;
        let _ = writeln!(human, "{}", human_line(&report));
        let _ = writeln!(machine, "{}", machine_line(&report));
        reports.push(report);
        cycles_run += 1;
    }
    let goal_reached = env.goal_reached();

    // Scenario-level improvement signal: if a later task episode beat the
    // first one, reward the learned rules.
    if let Some(actions) = env.metrics().get("actions_per_episode").and_then(|v| v.as_array()) {
        let counts: Vec<u64> = actions.iter().filter_map(|v| v.as_u64()).collect();
        if counts.len() >= 2 && counts[1] < counts[0] {
            agent.reward_compiled(1.0)?;
            let _ = writeln!(
                human,
                "[reward ] improvement signal: episode actions {} -> {}",
                counts[0], counts[1]
            );
        }
    }

    let metrics = collect_metrics(&agent, env.as_ref(), &reports, goal_reached, cycles_run);
    Ok(RunReport {
        episodic_dump: agent.episodic.dump(),
        human_trace: human,
        machine_trace: machine,
        metrics,
        goal_reached,
        cycles_run,
        reports,
        agent,
    })
}

fn impasse_map(counts: &BTreeMap<ImpasseKind, u64>) -> Json {
    json!({
        "tie": counts.get(&ImpasseKind::Tie).copied().unwrap_or(0),
        "no_change": counts.get(&ImpasseKind::NoChange).copied().unwrap_or(0),
        "operator_failure": counts.get(&ImpasseKind::OperatorFailure).copied().unwrap_or(0),
    })
}

/// Assemble the run metrics document.
pub fn collect_metrics(
    agent: &Agent,
    env: &dyn Environment,
    reports: &[CycleReport],
    goal_reached: bool,
    cycles_run: u64,
) -> Json {
    let mut total: BTreeMap<ImpasseKind, u64> = BTreeMap::new();
    for per in agent.impasses_per_episode() {
        for (k, v) in per {
            *total.entry(*k).or_insert(0) += v;
        }
    }
    let discarded = agent
        .wm
        .visible_triples(REAL)
        .map(|v| {
            v.iter()
                .filter(|t| t.attr == Symbol::id("discarded"))
                .count() as u64
        })
        .unwrap_or(0)
        / 2; // each discard marks both the chunk element and the root
    let max_applied = reports.iter().map(|r| r.applied).max().unwrap_or(0);
    json!({
        "cycles": cycles_run,
        "goal_reached": goal_reached,
        "impasses": impasse_map(&total),
        "impasses_per_episode": agent
            .impasses_per_episode()
            .iter()
            .map(impasse_map)
            .collect::<Vec<_>>(),
        "rules_learned": agent.rules_learned().len(),
        "learned_rule_names": agent.rules_learned(),
        "hypothetical_contexts": agent.hypothetical_contexts_created(),
        "motor_blocked_from_hypothetical": agent.motor_blocked_from_hypothetical(),
        "max_instantiations_per_cycle": max_applied,
        "discarded_candidates": discarded,
        "rewards_applied": agent
            .rewards_applied()
            .iter()
            .map(|(name, q)| json!({ "rule": name, "utility": q }))
            .collect::<Vec<_>>(),
        "env": env.metrics(),
    })
}

pub fn human_line(r: &CycleReport) -> String {
    let mut line = format!(
        "[c{:05}] {}",
        r.cycle,
        if r.stepped_real { "real " } else { "hypo " }
    );
    match (&r.selected, &r.impasse) {
        (Some(rule), _) => {
            let _ = write!(line, "fired {rule}");
        }
        (None, Some(kind)) => {
            let _ = write!(line, "impasse {kind}");
            if let Some(id) = r.new_substate {
                let _ = write!(line, " -> substate {id}");
            }
        }
        (None, None) => {
            let _ = write!(line, "idle");
        }
    }
    for (module, verb, from_real) in &r.commands {
        let _ = write!(
            line,
            " | {}:{}{}",
            module,
            verb,
            if *from_real { "" } else { "(hypo)" }
        );
    }
    for (cmd, ok) in &r.motor {
        let _ = write!(line, " | act {cmd} {}", if *ok { "ok" } else { "REJECTED" });
    }
    for name in &r.compiled {
        let _ = write!(line, " | learned {name}");
    }
    for (id, status) in &r.resolved {
        let _ = write!(line, " | substate {id} {status:?}");
    }
    line
}

pub fn machine_line(r: &CycleReport) -> String {
    json!({
        "cycle": r.cycle,
        "stepped_real": r.stepped_real,
        "percept": [r.percept_adds, r.percept_removes],
        "matched": r.matched,
        "selected": r.selected,
        "bindings": r.selected_bindings,
        "impasse": r.impasse.map(|k| k.name()),
        "new_substate": r.new_substate,
        "resolved": r
            .resolved
            .iter()
            .map(|(id, s)| json!([id, format!("{s:?}")]))
            .collect::<Vec<_>>(),
        "applied": r.applied,
        "commands": r
            .commands
            .iter()
            .map(|(m, v, real)| json!([m.name(), v, real]))
            .collect::<Vec<_>>(),
        "motor": r.motor.iter().map(|(c, ok)| json!([c, ok])).collect::<Vec<_>>(),
        "compiled": r.compiled,
        "buffers": r
            .buffer_status
            .iter()
            .map(|(m, s)| json!([m.name(), s.name()]))
            .collect::<Vec<_>>(),
        "hash": format!("{:016x}", r.episode_hash),
    })
    .to_string()
}
