//! Python bindings: drive scenarios cycle by cycle or to completion, check
//! rule files, and reach the pure helpers (guess scoring, activation).

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use cog_core::env::Environment;
use cog_core::kernel::{Agent, CycleReport};
use cog_core::scenario::{
    build_agent, build_env, collect_metrics, human_line, load_config, machine_line,
};
use cog_core::semantic::ChunkMeta;

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// One loaded scenario: an agent wired to its environment.
///
/// Usage from Python:
///
///     from cog_py import Scenario
///     s = Scenario("scenarios/robot.json")
///     while not s.goal_reached() and s.cycles_run() < 200:
///         s.step()
///     print(s.metrics())
#[pyclass(unsendable)]
struct Scenario {
    agent: Agent,
    env: Box<dyn Environment>,
    max_cycles: u64,
    reports: Vec<CycleReport>,
}

#[pymethods]
impl Scenario {
    #[new]
    #[pyo3(signature = (path, seed=None))]
    fn new(path: PathBuf, seed: Option<u64>) -> PyResult<Self> {
        let (mut config, base) = load_config(&path).map_err(runtime_err)?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        let env = build_env(&config, &base).map_err(runtime_err)?;
        let agent = build_agent(&config, &base, env.as_ref()).map_err(runtime_err)?;
        Ok(Scenario {
            agent,
            env,
            max_cycles: config.max_cycles,
            reports: Vec::new(),
        })
    }

    /// Run one cognitive cycle; returns the machine trace line (JSON).
    fn step(&mut self) -> PyResult<String> {
        if self.env.goal_reached() {
            return Err(PyRuntimeError::new_err("the goal is already reached"));
        }
        let report = self.agent.run_cycle(self.env.as_mut()).map_err(runtime_err)?;
        let line = machine_line(&report);
        self.reports.push(report);
        Ok(line)
    }

    /// Run to the goal or the configured cycle cap; returns metrics (JSON).
    fn run(&mut self) -> PyResult<String> {
        while !self.env.goal_reached() && (self.reports.len() as u64) < self.max_cycles {
            let report = self.agent.run_cycle(self.env.as_mut()).map_err(runtime_err)?;
            self.reports.push(report);
        }
        self.metrics()
    }

    fn goal_reached(&self) -> bool {
        self.env.goal_reached()
    }

    fn cycles_run(&self) -> u64 {
        self.reports.len() as u64
    }

    /// Metrics for the cycles run so far (JSON).
    fn metrics(&self) -> PyResult<String> {
        let m = collect_metrics(
            &self.agent,
            self.env.as_ref(),
            &self.reports,
            self.env.goal_reached(),
            self.reports.len() as u64,
        );
        Ok(m.to_string())
    }

    /// Human-readable trace lines for the cycles run so far.
    fn trace(&self) -> Vec<String> {
        self.reports.iter().map(human_line).collect()
    }

    /// The visible REAL working memory as `(id ^attr value)` strings.
    fn working_memory(&self) -> PyResult<Vec<String>> {
        Ok(self
            .agent
            .wm
            .visible_triples(cog_core::wm::REAL)
            .map_err(runtime_err)?
            .iter()
            .map(|t| t.to_string())
            .collect())
    }

    /// The episodic store as its JSON-lines dump.
    fn episodic_dump(&self) -> String {
        self.agent.episodic.dump()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(env={}, cycles={}, goal={})",
            self.env.label(),
            self.reports.len(),
            self.env.goal_reached()
        )
    }
}

/// Score a guess against a secret; returns five of "green"/"yellow"/"gray".
#[pyfunction]
fn score_guess(guess: &str, secret: &str) -> PyResult<Vec<String>> {
    cog_core::env::wordle::score_guess(guess, secret)
        .map(|scores| scores.iter().map(|s| s.as_symbol().to_string()).collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Parse rule text; returns diagnostics as "line:col: message" strings
/// (empty means the file is valid).
#[pyfunction]
fn check_rules(text: &str) -> Vec<String> {
    match cog_core::rules::parser::parse_rules(text) {
        Ok(_) => Vec::new(),
        Err(diags) => diags.iter().map(|d| d.to_string()).collect(),
    }
}

/// Base-level activation: ln(n_accesses) − d·ln(Δt + 1).
#[pyfunction]
fn activation(n_accesses: u64, last_access_cycle: u64, now: u64, d: f64) -> PyResult<f64> {
    if d <= 0.0 {
        return Err(PyValueError::new_err("decay must be positive"));
    }
    if n_accesses == 0 {
        return Err(PyValueError::new_err("n_accesses must be at least 1"));
    }
    Ok(cog_core::semantic::activation(
        &ChunkMeta {
            n_accesses,
            last_access_cycle,
            creation_cycle: 0,
        },
        now,
        d,
    ))
}

#[pymodule]
fn cog_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(score_guess, m)?)?;
    m.add_function(wrap_pyfunction!(check_rules, m)?)?;
    m.add_function(wrap_pyfunction!(activation, m)?)?;
    Ok(())
}
