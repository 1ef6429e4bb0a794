//! Pluggable deterministic environments. Each supplies percepts as a keyed
//! tree (stable keys give stable working-memory elements across cycles) and
//! executes motor commands, counting actions per task episode.

pub mod wordle;
pub mod robot;
pub mod game;

use std::fmt;

use crate::hash::ScopeFilter;
use crate::symbols::Symbol;

/// A percept value: a scalar or a child node with a stable identity key.
#[derive(Debug, Clone, PartialEq)]
pub enum PerceptValue {
    Sym(Symbol),
    Node(PerceptNode),
}

/// A keyed subtree of percept attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptNode {
    /// Stable identity: the same key names the same element across cycles.
    pub key: String,
    pub attrs: Vec<(Symbol, PerceptValue)>,
}

impl PerceptNode {
    pub fn new(key: &str) -> PerceptNode {
        PerceptNode {
            key: key.to_string(),
            attrs: Vec::new(),
        }
    }

    pub fn sym(mut self, attr: &str, value: Symbol) -> PerceptNode {
        self.attrs.push((Symbol::id(attr), PerceptValue::Sym(value)));
        self
    }

    pub fn node(mut self, attr: &str, child: PerceptNode) -> PerceptNode {
        self.attrs
            .push((Symbol::id(attr), PerceptValue::Node(child)));
        self
    }
}

/// The full observable state, attached under the agent's state root.
#[derive(Debug, Clone, PartialEq)]
pub struct Percept {
    pub attrs: Vec<(Symbol, PerceptValue)>,
}

/// A motor request: verb plus named arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct MotorCommand {
    pub verb: Symbol,
    pub args: Vec<(Symbol, Symbol)>,
}

impl MotorCommand {
    pub fn arg(&self, name: &str) -> Option<&Symbol> {
        let key = Symbol::id(name);
        self.args.iter().find(|(a, _)| *a == key).map(|(_, v)| v)
    }
}

impl fmt::Display for MotorCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.verb)?;
        for (a, v) in &self.args {
            write!(f, " {a}={v}")?;
        }
        Ok(())
    }
}

/// What one motor action did.
#[derive(Debug, Clone, PartialEq)]
pub struct ActReport {
    pub ok: bool,
    pub changed: Vec<String>,
    pub reason: Option<String>,
}

impl ActReport {
    pub fn ok(changed: Vec<String>) -> ActReport {
        ActReport {
            ok: true,
            changed,
            reason: None,
        }
    }

    pub fn illegal(reason: &str) -> ActReport {
        ActReport {
            ok: false,
            changed: Vec::new(),
            reason: Some(reason.to_string()),
        }
    }
}

/// A deterministic world.
pub trait Environment {
    fn label(&self) -> &'static str;

    /// Full observable state. Deterministic given (state, seed).
    fn perceive(&mut self) -> Percept;

    /// Execute a motor command, advancing the world.
    fn act(&mut self, cmd: &MotorCommand) -> ActReport;

    /// Index of the task episode currently running (0-based).
    fn episode_index(&self) -> usize;

    /// All task episodes finished.
    fn goal_reached(&self) -> bool;

    /// Attributes that make up the world state, for repeated-state hashing.
    fn world_scope(&self) -> ScopeFilter;

    /// Environment-specific metrics.
    fn metrics(&self) -> serde_json::Value;
}

/// An environment that shows nothing and accepts nothing; useful for tests
/// and pure-deliberation runs.
#[derive(Debug, Default)]
pub struct NullEnv {
    acted: u64,
}

impl Environment for NullEnv {
    fn label(&self) -> &'static str {
        "null"
    }

    fn perceive(&mut self) -> Percept {
        Percept { attrs: Vec::new() }
    }

    fn act(&mut self, _cmd: &MotorCommand) -> ActReport {
        self.acted += 1;
        ActReport::ok(vec![])
    }

    fn episode_index(&self) -> usize {
        0
    }

    fn goal_reached(&self) -> bool {
        false
    }

    fn world_scope(&self) -> ScopeFilter {
        ScopeFilter::All
    }

    fn metrics(&self) -> serde_json::Value {
        serde_json::json!({ "acted": self.acted })
    }
}
