//! Procedural memory: the rule language, matcher, action selection, and the
//! two learning mechanisms (utility updates and trace compilation).

pub mod parser;
pub mod matcher;
pub mod select;
pub mod learn;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::symbols::{ElementId, Symbol, Value};
use crate::wm::{ContextId, Triple};

/// The module a buffer command is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModuleKind {
    Procedural,
    Semantic,
    Episodic,
    Perception,
    Motor,
    WorkingMemory,
}

impl ModuleKind {
    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::Procedural => "procedural",
            ModuleKind::Semantic => "semantic",
            ModuleKind::Episodic => "episodic",
            ModuleKind::Perception => "perception",
            ModuleKind::Motor => "motor",
            ModuleKind::WorkingMemory => "wm",
        }
    }

    pub fn parse(s: &str) -> Option<ModuleKind> {
        match s {
            "procedural" => Some(ModuleKind::Procedural),
            "semantic" => Some(ModuleKind::Semantic),
            "episodic" => Some(ModuleKind::Episodic),
            "perception" => Some(ModuleKind::Perception),
            "motor" => Some(ModuleKind::Motor),
            "wm" => Some(ModuleKind::WorkingMemory),
            _ => None,
        }
    }

    pub const ALL: [ModuleKind; 6] = [
        ModuleKind::Procedural,
        ModuleKind::Semantic,
        ModuleKind::Episodic,
        ModuleKind::Perception,
        ModuleKind::Motor,
        ModuleKind::WorkingMemory,
    ];
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A pattern slot: a constant symbol or a variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Term {
    Const(Symbol),
    Var(String),
}

impl Term {
    pub fn var_name(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(s) => write!(f, "{s}"),
            Term::Var(v) => write!(f, "<{v}>"),
        }
    }
}

/// One (id ^attr value) pattern.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TriplePattern {
    pub id: Term,
    pub attr: Term,
    pub value: Term,
}

impl fmt::Display for TriplePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} ^{} {})", self.id, self.attr, self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TestOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl fmt::Display for TestOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestOp::Eq => "=",
            TestOp::Ne => "!=",
            TestOp::Lt => "<",
            TestOp::Gt => ">",
            TestOp::Le => "<=",
            TestOp::Ge => ">=",
        })
    }
}

/// A relational test between two slots.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TestCond {
    pub left: Term,
    pub op: TestOp,
    pub right: Term,
}

impl fmt::Display for TestCond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "test({} {} {})", self.left, self.op, self.right)
    }
}

/// Element of a negated conjunction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum NegItem {
    Pattern(TriplePattern),
    Test(TestCond),
}

/// One condition of a production, evaluated in order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Condition {
    /// Positive pattern that binds variables.
    Pos(TriplePattern),
    /// Negated conjunction: holds when no extension satisfies all items.
    Neg(Vec<NegItem>),
    /// Relational test over already-bound variables.
    Test(TestCond),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    Add,
    Remove,
}

/// One action of a production.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Add(TriplePattern),
    Remove(TriplePattern),
    /// Issue a command into a module's buffer. The id term is a placeholder
    /// for the command node the kernel mints; slot attributes are constant.
    Command {
        module: ModuleKind,
        id: Term,
        slots: Vec<(Symbol, Term)>,
    },
    /// Contribute to the active substate's result: applied where the tested
    /// structures live and recorded for compilation.
    Result {
        kind: ActionKind,
        pattern: TriplePattern,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    HandCoded,
    Compiled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchScope {
    /// Match against the context being stepped (the default).
    LocalContext,
    /// Reserved: no scheduling distinction today, kept for rule metadata.
    Any,
}

/// A condition→action rule with scalar utility.
#[derive(Debug, Clone, PartialEq)]
pub struct Production {
    pub name: String,
    pub utility: f64,
    pub conditions: Vec<Condition>,
    pub actions: Vec<Action>,
    pub origin: Origin,
    pub match_scope: MatchScope,
}

impl Production {
    /// Variables bound by positive conditions.
    pub fn bound_vars(&self) -> Vec<String> {
        let mut vars = Vec::new();
        for c in &self.conditions {
            if let Condition::Pos(p) = c {
                for t in [&p.id, &p.attr, &p.value] {
                    if let Term::Var(v) = t {
                        if !vars.contains(v) {
                            vars.push(v.clone());
                        }
                    }
                }
            }
        }
        vars
    }
}

impl fmt::Display for Production {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {}", self.name)?;
        if self.utility != 0.0 {
            write!(f, " utility {}", self.utility)?;
        }
        if self.match_scope == MatchScope::Any {
            write!(f, " scope any")?;
        }
        writeln!(f, " {{")?;
        writeln!(f, "  when:")?;
        for c in &self.conditions {
            match c {
                Condition::Pos(p) => writeln!(f, "    {p}")?,
                Condition::Test(t) => writeln!(f, "    {t}")?,
                Condition::Neg(items) => {
                    if items.len() == 1 {
                        match &items[0] {
                            NegItem::Pattern(p) => writeln!(f, "    -{p}")?,
                            NegItem::Test(t) => writeln!(f, "    -{{ {t} }}")?,
                        }
                    } else {
                        write!(f, "    -{{ ")?;
                        for item in items {
                            match item {
                                NegItem::Pattern(p) => write!(f, "{p} ")?,
                                NegItem::Test(t) => write!(f, "{t} ")?,
                            }
                        }
                        writeln!(f, "}}")?;
                    }
                }
            }
        }
        writeln!(f, "  then:")?;
        for a in &self.actions {
            match a {
                Action::Add(p) => writeln!(f, "    add {p}")?,
                Action::Remove(p) => writeln!(f, "    remove {p}")?,
                Action::Command { module, id, slots } => {
                    write!(f, "    command {module} ({id}")?;
                    for (attr, val) in slots {
                        write!(f, " ^{attr} {val}")?;
                    }
                    writeln!(f, ")")?;
                }
                Action::Result { kind, pattern } => {
                    let kw = match kind {
                        ActionKind::Add => "add",
                        ActionKind::Remove => "remove",
                    };
                    writeln!(f, "    result {kw} {pattern}")?;
                }
            }
        }
        write!(f, "}}")
    }
}

/// A production grounded by variable bindings in a context.
#[derive(Debug, Clone, PartialEq)]
pub struct Instantiation {
    pub production: String,
    pub bindings: BTreeMap<String, Value>,
    pub context: ContextId,
    /// Copied from the production at match time.
    pub utility: f64,
}

impl Instantiation {
    /// Deterministic ordering key: rule name, then lexicographic bindings.
    pub fn sort_key(&self) -> (String, Vec<(String, String)>) {
        (
            self.production.clone(),
            self.bindings
                .iter()
                .map(|(k, v)| (k.clone(), v.to_string()))
                .collect(),
        )
    }
}

impl fmt::Display for Instantiation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.production)?;
        let mut first = true;
        for (k, v) in &self.bindings {
            if !first {
                write!(f, " ")?;
            }
            write!(f, "<{k}>={v}")?;
            first = false;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ImpasseKind {
    NoChange,
    Tie,
    OperatorFailure,
}

impl ImpasseKind {
    pub fn name(self) -> &'static str {
        match self {
            ImpasseKind::NoChange => "no-change",
            ImpasseKind::Tie => "tie",
            ImpasseKind::OperatorFailure => "operator-failure",
        }
    }
}

impl fmt::Display for ImpasseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Why procedural memory failed to yield a single definite action.
#[derive(Debug, Clone, PartialEq)]
pub struct Impasse {
    pub kind: ImpasseKind,
    pub context: ContextId,
    pub candidates: Vec<Instantiation>,
    pub detail: Vec<(Symbol, Symbol)>,
}

/// What a resolving instantiation tested and produced, for compilation.
#[derive(Debug, Clone, Default)]
pub struct CompilationTrace {
    /// Positive conditions of the resolving instantiation, grounded.
    pub tested: Vec<(TriplePattern, Triple)>,
    /// Top-level relational tests of the resolving production.
    pub tests: Vec<TestCond>,
    /// Result delta, grounded, paired with its source patterns.
    pub result_adds: Vec<(TriplePattern, Triple)>,
    pub result_removes: Vec<(TriplePattern, Triple)>,
    /// Utility of the resolving selection.
    pub utility: f64,
}

impl CompilationTrace {
    pub fn result_elements(&self) -> Vec<ElementId> {
        let mut out = Vec::new();
        for (_, t) in self.result_adds.iter().chain(self.result_removes.iter()) {
            if !out.contains(&t.id) {
                out.push(t.id);
            }
            if let Some(e) = t.value.as_elem() {
                if !out.contains(&e) {
                    out.push(e);
                }
            }
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("unknown rule {0}")]
    UnknownRule(String),
    #[error("learning rate must be in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("duplicate rule name {0}")]
    DuplicateRuleName(String),
    #[error("compilation trace has an empty result")]
    EmptyResult,
    #[error("compilation trace tested nothing")]
    EmptyTrace,
    #[error("result element {0} does not appear in any kept tested condition")]
    UnboundResultElement(ElementId),
    #[error("instantiation of {0} is stale against current working memory")]
    StaleInstantiation(String),
    #[error("two commands issued to the {0} buffer in one step")]
    CommandCollision(ModuleKind),
}

/// Convenience: substitute bindings into a pattern, producing a ground triple
/// when every slot resolves.
pub fn ground_pattern(
    p: &TriplePattern,
    bindings: &BTreeMap<String, Value>,
    aliases: &BTreeMap<Symbol, ElementId>,
) -> Option<Triple> {
    let id = match &p.id {
        Term::Var(v) => bindings.get(v)?.as_elem()?,
        Term::Const(s) => *aliases.get(s)?,
    };
    let attr = match &p.attr {
        Term::Var(v) => bindings.get(v)?.as_sym()?.clone(),
        Term::Const(s) => s.clone(),
    };
    let value = match &p.value {
        Term::Var(v) => bindings.get(v)?.clone(),
        Term::Const(s) => Value::Sym(s.clone()),
    };
    Some(Triple { id, attr, value })
}
