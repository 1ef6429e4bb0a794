//! Learning: reinforcement updates on rule utilities and compilation of
//! resolved deliberation into new rules.

use std::collections::{BTreeMap, BTreeSet};

use crate::symbols::{ElementId, Value};
use crate::wm::Triple;

use super::{
    Action, ActionKind, CompilationTrace, Condition, MatchScope, Origin, Production, RuleError,
    Term, TriplePattern,
};

/// The rule registry: named productions in insertion order.
#[derive(Debug, Default)]
pub struct ProductionSet {
    rules: Vec<Production>,
    compiled_count: u64,
}

impl ProductionSet {
    pub fn new() -> ProductionSet {
        ProductionSet::default()
    }

    pub fn add(&mut self, rule: Production) -> Result<(), RuleError> {
        if self.rules.iter().any(|r| r.name == rule.name) {
            return Err(RuleError::DuplicateRuleName(rule.name));
        }
        self.rules.push(rule);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Production> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Production> {
        self.rules.iter()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn compiled_rules(&self) -> impl Iterator<Item = &Production> {
        self.rules.iter().filter(|r| r.origin == Origin::Compiled)
    }

    /// Q ← Q + α·(reward − Q); returns the new utility.
    pub fn update_utility(&mut self, rule: &str, reward: f64, alpha: f64) -> Result<f64, RuleError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(RuleError::BadAlpha(alpha));
        }
        let r = self
            .rules
            .iter_mut()
            .find(|r| r.name == rule)
            .ok_or_else(|| RuleError::UnknownRule(rule.to_string()))?;
        r.utility += alpha * (reward - r.utility);
        Ok(r.utility)
    }

    /// Compile a resolved trace into a fresh rule and register it.
    pub fn compile_result(&mut self, trace: &CompilationTrace) -> Result<String, RuleError> {
        self.compiled_count += 1;
        let name = format!("compiled-{}", self.compiled_count);
        let rule = compile(trace, &name)?;
        self.add(rule.clone())?;
        Ok(name)
    }
}

/// Build a general rule from a resolving instantiation's trace.
///
/// Conditions are the tested triples restricted to the subgraph reachable
/// (by id-position descent) from the elements the result delta mentions;
/// element ids become variables, constants stay literal, and scalar values
/// that fed a kept relational test keep their variables so the test carries
/// the generalization.
pub fn compile(trace: &CompilationTrace, name: &str) -> Result<Production, RuleError> {
    if trace.result_adds.is_empty() && trace.result_removes.is_empty() {
        return Err(RuleError::EmptyResult);
    }
    if trace.tested.is_empty() {
        return Err(RuleError::EmptyTrace);
    }

    // Closure of result elements over the tested triples.
    let mut kept_elems: BTreeSet<ElementId> = trace.result_elements().into_iter().collect();
    let mut kept: Vec<(TriplePattern, Triple)> = Vec::new();
    loop {
        let mut changed = false;
        for (pat, t) in &trace.tested {
            if kept_elems.contains(&t.id) && !kept.iter().any(|(_, k)| k == t) {
                kept.push((pat.clone(), t.clone()));
                if let Some(e) = t.value.as_elem() {
                    kept_elems.insert(e);
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if kept.is_empty() {
        return Err(RuleError::UnboundResultElement(
            trace.result_elements()[0],
        ));
    }

    // Variables preserved from the source rule: those a kept test reads.
    let mut test_vars: BTreeSet<String> = BTreeSet::new();
    for t in &trace.tests {
        for term in [&t.left, &t.right] {
            if let Term::Var(v) = term {
                test_vars.insert(v.clone());
            }
        }
    }

    // Element → variable naming, first appearance order, avoiding collisions
    // with preserved test variables.
    let mut elem_var: BTreeMap<ElementId, String> = BTreeMap::new();
    let mut n = 0;
    let mut mint = |elem: ElementId, map: &mut BTreeMap<ElementId, String>| {
        if !map.contains_key(&elem) {
            loop {
                n += 1;
                let candidate = format!("o{n}");
                if !test_vars.contains(&candidate) {
                    map.insert(elem, candidate);
                    break;
                }
            }
        }
    };
    for (_, t) in &kept {
        mint(t.id, &mut elem_var);
        if let Some(e) = t.value.as_elem() {
            mint(e, &mut elem_var);
        }
    }

    let value_term = |pat_term: &Term, ground: &Value, elem_var: &BTreeMap<ElementId, String>| {
        match ground {
            Value::Elem(e) => Term::Var(elem_var[e].clone()),
            Value::Sym(s) => match pat_term {
                Term::Var(v) if test_vars.contains(v) => Term::Var(v.clone()),
                _ => Term::Const(s.clone()),
            },
        }
    };

    let mut conditions: Vec<Condition> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    // Track which preserved test variables actually survive into conditions.
    let mut preserved: BTreeSet<String> = BTreeSet::new();
    for (pat, t) in &kept {
        let id = Term::Var(elem_var[&t.id].clone());
        let attr = Term::Const(t.attr.clone());
        let value = value_term(&pat.value, &t.value, &elem_var);
        if let Term::Var(v) = &value {
            if test_vars.contains(v) {
                preserved.insert(v.clone());
            }
        }
        let cond = TriplePattern { id, attr, value };
        if seen.insert(cond.to_string()) {
            conditions.push(Condition::Pos(cond));
        }
    }
    for t in &trace.tests {
        let ok = [&t.left, &t.right].iter().all(|term| match term {
            Term::Var(v) => preserved.contains(v),
            Term::Const(_) => true,
        });
        if ok {
            conditions.push(Condition::Test(t.clone()));
        }
    }

    let mut actions = Vec::new();
    for (kind, pairs) in [
        (ActionKind::Add, &trace.result_adds),
        (ActionKind::Remove, &trace.result_removes),
    ] {
        for (pat, t) in pairs.iter() {
            let id_var = elem_var
                .get(&t.id)
                .ok_or(RuleError::UnboundResultElement(t.id))?;
            let value = match &t.value {
                Value::Elem(e) => Term::Var(
                    elem_var
                        .get(e)
                        .ok_or(RuleError::UnboundResultElement(*e))?
                        .clone(),
                ),
                Value::Sym(s) => match &pat.value {
                    Term::Var(v) if preserved.contains(v) => Term::Var(v.clone()),
                    _ => Term::Const(s.clone()),
                },
            };
            let pattern = TriplePattern {
                id: Term::Var(id_var.clone()),
                attr: Term::Const(t.attr.clone()),
                value,
            };
            actions.push(match kind {
                ActionKind::Add => Action::Add(pattern),
                ActionKind::Remove => Action::Remove(pattern),
            });
        }
    }

    Ok(Production {
        name: name.to_string(),
        utility: trace.utility,
        conditions,
        actions,
        origin: Origin::Compiled,
        match_scope: MatchScope::LocalContext,
    })
}
