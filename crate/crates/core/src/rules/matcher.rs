//! Naive production matcher: a full rematch of every rule against a
//! context's visible set each cycle. Desk-scale states keep this cheap, and
//! the contract (exactly the valid instantiations, deterministically
//! ordered) leaves room for an incremental matcher behind the same
//! signature.

use std::collections::{BTreeMap, BTreeSet};

use crate::symbols::{ElementId, Symbol, Value};
use crate::wm::{ContextId, Triple, WmError, WorkingMemory};

use super::{Condition, Instantiation, NegItem, Production, Term, TestCond, TestOp, TriplePattern};

pub type Bindings = BTreeMap<String, Value>;
pub type Aliases = BTreeMap<Symbol, ElementId>;

/// All valid instantiations of `rules` against `visible(ctx)`, ordered by
/// (rule name, lexicographic bindings).
pub fn match_context(
    wm: &WorkingMemory,
    rules: &[&Production],
    ctx: ContextId,
    aliases: &Aliases,
) -> Result<Vec<Instantiation>, WmError> {
    let visible = wm.visible_triples(ctx)?;
    let triples: Vec<Triple> = visible.into_iter().collect();
    let mut out = Vec::new();
    for rule in rules {
        for bindings in match_rule(rule, &triples, aliases) {
            out.push(Instantiation {
                production: rule.name.clone(),
                bindings,
                context: ctx,
                utility: rule.utility,
            });
        }
    }
    out.sort_by_key(|i| i.sort_key());
    out.dedup();
    Ok(out)
}

/// Match one rule against an explicit triple list. Pure; the oracle tests
/// drive this directly.
pub fn match_rule(rule: &Production, triples: &[Triple], aliases: &Aliases) -> Vec<Bindings> {
    let mut frontier: Vec<Bindings> = vec![BTreeMap::new()];
    for cond in &rule.conditions {
        match cond {
            Condition::Pos(p) => {
                let mut next = Vec::new();
                for b in &frontier {
                    for t in triples {
                        if let Some(extended) = unify(p, t, b, aliases) {
                            next.push(extended);
                        }
                    }
                }
                frontier = next;
            }
            Condition::Test(t) => {
                frontier.retain(|b| eval_test(t, b));
            }
            Condition::Neg(items) => {
                frontier.retain(|b| !neg_satisfiable(items, b, triples, aliases));
            }
        }
        if frontier.is_empty() {
            return frontier;
        }
    }
    let set: BTreeSet<Bindings> = frontier.into_iter().collect();
    set.into_iter().collect()
}

/// Does any extension of `b` satisfy every item of the negated group?
fn neg_satisfiable(items: &[NegItem], b: &Bindings, triples: &[Triple], aliases: &Aliases) -> bool {
    let mut frontier: Vec<Bindings> = vec![b.clone()];
    for item in items {
        match item {
            NegItem::Pattern(p) => {
                let mut next = Vec::new();
                for fb in &frontier {
                    for t in triples {
                        if let Some(extended) = unify(p, t, fb, aliases) {
                            next.push(extended);
                        }
                    }
                }
                frontier = next;
            }
            NegItem::Test(t) => {
                frontier.retain(|fb| eval_test(t, fb));
            }
        }
        if frontier.is_empty() {
            return false;
        }
    }
    true
}

/// Unify a pattern against a concrete triple under existing bindings.
fn unify(p: &TriplePattern, t: &Triple, b: &Bindings, aliases: &Aliases) -> Option<Bindings> {
    let mut out = b.clone();

    // id slot: holds an element
    match &p.id {
        Term::Const(s) => {
            let target = aliases.get(s)?;
            if *target != t.id {
                return None;
            }
        }
        Term::Var(v) => match out.get(v) {
            Some(Value::Elem(e)) => {
                if *e != t.id {
                    return None;
                }
            }
            Some(Value::Sym(_)) => return None,
            None => {
                out.insert(v.clone(), Value::Elem(t.id));
            }
        },
    }

    // attribute slot: holds a symbol
    match &p.attr {
        Term::Const(s) => {
            if *s != t.attr {
                return None;
            }
        }
        Term::Var(v) => match out.get(v) {
            Some(Value::Sym(s)) => {
                if *s != t.attr {
                    return None;
                }
            }
            Some(Value::Elem(_)) => return None,
            None => {
                out.insert(v.clone(), Value::Sym(t.attr.clone()));
            }
        },
    }

    // value slot: symbol or element
    match &p.value {
        Term::Const(s) => {
            if t.value != Value::Sym(s.clone()) {
                return None;
            }
        }
        Term::Var(v) => match out.get(v) {
            Some(existing) => {
                if *existing != t.value {
                    return None;
                }
            }
            None => {
                out.insert(v.clone(), t.value.clone());
            }
        },
    }

    Some(out)
}

fn resolve(term: &Term, b: &Bindings) -> Option<Value> {
    match term {
        Term::Const(s) => Some(Value::Sym(s.clone())),
        Term::Var(v) => b.get(v).cloned(),
    }
}

/// Evaluate a relational test. Numeric slots compare numerically; `=`/`!=`
/// fall back to structural equality; orderings on non-numbers fail.
pub fn eval_test(t: &TestCond, b: &Bindings) -> bool {
    let (Some(l), Some(r)) = (resolve(&t.left, b), resolve(&t.right, b)) else {
        return false;
    };
    let nums = match (&l, &r) {
        (Value::Sym(a), Value::Sym(b)) => a.as_number().zip(b.as_number()),
        _ => None,
    };
    match t.op {
        TestOp::Eq => nums.map(|(a, b)| a == b).unwrap_or(l == r),
        TestOp::Ne => nums.map(|(a, b)| a != b).unwrap_or(l != r),
        TestOp::Lt => nums.map(|(a, b)| a < b).unwrap_or(false),
        TestOp::Gt => nums.map(|(a, b)| a > b).unwrap_or(false),
        TestOp::Le => nums.map(|(a, b)| a <= b).unwrap_or(false),
        TestOp::Ge => nums.map(|(a, b)| a >= b).unwrap_or(false),
    }
}

/// Re-check an instantiation's bindings against the current visible set.
pub fn still_valid(
    wm: &WorkingMemory,
    rule: &Production,
    inst: &Instantiation,
    aliases: &Aliases,
) -> Result<bool, WmError> {
    let triples: Vec<Triple> = wm.visible_triples(inst.context)?.into_iter().collect();
    Ok(bindings_valid(rule, &inst.bindings, &triples, aliases))
}

fn bindings_valid(rule: &Production, b: &Bindings, triples: &[Triple], aliases: &Aliases) -> bool {
    for cond in &rule.conditions {
        match cond {
            Condition::Pos(p) => {
                let hit = triples.iter().any(|t| {
                    unify(p, t, b, aliases).map(|ext| ext == *b).unwrap_or(false)
                });
                if !hit {
                    return false;
                }
            }
            Condition::Test(t) => {
                if !eval_test(t, b) {
                    return false;
                }
            }
            Condition::Neg(items) => {
                if neg_satisfiable(items, b, triples, aliases) {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::parser::parse_rules;
    use crate::wm::REAL;

    fn wm_with(triples: &[Triple]) -> WorkingMemory {
        let mut wm = WorkingMemory::new();
        wm.apply_delta(REAL, triples, &[]).unwrap();
        wm
    }

    fn sym(s: &str) -> Symbol {
        Symbol::id(s)
    }

    #[test]
    fn no_rules_no_instantiations() {
        let wm = wm_with(&[Triple::new(ElementId(5), sym("a"), sym("b"))]);
        let out = match_context(&wm, &[], REAL, &BTreeMap::new()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn one_rule_two_red_objects_two_instantiations() {
        let rules = parse_rules("rule spot { when: (<s> ^color red) then: add (<s> ^seen true) }")
            .unwrap();
        let wm = wm_with(&[
            Triple::new(ElementId(10), sym("color"), sym("red")),
            Triple::new(ElementId(11), sym("color"), sym("red")),
            Triple::new(ElementId(12), sym("color"), sym("blue")),
        ]);
        let refs: Vec<&Production> = rules.iter().collect();
        let out = match_context(&wm, &refs, REAL, &BTreeMap::new()).unwrap();
        assert_eq!(out.len(), 2);
        // deterministic order: bindings sorted
        assert_eq!(out[0].bindings["s"], Value::Elem(ElementId(10)));
        assert_eq!(out[1].bindings["s"], Value::Elem(ElementId(11)));
    }

    #[test]
    fn negated_condition_blocks_when_present() {
        let rules = parse_rules(
            "rule go { when: (<s> ^ready true) -(<s> ^door open) then: add (<s> ^went true) }",
        )
        .unwrap();
        let refs: Vec<&Production> = rules.iter().collect();
        let open = wm_with(&[
            Triple::new(ElementId(1), sym("ready"), sym("true")),
            Triple::new(ElementId(1), sym("door"), sym("open")),
        ]);
        assert!(match_context(&open, &refs, REAL, &BTreeMap::new())
            .unwrap()
            .is_empty());
        let closed = wm_with(&[Triple::new(ElementId(1), sym("ready"), sym("true"))]);
        assert_eq!(
            match_context(&closed, &refs, REAL, &BTreeMap::new())
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn negated_group_with_inner_test() {
        // fire for the smallest-order pending item only
        let rules = parse_rules(
            "rule next { when: (<s> ^pending <i>) (<i> ^order <o>) \
             -{ (<s> ^pending <j>) (<j> ^order <o2>) test(<o2> < <o>) } \
             then: add (<s> ^take <i>) }",
        )
        .unwrap();
        let refs: Vec<&Production> = rules.iter().collect();
        let wm = wm_with(&[
            Triple::new(ElementId(1), sym("pending"), ElementId(2)),
            Triple::new(ElementId(1), sym("pending"), ElementId(3)),
            Triple::new(ElementId(2), sym("order"), Symbol::int(2)),
            Triple::new(ElementId(3), sym("order"), Symbol::int(1)),
        ]);
        let out = match_context(&wm, &refs, REAL, &BTreeMap::new()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bindings["i"], Value::Elem(ElementId(3)));
    }

    #[test]
    fn alias_constants_anchor_id_slots() {
        let rules =
            parse_rules("rule mark { when: (sink ^full true) then: add (sink ^drain now) }")
                .unwrap();
        let refs: Vec<&Production> = rules.iter().collect();
        let wm = wm_with(&[Triple::new(ElementId(9), sym("full"), sym("true"))]);
        let mut aliases = BTreeMap::new();
        assert!(match_context(&wm, &refs, REAL, &aliases).unwrap().is_empty());
        aliases.insert(sym("sink"), ElementId(9));
        assert_eq!(match_context(&wm, &refs, REAL, &aliases).unwrap().len(), 1);
    }

    #[test]
    fn numeric_tests_mix_int_and_real() {
        let rules = parse_rules(
            "rule hot { when: (<s> ^temp <t>) test(<t> > 36.5) then: add (<s> ^fever true) }",
        )
        .unwrap();
        let refs: Vec<&Production> = rules.iter().collect();
        let wm = wm_with(&[
            Triple::new(ElementId(1), sym("temp"), Symbol::int(38)),
            Triple::new(ElementId(2), sym("temp"), Symbol::real(36.0)),
        ]);
        let out = match_context(&wm, &refs, REAL, &BTreeMap::new()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bindings["s"], Value::Elem(ElementId(1)));
    }

    #[test]
    fn shared_variable_joins_across_conditions() {
        let rules = parse_rules(
            "rule pair { when: (<a> ^likes <x>) (<b> ^likes <x>) test(<a> != <b>) \
             then: add (<a> ^match <b>) }",
        )
        .unwrap();
        let refs: Vec<&Production> = rules.iter().collect();
        let wm = wm_with(&[
            Triple::new(ElementId(1), sym("likes"), sym("tea")),
            Triple::new(ElementId(2), sym("likes"), sym("tea")),
            Triple::new(ElementId(3), sym("likes"), sym("coffee")),
        ]);
        let out = match_context(&wm, &refs, REAL, &BTreeMap::new()).unwrap();
        // (1,2) and (2,1)
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn still_valid_detects_staleness() {
        let rules =
            parse_rules("rule r { when: (<s> ^door open) then: add (<s> ^walked through) }")
                .unwrap();
        let t = Triple::new(ElementId(4), sym("door"), sym("open"));
        let mut wm = wm_with(std::slice::from_ref(&t));
        let refs: Vec<&Production> = rules.iter().collect();
        let inst = match_context(&wm, &refs, REAL, &BTreeMap::new())
            .unwrap()
            .remove(0);
        assert!(still_valid(&wm, &rules[0], &inst, &BTreeMap::new()).unwrap());
        wm.apply_delta(REAL, &[], &[t]).unwrap();
        assert!(!still_valid(&wm, &rules[0], &inst, &BTreeMap::new()).unwrap());
    }
}
