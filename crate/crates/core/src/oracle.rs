//! Brute-force reference implementations and random-case generators for the
//! verification suites. Everything here recomputes results from first
//! principles, independent of the engine's incremental code paths, so the
//! test targets can cross-check against it.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::rules::matcher::{Aliases, Bindings};
use crate::rules::{
    Action, Condition, MatchScope, NegItem, Origin, Production, Term, TestCond, TestOp,
    TriplePattern,
};
use crate::symbols::{ElementId, Symbol, Value};
use crate::wm::Triple;

/// Cross-product-and-filter matcher: enumerate every assignment of triples
/// to positive conditions, keep consistent ones, then apply tests and
/// negations with the bindings each had in scope.
pub fn oracle_match_rule(
    rule: &Production,
    triples: &[Triple],
    aliases: &Aliases,
) -> BTreeSet<Bindings> {
    let positives: Vec<(usize, &TriplePattern)> = rule
        .conditions
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match c {
            Condition::Pos(p) => Some((i, p)),
            _ => None,
        })
        .collect();

    let mut results = BTreeSet::new();
    let k = positives.len();
    let n = triples.len();
    if k > 0 && n == 0 {
        return results;
    }
    let mut combo = vec![0usize; k];
    'outer: loop {
        // bind the combo
        let mut bindings = Bindings::new();
        let mut ok = true;
        for (slot, (_, pat)) in combo.iter().zip(positives.iter()) {
            match oracle_unify(pat, &triples[*slot], &bindings, aliases) {
                Some(b) => bindings = b,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && conditions_hold(rule, &bindings, triples, aliases) {
            results.insert(bindings);
        }
        // advance odometer
        for i in (0..k).rev() {
            combo[i] += 1;
            if combo[i] < n {
                continue 'outer;
            }
            combo[i] = 0;
        }
        break;
    }
    if k == 0 {
        let bindings = Bindings::new();
        if conditions_hold(rule, &bindings, triples, aliases) {
            results.insert(bindings);
        }
    }
    results
}

/// Check non-positive conditions, restricting bindings to the variables in
/// scope at each condition's position (conditions are an ordered list).
fn conditions_hold(
    rule: &Production,
    full: &Bindings,
    triples: &[Triple],
    aliases: &Aliases,
) -> bool {
    let mut in_scope: BTreeSet<String> = BTreeSet::new();
    for cond in &rule.conditions {
        match cond {
            Condition::Pos(p) => {
                for t in [&p.id, &p.attr, &p.value] {
                    if let Term::Var(v) = t {
                        in_scope.insert(v.clone());
                    }
                }
            }
            Condition::Test(t) => {
                if !oracle_eval_test(t, full) {
                    return false;
                }
            }
            Condition::Neg(items) => {
                let scoped: Bindings = full
                    .iter()
                    .filter(|(k, _)| in_scope.contains(*k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                if neg_group_satisfiable(items, &scoped, triples, aliases) {
                    return false;
                }
            }
        }
    }
    true
}

fn neg_group_satisfiable(
    items: &[NegItem],
    outer: &Bindings,
    triples: &[Triple],
    aliases: &Aliases,
) -> bool {
    let pats: Vec<&TriplePattern> = items
        .iter()
        .filter_map(|i| match i {
            NegItem::Pattern(p) => Some(p),
            _ => None,
        })
        .collect();
    let tests: Vec<&TestCond> = items
        .iter()
        .filter_map(|i| match i {
            NegItem::Test(t) => Some(t),
            _ => None,
        })
        .collect();
    let k = pats.len();
    let n = triples.len();
    if k > 0 && n == 0 {
        return false;
    }
    let mut combo = vec![0usize; k];
    'outer: loop {
        let mut bindings = outer.clone();
        let mut ok = true;
        for (slot, pat) in combo.iter().zip(pats.iter()) {
            match oracle_unify(pat, &triples[*slot], &bindings, aliases) {
                Some(b) => bindings = b,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && tests.iter().all(|t| oracle_eval_test(t, &bindings)) {
            return true;
        }
        for i in (0..k).rev() {
            combo[i] += 1;
            if combo[i] < n {
                continue 'outer;
            }
            combo[i] = 0;
        }
        break;
    }
    if k == 0 {
        return tests.iter().all(|t| oracle_eval_test(t, outer));
    }
    false
}

fn oracle_unify(
    p: &TriplePattern,
    t: &Triple,
    b: &Bindings,
    aliases: &Aliases,
) -> Option<Bindings> {
    let mut out = b.clone();
    let slots: [(&Term, Value); 3] = [
        (&p.id, Value::Elem(t.id)),
        (&p.attr, Value::Sym(t.attr.clone())),
        (&p.value, t.value.clone()),
    ];
    for (term, actual) in slots {
        match term {
            Term::Const(s) => {
                let want = match (&actual, aliases.get(s)) {
                    (Value::Elem(_), Some(e)) => Value::Elem(*e),
                    _ => Value::Sym(s.clone()),
                };
                if want != actual {
                    return None;
                }
            }
            Term::Var(v) => match out.get(v) {
                Some(existing) => {
                    if *existing != actual {
                        return None;
                    }
                }
                None => {
                    out.insert(v.clone(), actual);
                }
            },
        }
    }
    Some(out)
}

fn oracle_eval_test(t: &TestCond, b: &Bindings) -> bool {
    let lookup = |term: &Term| -> Option<Value> {
        match term {
            Term::Const(s) => Some(Value::Sym(s.clone())),
            Term::Var(v) => b.get(v).cloned(),
        }
    };
    let (Some(l), Some(r)) = (lookup(&t.left), lookup(&t.right)) else {
        return false;
    };
    let num = |v: &Value| match v {
        Value::Sym(s) => s.as_number(),
        Value::Elem(_) => None,
    };
    if let (Some(a), Some(b)) = (num(&l), num(&r)) {
        return match t.op {
            TestOp::Eq => a == b,
            TestOp::Ne => a != b,
            TestOp::Lt => a < b,
            TestOp::Gt => a > b,
            TestOp::Le => a <= b,
            TestOp::Ge => a >= b,
        };
    }
    match t.op {
        TestOp::Eq => l == r,
        TestOp::Ne => l != r,
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Random-case generation
// ---------------------------------------------------------------------------

const ATTRS: [&str; 4] = ["a", "b", "c", "d"];
const SYMS: [&str; 3] = ["red", "green", "blue"];
const VARS: [&str; 4] = ["x", "y", "z", "w"];

fn random_symbol(rng: &mut StdRng) -> Symbol {
    match rng.gen_range(0..3) {
        0 => Symbol::id(SYMS.choose(rng).unwrap()),
        1 => Symbol::int(rng.gen_range(0..4)),
        _ => Symbol::real(rng.gen_range(0..8) as f64 / 2.0),
    }
}

/// A random state of at most `max` triples over a small element pool.
pub fn random_state(rng: &mut StdRng, max: usize) -> Vec<Triple> {
    let n = rng.gen_range(0..=max);
    let mut set = BTreeSet::new();
    for _ in 0..n {
        let id = ElementId(rng.gen_range(100..106));
        let attr = Symbol::id(ATTRS.choose(rng).unwrap());
        let value = if rng.gen_bool(0.25) {
            Value::Elem(ElementId(rng.gen_range(100..106)))
        } else {
            Value::Sym(random_symbol(rng))
        };
        set.insert(Triple { id, attr, value });
    }
    set.into_iter().collect()
}

/// Aliases naming the first three pool elements.
pub fn pool_aliases() -> Aliases {
    let mut a = Aliases::new();
    a.insert(Symbol::id("n0"), ElementId(100));
    a.insert(Symbol::id("n1"), ElementId(101));
    a.insert(Symbol::id("n2"), ElementId(102));
    a
}

fn random_term(rng: &mut StdRng, bound: &mut Vec<String>, allow_alias: bool) -> Term {
    let roll = rng.gen_range(0..10);
    if roll < 5 {
        let v = VARS.choose(rng).unwrap().to_string();
        if !bound.contains(&v) {
            bound.push(v.clone());
        }
        Term::Var(v)
    } else if roll < 7 && allow_alias {
        Term::Const(Symbol::id(["n0", "n1", "n2"].choose(rng).unwrap()))
    } else {
        Term::Const(random_symbol(rng))
    }
}

fn random_pattern(rng: &mut StdRng, bound: &mut Vec<String>) -> TriplePattern {
    let id = random_term(rng, bound, true);
    let attr = if rng.gen_bool(0.75) {
        Term::Const(Symbol::id(ATTRS.choose(rng).unwrap()))
    } else {
        random_term(rng, bound, false)
    };
    let value = random_term(rng, bound, false);
    TriplePattern { id, attr, value }
}

/// A random rule set: at most `max_rules` rules of at most `max_conds`
/// conditions each, valid by construction (tests only read bound variables).
pub fn random_rules(rng: &mut StdRng, max_rules: usize, max_conds: usize) -> Vec<Production> {
    let m = rng.gen_range(1..=max_rules);
    (0..m)
        .map(|i| {
            let k = rng.gen_range(1..=max_conds);
            let mut bound: Vec<String> = Vec::new();
            let mut conditions = Vec::new();
            for _ in 0..k {
                let roll = rng.gen_range(0..10);
                if roll < 6 || bound.is_empty() {
                    conditions.push(Condition::Pos(random_pattern(rng, &mut bound)));
                } else if roll < 8 {
                    // negation: possibly a group with an inner test
                    let mut local = bound.clone();
                    let mut items = vec![NegItem::Pattern(random_pattern(rng, &mut local))];
                    if rng.gen_bool(0.4) {
                        items.push(NegItem::Pattern(random_pattern(rng, &mut local)));
                    }
                    if rng.gen_bool(0.3) && !local.is_empty() {
                        items.push(NegItem::Test(TestCond {
                            left: Term::Var(local.choose(rng).unwrap().clone()),
                            op: random_op(rng),
                            right: Term::Const(random_symbol(rng)),
                        }));
                    }
                    conditions.push(Condition::Neg(items));
                } else {
                    conditions.push(Condition::Test(TestCond {
                        left: Term::Var(bound.choose(rng).unwrap().clone()),
                        op: random_op(rng),
                        right: if rng.gen_bool(0.5) && bound.len() > 1 {
                            Term::Var(bound.choose(rng).unwrap().clone())
                        } else {
                            Term::Const(random_symbol(rng))
                        },
                    }));
                }
            }
            let action_value = bound
                .first()
                .map(|v| Term::Var(v.clone()))
                .unwrap_or(Term::Const(Symbol::id("done")));
            Production {
                name: format!("r{i}"),
                utility: rng.gen_range(0..5) as f64 / 4.0,
                conditions,
                actions: vec![Action::Add(TriplePattern {
                    id: Term::Const(Symbol::id("n0")),
                    attr: Term::Const(Symbol::id("mark")),
                    value: action_value,
                })],
                origin: Origin::HandCoded,
                match_scope: MatchScope::LocalContext,
            }
        })
        .collect()
}

fn random_op(rng: &mut StdRng) -> TestOp {
    *[
        TestOp::Eq,
        TestOp::Ne,
        TestOp::Lt,
        TestOp::Gt,
        TestOp::Le,
        TestOp::Ge,
    ]
    .choose(rng)
    .unwrap()
}

/// One randomized matcher-equivalence trial; returns a description of the
/// first mismatch, if any.
pub fn matcher_trial(seed: u64) -> Option<String> {
    use rand::SeedableRng;
    let mut rng = StdRng::seed_from_u64(seed);
    let state = random_state(&mut rng, 15);
    let rules = random_rules(&mut rng, 5, 3);
    let aliases = pool_aliases();
    for rule in &rules {
        let fast: BTreeSet<Bindings> = crate::rules::matcher::match_rule(rule, &state, &aliases)
            .into_iter()
            .collect();
        let slow = oracle_match_rule(rule, &state, &aliases);
        if fast != slow {
            return Some(format!(
                "seed {seed}, rule {}:\n  engine: {fast:?}\n  oracle: {slow:?}\n  state: {state:?}",
                rule.name
            ));
        }
    }
    None
}

/// Model-based recomputation of a visible set from raw layers, for the
/// shadowing property: visible(child) = (visible(parent) \ masks) ∪ adds.
pub fn naive_visible(
    layers_root_to_leaf: &[(BTreeSet<Triple>, BTreeSet<Triple>)],
) -> BTreeSet<Triple> {
    let mut acc: BTreeSet<Triple> = BTreeSet::new();
    for (adds, masks) in layers_root_to_leaf {
        acc = acc.difference(masks).cloned().collect();
        acc.extend(adds.iter().cloned());
    }
    acc
}

// ---------------------------------------------------------------------------
// Semantic retrieval oracle
// ---------------------------------------------------------------------------

/// One randomized retrieval trial: rebuild the activation ranking from the
/// formula and check the store's outcome (winner, outcome class, and access
/// bookkeeping) against it. Returns a mismatch description, if any.
pub fn retrieval_trial(seed: u64) -> Option<String> {
    use crate::semantic::{
        activation, Chunk, ChunkMeta, Constraint, RetrievalCue, RetrievalParams, RetrievalResult,
        SemanticStore, SlotPredicate,
    };
    use rand::SeedableRng;

    let mut rng = StdRng::seed_from_u64(seed);
    let now = 200u64;
    let mut store = SemanticStore::new();
    let n_chunks = rng.gen_range(1..=50);
    let words: Vec<String> = (0..n_chunks)
        .map(|i| format!("w{:02}{}", i, ["ab", "cde", "fghi"][i % 3]))
        .collect();
    for (i, w) in words.iter().enumerate() {
        let mut slots = BTreeMap::new();
        slots.insert(Symbol::id("word"), Symbol::id(w));
        slots.insert(Symbol::id("kind"), Symbol::id(["x", "y"][i % 2]));
        let chunk = Chunk {
            id: w.clone(),
            slots,
            meta: ChunkMeta {
                n_accesses: rng.gen_range(1..30),
                last_access_cycle: rng.gen_range(0..=now),
                creation_cycle: 0,
            },
        };
        store.store_chunk(chunk).ok()?;
    }
    let cue = RetrievalCue {
        required: if rng.gen_bool(0.5) {
            [(Symbol::id("kind"), Symbol::id(["x", "y"][rng.gen_range(0..2)]))].into()
        } else {
            BTreeMap::new()
        },
        optional: BTreeMap::new(),
        constraints: if rng.gen_bool(0.5) {
            vec![Constraint {
                slot: Symbol::id("word"),
                pred: SlotPredicate::LengthEq(rng.gen_range(5..8)),
            }]
        } else {
            Vec::new()
        },
    };
    let params = RetrievalParams {
        tau_success: rng.gen_range(-20..10) as f64 / 10.0,
        tau_partial: rng.gen_range(-40..-20) as f64 / 10.0,
        d: rng.gen_range(1..20) as f64 / 10.0,
    };

    // Brute-force expectation from the stored metadata.
    let snapshot: Vec<(String, ChunkMeta, bool)> = store
        .iter()
        .map(|c| {
            let admitted = cue.required.iter().all(|(k, v)| c.slots.get(k) == Some(v))
                && cue.constraints.iter().all(|con| {
                    let Some(value) = c.slots.get(&con.slot) else {
                        return false;
                    };
                    match &con.pred {
                        SlotPredicate::LengthEq(n) => value.to_string().chars().count() == *n,
                        _ => unreachable!("trial only uses length constraints"),
                    }
                });
            (c.id.clone(), c.meta, admitted)
        })
        .collect();
    let expected_best = snapshot
        .iter()
        .filter(|(_, _, adm)| *adm)
        .map(|(id, meta, _)| (id.clone(), *meta, activation(meta, now, params.d)))
        .max_by(|(ida, ma, a), (idb, mb, b)| {
            a.total_cmp(b)
                .then_with(|| ma.n_accesses.cmp(&mb.n_accesses))
                .then_with(|| idb.cmp(ida))
        });

    let (result, _ps) = store.retrieve(&cue, now, &params).ok()?;
    match (expected_best, result) {
        (None, RetrievalResult::Failure) => None,
        (None, other) => Some(format!("seed {seed}: expected no candidates, got {other:?}")),
        (Some((id, _, a)), outcome) => {
            let expected_class = if a >= params.tau_success {
                "success"
            } else if a >= params.tau_partial {
                "partial"
            } else {
                "failure"
            };
            let actual = match &outcome {
                RetrievalResult::Success(c) => {
                    if c.id != id {
                        return Some(format!(
                            "seed {seed}: argmax mismatch, engine {} oracle {id}",
                            c.id
                        ));
                    }
                    // bookkeeping: exactly the winner bumped
                    let bumped: Vec<&str> = snapshot
                        .iter()
                        .filter(|(cid, meta, _)| {
                            store.get(cid).map(|c| c.meta.n_accesses) != Some(meta.n_accesses)
                        })
                        .map(|(cid, _, _)| cid.as_str())
                        .collect();
                    if bumped != vec![id.as_str()] {
                        return Some(format!("seed {seed}: bookkeeping touched {bumped:?}"));
                    }
                    "success"
                }
                RetrievalResult::Partial { .. } => "partial",
                RetrievalResult::Failure => "failure",
            };
            if actual != expected_class {
                return Some(format!(
                    "seed {seed}: outcome {actual}, oracle {expected_class} (A={a:.4})"
                ));
            }
            if actual != "success" {
                let untouched = snapshot
                    .iter()
                    .all(|(cid, meta, _)| store.get(cid).map(|c| c.meta.n_accesses) == Some(meta.n_accesses));
                if !untouched {
                    return Some(format!("seed {seed}: non-success retrieval bumped a chunk"));
                }
            }
            None
        }
    }
}
