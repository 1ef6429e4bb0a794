//! Order-independent, id-insensitive state hashing.
//!
//! The hash of a context is computed over its (scope-filtered) visible set
//! after canonicalizing element ids by structural labeling anchored at the
//! context's state root. Two states that differ only in element identities
//! hash identically; repeated-world detection depends on this.

use std::collections::{BTreeMap, BTreeSet};

use crate::symbols::{ElementId, Symbol, Value};
use crate::wm::{ContextId, Triple, WmError, WorkingMemory};

/// Hash of the empty state: the FNV-1a 64-bit offset basis.
pub const EMPTY_STATE_HASH: u64 = 0xcbf2_9ce4_8422_2325;

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = EMPTY_STATE_HASH;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Which triples participate in a hash: everything, or only triples whose
/// attribute is in a named set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScopeFilter {
    All,
    Attrs(BTreeSet<Symbol>),
}

impl ScopeFilter {
    pub fn attrs<I: IntoIterator<Item = Symbol>>(attrs: I) -> ScopeFilter {
        ScopeFilter::Attrs(attrs.into_iter().collect())
    }

    pub fn passes(&self, t: &Triple) -> bool {
        match self {
            ScopeFilter::All => true,
            ScopeFilter::Attrs(set) => set.contains(&t.attr),
        }
    }
}

/// Hash the scope-filtered visible set of `ctx`.
pub fn state_hash(
    wm: &WorkingMemory,
    ctx: ContextId,
    scope: &ScopeFilter,
) -> Result<u64, WmError> {
    let triples = wm.visible_triples(ctx)?;
    let root = wm.root_of(ctx)?;
    Ok(hash_triples(&triples, Some(root), scope))
}

/// Hash an explicit triple set, canonicalizing ids from `root` when given.
/// Pure; usable offline against reconstructed states.
pub fn hash_triples(
    triples: &BTreeSet<Triple>,
    root: Option<ElementId>,
    scope: &ScopeFilter,
) -> u64 {
    let filtered: Vec<&Triple> = triples.iter().filter(|t| scope.passes(t)).collect();
    if filtered.is_empty() {
        return EMPTY_STATE_HASH;
    }
    let rendering = canonical_rendering(&filtered, root);
    fnv1a(rendering.as_bytes())
}

/// The subgraph of `triples` reachable from `root` by id-position descent.
pub fn reachable_from(triples: &BTreeSet<Triple>, root: ElementId) -> BTreeSet<Triple> {
    let mut nodes: BTreeSet<ElementId> = BTreeSet::new();
    nodes.insert(root);
    loop {
        let mut changed = false;
        for t in triples {
            if nodes.contains(&t.id) {
                if let Some(e) = t.value.as_elem() {
                    changed |= nodes.insert(e);
                }
            }
        }
        if !changed {
            break;
        }
    }
    triples
        .iter()
        .filter(|t| nodes.contains(&t.id))
        .cloned()
        .collect()
}

/// Canonical textual form of a triple set: triples rendered with structural
/// labels, sorted, newline-joined. Equal up to element renaming.
pub fn canonical_rendering(filtered: &[&Triple], root: Option<ElementId>) -> String {
    let mut nodes: BTreeSet<ElementId> = BTreeSet::new();
    for t in filtered {
        nodes.insert(t.id);
        if let Some(e) = t.value.as_elem() {
            nodes.insert(e);
        }
    }
    let nodes: Vec<ElementId> = nodes.into_iter().collect();
    let index: BTreeMap<ElementId, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let n = nodes.len();

    // Adjacency with symbol edges folded into node descriptions.
    let mut scalar_sig: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut out_edges: Vec<Vec<(String, usize)>> = vec![Vec::new(); n];
    let mut in_edges: Vec<Vec<(String, usize)>> = vec![Vec::new(); n];
    for t in filtered {
        let i = index[&t.id];
        match &t.value {
            Value::Elem(e) => {
                let j = index[e];
                out_edges[i].push((t.attr.to_string(), j));
                in_edges[j].push((t.attr.to_string(), i));
            }
            Value::Sym(s) => scalar_sig[i].push(format!("{} {}", t.attr, s)),
        }
    }
    for s in &mut scalar_sig {
        s.sort();
    }

    // Distance from the root over filtered edges; unreachable nodes rank last.
    let mut dist: Vec<u64> = vec![u64::MAX; n];
    if let Some(r) = root {
        if let Some(&ri) = index.get(&r) {
            dist[ri] = 0;
            let mut queue = vec![ri];
            let mut head = 0;
            while head < queue.len() {
                let cur = queue[head];
                head += 1;
                for (_, j) in &out_edges[cur] {
                    if dist[*j] == u64::MAX {
                        dist[*j] = dist[cur] + 1;
                        queue.push(*j);
                    }
                }
            }
        }
    }

    let initial: Vec<u64> = (0..n)
        .map(|i| fnv1a(format!("{}|{}", dist[i], scalar_sig[i].join(";")).as_bytes()))
        .collect();

    let mut budget: usize = 100_000;
    let order = canonical_order(n, &initial, &out_edges, &in_edges, &mut budget);

    let mut label: Vec<usize> = vec![0; n];
    for (pos, i) in order.iter().enumerate() {
        label[*i] = pos;
    }

    let mut lines: Vec<String> = filtered
        .iter()
        .map(|t| {
            let i = label[index[&t.id]];
            match &t.value {
                Value::Elem(e) => format!("(#{i} ^{} #{})", t.attr, label[index[e]]),
                Value::Sym(s) => format!("(#{i} ^{} {s})", t.attr),
            }
        })
        .collect();
    lines.sort();
    lines.join("\n")
}

/// Refine colors by hashing each node with its in/out neighborhoods. The
/// partition can only split per round, so n+1 rounds reach the stable
/// partition; colors stay a pure function of graph structure.
fn refine(colors: &mut Vec<u64>, out_edges: &[Vec<(String, usize)>], in_edges: &[Vec<(String, usize)>]) {
    let n = colors.len();
    for _ in 0..=n {
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let mut outs: Vec<String> = out_edges[i]
                .iter()
                .map(|(a, j)| format!("o{a}:{}", colors[*j]))
                .collect();
            outs.sort();
            let mut ins: Vec<String> = in_edges[i]
                .iter()
                .map(|(a, j)| format!("i{a}:{}", colors[*j]))
                .collect();
            ins.sort();
            next.push(fnv1a(
                format!("{}|{}|{}", colors[i], outs.join(";"), ins.join(";")).as_bytes(),
            ));
        }
        *colors = next;
    }
}

fn partition_classes(colors: &[u64]) -> Vec<Vec<usize>> {
    let mut by_color: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, c) in colors.iter().enumerate() {
        by_color.entry(*c).or_default().push(i);
    }
    by_color.into_values().collect()
}

/// Individualization-refinement: produce an id-invariant total order.
/// `budget` caps the search on pathological symmetric graphs; within budget
/// the order depends only on graph structure.
fn canonical_order(
    n: usize,
    initial: &[u64],
    out_edges: &[Vec<(String, usize)>],
    in_edges: &[Vec<(String, usize)>],
    budget: &mut usize,
) -> Vec<usize> {
    let mut colors = initial.to_vec();
    refine(&mut colors, out_edges, in_edges);
    let classes = partition_classes(&colors);
    let first_tied = classes.iter().find(|c| c.len() > 1);
    match first_tied {
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|i| colors[*i]);
            order
        }
        Some(class) => {
            if *budget == 0 {
                // Budget exhausted: fall back to a deterministic (but not
                // id-invariant) tiebreak. Desk-scale states never get here.
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by_key(|i| (colors[*i], *i));
                return order;
            }
            let mut best: Option<(String, Vec<usize>)> = None;
            for &candidate in class {
                if *budget == 0 {
                    break;
                }
                *budget -= 1;
                let mut c2 = colors.clone();
                c2[candidate] = fnv1a(format!("indiv:{}", c2[candidate]).as_bytes());
                let order = canonical_order(n, &c2, out_edges, in_edges, budget);
                let key = order_key(&order, out_edges, in_edges);
                if best.as_ref().map(|(k, _)| key < *k).unwrap_or(true) {
                    best = Some((key, order));
                }
            }
            best.expect("nonempty tie class").1
        }
    }
}

fn order_key(order: &[usize], out_edges: &[Vec<(String, usize)>], in_edges: &[Vec<(String, usize)>]) -> String {
    let mut label = vec![0usize; order.len()];
    for (pos, i) in order.iter().enumerate() {
        label[*i] = pos;
    }
    let mut lines: Vec<String> = Vec::new();
    for (i, outs) in out_edges.iter().enumerate() {
        for (a, j) in outs {
            lines.push(format!("{} {a} {}", label[i], label[*j]));
        }
    }
    let _ = in_edges;
    lines.sort();
    lines.join(";")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wm::{ContextKind, Stance, REAL};

    fn sym(s: &str) -> Symbol {
        Symbol::id(s)
    }

    #[test]
    fn empty_set_hashes_to_published_constant() {
        let wm = WorkingMemory::new();
        assert_eq!(
            state_hash(&wm, REAL, &ScopeFilter::All).unwrap(),
            EMPTY_STATE_HASH
        );
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let build = |order: &[usize]| {
            let mut wm = WorkingMemory::new();
            let root = wm.root_of(REAL).unwrap();
            let a = wm.fresh_element();
            let triples = [Triple::new(root, sym("type"), sym("state")),
                Triple::new(root, sym("thing"), a),
                Triple::new(a, sym("color"), sym("red")),
                Triple::new(a, sym("size"), Symbol::int(2))];
            for &i in order {
                wm.apply_delta(REAL, &[triples[i].clone()], &[]).unwrap();
            }
            state_hash(&wm, REAL, &ScopeFilter::All).unwrap()
        };
        assert_eq!(build(&[0, 1, 2, 3]), build(&[3, 2, 1, 0]));
        assert_eq!(build(&[0, 1, 2, 3]), build(&[2, 0, 3, 1]));
    }

    #[test]
    fn hash_ignores_element_identity() {
        let build = |extra_mints: usize| {
            let mut wm = WorkingMemory::new();
            let root = wm.root_of(REAL).unwrap();
            for _ in 0..extra_mints {
                wm.fresh_element(); // shift subsequent ids
            }
            let a = wm.fresh_element();
            wm.apply_delta(
                REAL,
                &[
                    Triple::new(root, sym("type"), sym("state")),
                    Triple::new(root, sym("thing"), a),
                    Triple::new(a, sym("color"), sym("red")),
                ],
                &[],
            )
            .unwrap();
            state_hash(&wm, REAL, &ScopeFilter::All).unwrap()
        };
        assert_eq!(build(0), build(7));
    }

    #[test]
    fn world_state_returns_after_close_open_pair() {
        let mut wm = WorkingMemory::new();
        let root = wm.root_of(REAL).unwrap();
        let w = wm.fresh_element();
        let scope = ScopeFilter::attrs([sym("world"), sym("door"), sym("item")]);
        wm.apply_delta(
            REAL,
            &[
                Triple::new(root, sym("world"), w),
                Triple::new(root, sym("bookkeeping"), Symbol::int(0)),
                Triple::new(w, sym("door"), sym("open")),
                Triple::new(w, sym("item"), sym("a")),
                Triple::new(w, sym("item"), sym("b")),
            ],
            &[],
        )
        .unwrap();
        let before = state_hash(&wm, REAL, &scope).unwrap();

        // close the door (plus unrelated bookkeeping churn)
        wm.apply_delta(
            REAL,
            &[
                Triple::new(w, sym("door"), sym("closed")),
                Triple::new(root, sym("bookkeeping"), Symbol::int(1)),
            ],
            &[
                Triple::new(w, sym("door"), sym("open")),
                Triple::new(root, sym("bookkeeping"), Symbol::int(0)),
            ],
        )
        .unwrap();
        let closed = state_hash(&wm, REAL, &scope).unwrap();
        assert_ne!(before, closed);

        // reopen
        wm.apply_delta(
            REAL,
            &[Triple::new(w, sym("door"), sym("open"))],
            &[Triple::new(w, sym("door"), sym("closed"))],
        )
        .unwrap();
        let after = state_hash(&wm, REAL, &scope).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn hypothetical_context_hash_matches_parent_when_unedited() {
        let mut wm = WorkingMemory::new();
        let root = wm.root_of(REAL).unwrap();
        wm.apply_delta(REAL, &[Triple::new(root, sym("door"), sym("open"))], &[])
            .unwrap();
        let c1 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, REAL)
            .unwrap();
        // Same triples but different designated root: the child's root has no
        // triples, so its reachable layer differs — hash over ALL triples
        // still equal because unreachable nodes canonicalize structurally.
        let h_real = state_hash(&wm, REAL, &ScopeFilter::All).unwrap();
        let h_child = hash_triples(
            &wm.visible_triples(c1).unwrap(),
            Some(wm.root_of(REAL).unwrap()),
            &ScopeFilter::All,
        );
        assert_eq!(h_real, h_child);
    }
}
