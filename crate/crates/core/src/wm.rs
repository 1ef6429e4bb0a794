//! Working memory: context-scoped triples with copy-on-write inheritance.
//!
//! A context is a scope of (id ^attribute value) triples. The single REAL
//! context holds the agent's actual state; hypothetical contexts inherit
//! their parent's visible set and may shadow it with local additions and
//! masks, so knowledge can run against imagined states without touching
//! reality.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::symbols::{ElementId, Symbol, Value};

/// An (id ^attribute value) relation, the unit of working memory.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub id: ElementId,
    pub attr: Symbol,
    pub value: Value,
}

impl Triple {
    pub fn new(id: ElementId, attr: Symbol, value: impl Into<Value>) -> Triple {
        Triple {
            id,
            attr,
            value: value.into(),
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} ^{} {})", self.id, self.attr, self.value)
    }
}

/// Handle to a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextId(pub u32);

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextKind {
    Real,
    Hypothetical,
}

/// Temporal stance of a context: the REAL context is always PRESENT;
/// imagined contexts are tagged PAST or FUTURE (or PRESENT for scratch
/// scopes over current data).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stance {
    Present,
    Past,
    Future,
}

impl Stance {
    pub fn as_symbol(self) -> Symbol {
        match self {
            Stance::Present => Symbol::id("present"),
            Stance::Past => Symbol::id("past"),
            Stance::Future => Symbol::id("future"),
        }
    }
}

/// Context metadata.
#[derive(Debug, Clone)]
pub struct Context {
    pub id: ContextId,
    pub kind: ContextKind,
    pub stance: Stance,
    pub parent: Option<ContextId>,
    /// Designated state-root element of this context.
    pub root: ElementId,
    /// Substate that owns this context, if any (set by the kernel).
    pub owner_substate: Option<u32>,
}

/// A working-memory element: a triple plus where and when it lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wme {
    pub triple: Triple,
    /// Context whose layer physically holds the triple.
    pub context: ContextId,
    pub created_cycle: u64,
}

/// Effective changes applied by one delta.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeltaReport {
    pub added: Vec<Triple>,
    pub removed: Vec<Triple>,
}

impl DeltaReport {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WmError {
    #[error("unknown context {0}")]
    UnknownContext(ContextId),
    #[error("duplicate add: {0} is already visible")]
    DuplicateAdd(Triple),
    #[error("missing remove: {0} is not visible")]
    MissingRemove(Triple),
    #[error("unknown parent context {0}")]
    UnknownParent(ContextId),
    #[error("only the boot sequence may create the REAL context")]
    ForbiddenRealCreation,
    #[error("root {0} is not reachable in the source context")]
    UnknownRoot(ElementId),
    #[error("cannot copy into the REAL context")]
    RealTargetForbidden,
}

struct Layer {
    adds: BTreeMap<Triple, u64>,
    masks: BTreeSet<Triple>,
}

impl Layer {
    fn new() -> Layer {
        Layer {
            adds: BTreeMap::new(),
            masks: BTreeSet::new(),
        }
    }
}

/// The working-memory store for one agent.
pub struct WorkingMemory {
    contexts: Vec<Option<Context>>,
    layers: Vec<Layer>,
    next_elem: u64,
    now: u64,
}

pub const REAL: ContextId = ContextId(0);

impl WorkingMemory {
    /// Boot a store with its REAL context.
    pub fn new() -> WorkingMemory {
        let mut wm = WorkingMemory {
            contexts: Vec::new(),
            layers: Vec::new(),
            next_elem: 0,
            now: 0,
        };
        let root = wm.fresh_element();
        wm.contexts.push(Some(Context {
            id: REAL,
            kind: ContextKind::Real,
            stance: Stance::Present,
            parent: None,
            root,
            owner_substate: None,
        }));
        wm.layers.push(Layer::new());
        wm
    }

    /// Mint a fresh element identity.
    pub fn fresh_element(&mut self) -> ElementId {
        let id = ElementId(self.next_elem);
        self.next_elem += 1;
        id
    }

    /// Advance the clock used to stamp `created_cycle`.
    pub fn set_cycle(&mut self, cycle: u64) {
        self.now = cycle;
    }

    pub fn cycle(&self) -> u64 {
        self.now
    }

    pub fn context(&self, ctx: ContextId) -> Result<&Context, WmError> {
        self.contexts
            .get(ctx.0 as usize)
            .and_then(|c| c.as_ref())
            .ok_or(WmError::UnknownContext(ctx))
    }

    pub fn context_mut(&mut self, ctx: ContextId) -> Result<&mut Context, WmError> {
        self.contexts
            .get_mut(ctx.0 as usize)
            .and_then(|c| c.as_mut())
            .ok_or(WmError::UnknownContext(ctx))
    }

    pub fn root_of(&self, ctx: ContextId) -> Result<ElementId, WmError> {
        Ok(self.context(ctx)?.root)
    }

    /// Live context ids, in creation order.
    pub fn live_contexts(&self) -> Vec<ContextId> {
        self.contexts
            .iter()
            .filter_map(|c| c.as_ref().map(|c| c.id))
            .collect()
    }

    /// Create a hypothetical child context. Its visible set initially equals
    /// the parent's; no triples are written.
    pub fn create_context(
        &mut self,
        kind: ContextKind,
        stance: Stance,
        parent: ContextId,
    ) -> Result<ContextId, WmError> {
        if kind == ContextKind::Real {
            return Err(WmError::ForbiddenRealCreation);
        }
        if self.context(parent).is_err() {
            return Err(WmError::UnknownParent(parent));
        }
        let root = self.fresh_element();
        let id = ContextId(self.contexts.len() as u32);
        self.contexts.push(Some(Context {
            id,
            kind,
            stance,
            parent: Some(parent),
            root,
            owner_substate: None,
        }));
        self.layers.push(Layer::new());
        Ok(id)
    }

    /// Drop a hypothetical context and every descendant of it.
    pub fn discard_context(&mut self, ctx: ContextId) -> Result<(), WmError> {
        if ctx == REAL {
            return Err(WmError::RealTargetForbidden);
        }
        self.context(ctx)?;
        let mut doomed = vec![ctx];
        let mut i = 0;
        while i < doomed.len() {
            let cur = doomed[i];
            for c in self.contexts.iter().flatten() {
                if c.parent == Some(cur) && !doomed.contains(&c.id) {
                    doomed.push(c.id);
                }
            }
            i += 1;
        }
        for d in doomed {
            self.contexts[d.0 as usize] = None;
            self.layers[d.0 as usize] = Layer::new();
        }
        Ok(())
    }

    /// Chain from `ctx` to REAL, child first.
    pub fn chain(&self, ctx: ContextId) -> Result<Vec<ContextId>, WmError> {
        let mut out = Vec::new();
        let mut cur = Some(ctx);
        while let Some(c) = cur {
            let meta = self.context(c)?;
            out.push(c);
            cur = meta.parent;
        }
        Ok(out)
    }

    /// The visible set of `ctx`: the union over the parent chain with child
    /// additions overriding and child masks hiding ancestor triples.
    /// Deterministic (triple-sorted) order.
    pub fn visible(&self, ctx: ContextId) -> Result<Vec<Wme>, WmError> {
        let mut chain = self.chain(ctx)?;
        chain.reverse(); // REAL first
        let mut acc: BTreeMap<Triple, (ContextId, u64)> = BTreeMap::new();
        for c in chain {
            let layer = &self.layers[c.0 as usize];
            for m in &layer.masks {
                acc.remove(m);
            }
            for (t, &cycle) in &layer.adds {
                acc.insert(t.clone(), (c, cycle));
            }
        }
        Ok(acc
            .into_iter()
            .map(|(triple, (context, created_cycle))| Wme {
                triple,
                context,
                created_cycle,
            })
            .collect())
    }

    /// Visible triples only (no metadata).
    pub fn visible_triples(&self, ctx: ContextId) -> Result<BTreeSet<Triple>, WmError> {
        Ok(self.visible(ctx)?.into_iter().map(|w| w.triple).collect())
    }

    /// Raw (adds, masks) of one context's own layer, for invariant checks.
    pub fn layer_view(&self, ctx: ContextId) -> Result<(BTreeSet<Triple>, BTreeSet<Triple>), WmError> {
        self.context(ctx)?;
        let layer = &self.layers[ctx.0 as usize];
        Ok((
            layer.adds.keys().cloned().collect(),
            layer.masks.iter().cloned().collect(),
        ))
    }

    fn visible_set(&self, ctx: ContextId) -> Result<BTreeSet<Triple>, WmError> {
        self.visible_triples(ctx)
    }

    /// Apply an atomic delta to `ctx`. Every remove must be visible and no
    /// add may duplicate a visible triple; any violation aborts the whole
    /// delta.
    pub fn apply_delta(
        &mut self,
        ctx: ContextId,
        adds: &[Triple],
        removes: &[Triple],
    ) -> Result<DeltaReport, WmError> {
        self.context(ctx)?;
        let before = self.visible_set(ctx)?;
        for r in removes {
            if !before.contains(r) {
                return Err(WmError::MissingRemove(r.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for a in adds {
            if before.contains(a) || !seen.insert(a.clone()) {
                return Err(WmError::DuplicateAdd(a.clone()));
            }
        }

        // Inherited = visible through the parent chain, ignoring this layer.
        let inherited: BTreeSet<Triple> = match self.context(ctx)?.parent {
            Some(p) => self.visible_set(p)?,
            None => BTreeSet::new(),
        };

        let mut report = DeltaReport::default();
        for r in removes {
            let layer = &mut self.layers[ctx.0 as usize];
            layer.adds.remove(r);
            if inherited.contains(r) {
                layer.masks.insert(r.clone());
            }
            report.removed.push(r.clone());
        }
        for a in adds {
            let layer = &mut self.layers[ctx.0 as usize];
            layer.masks.remove(a);
            layer.adds.insert(a.clone(), self.now);
            report.added.push(a.clone());
        }
        Ok(report)
    }

    /// Copy the subgraph under `roots` (within `src`'s visible set) into
    /// `dst` with fresh element ids. Returns the old→new id mapping, total
    /// on every copied element.
    pub fn copy_into_context(
        &mut self,
        src: ContextId,
        roots: &[ElementId],
        dst: ContextId,
    ) -> Result<BTreeMap<ElementId, ElementId>, WmError> {
        self.context(src)?;
        if self.context(dst)?.kind == ContextKind::Real {
            return Err(WmError::RealTargetForbidden);
        }
        let visible = self.visible(src)?;
        let mut mentioned: BTreeSet<ElementId> = BTreeSet::new();
        for w in &visible {
            mentioned.insert(w.triple.id);
            if let Some(e) = w.triple.value.as_elem() {
                mentioned.insert(e);
            }
        }
        for r in roots {
            if !mentioned.contains(r) {
                return Err(WmError::UnknownRoot(*r));
            }
        }

        // BFS over id → element-value edges, deterministic by triple order.
        let mut frontier: Vec<ElementId> = roots.to_vec();
        let mut nodes: BTreeSet<ElementId> = frontier.iter().copied().collect();
        let mut order: Vec<ElementId> = frontier.clone();
        while let Some(n) = frontier.first().copied() {
            frontier.remove(0);
            for w in &visible {
                if w.triple.id == n {
                    if let Some(e) = w.triple.value.as_elem() {
                        if nodes.insert(e) {
                            order.push(e);
                            frontier.push(e);
                        }
                    }
                }
            }
        }

        let mut mapping = BTreeMap::new();
        for n in &order {
            let fresh = self.fresh_element();
            mapping.insert(*n, fresh);
        }

        let mut adds = Vec::new();
        for w in &visible {
            if let Some(&new_id) = mapping.get(&w.triple.id) {
                let value = match w.triple.value {
                    Value::Elem(e) => Value::Elem(mapping[&e]),
                    ref v => v.clone(),
                };
                adds.push(Triple::new(new_id, w.triple.attr.clone(), value));
            }
        }
        self.apply_delta(dst, &adds, &[])?;
        Ok(mapping)
    }
}

impl Default for WorkingMemory {
    fn default() -> Self {
        WorkingMemory::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(s: &str) -> Symbol {
        Symbol::id(s)
    }

    #[test]
    fn empty_delta_is_a_noop() {
        let mut wm = WorkingMemory::new();
        let report = wm.apply_delta(REAL, &[], &[]).unwrap();
        assert!(report.is_empty());
        assert!(wm.visible(REAL).unwrap().is_empty());
    }

    #[test]
    fn add_then_requery() {
        let mut wm = WorkingMemory::new();
        let r1 = wm.fresh_element();
        let t = Triple::new(r1, sym("door"), sym("open"));
        wm.apply_delta(REAL, std::slice::from_ref(&t), &[]).unwrap();
        assert!(wm.visible_triples(REAL).unwrap().contains(&t));
    }

    #[test]
    fn removal_in_child_masks_without_touching_real() {
        let mut wm = WorkingMemory::new();
        let r1 = wm.fresh_element();
        let t = Triple::new(r1, sym("door"), sym("open"));
        wm.apply_delta(REAL, std::slice::from_ref(&t), &[]).unwrap();
        let c1 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, REAL)
            .unwrap();
        wm.apply_delta(c1, &[], std::slice::from_ref(&t)).unwrap();
        assert!(!wm.visible_triples(c1).unwrap().contains(&t));
        assert!(wm.visible_triples(REAL).unwrap().contains(&t));
    }

    #[test]
    fn child_with_no_edits_sees_parent_exactly() {
        let mut wm = WorkingMemory::new();
        let e = wm.fresh_element();
        wm.apply_delta(REAL, &[Triple::new(e, sym("a"), sym("1"))], &[])
            .unwrap();
        let c1 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, REAL)
            .unwrap();
        assert_eq!(
            wm.visible_triples(c1).unwrap(),
            wm.visible_triples(REAL).unwrap()
        );
    }

    #[test]
    fn mask_one_add_two_counts() {
        let mut wm = WorkingMemory::new();
        let ids: Vec<ElementId> = (0..5).map(|_| wm.fresh_element()).collect();
        let parent_triples: Vec<Triple> = ids
            .iter()
            .enumerate()
            .map(|(i, e)| Triple::new(*e, sym("n"), Symbol::int(i as i64)))
            .collect();
        wm.apply_delta(REAL, &parent_triples, &[]).unwrap();
        let c1 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, REAL)
            .unwrap();
        let x = wm.fresh_element();
        wm.apply_delta(
            c1,
            &[
                Triple::new(x, sym("p"), sym("q")),
                Triple::new(x, sym("p"), sym("r")),
            ],
            &[parent_triples[0].clone()],
        )
        .unwrap();
        assert_eq!(wm.visible(c1).unwrap().len(), 6);
        assert_eq!(wm.visible(REAL).unwrap().len(), 5);
    }

    #[test]
    fn nested_context_chain_ends_at_real() {
        let mut wm = WorkingMemory::new();
        let c1 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, REAL)
            .unwrap();
        let c2 = wm
            .create_context(ContextKind::Hypothetical, Stance::Past, c1)
            .unwrap();
        let chain = wm.chain(c2).unwrap();
        assert_eq!(chain, vec![c2, c1, REAL]);
    }

    #[test]
    fn real_creation_is_forbidden() {
        let mut wm = WorkingMemory::new();
        assert_eq!(
            wm.create_context(ContextKind::Real, Stance::Present, REAL),
            Err(WmError::ForbiddenRealCreation)
        );
    }

    #[test]
    fn duplicate_add_aborts_whole_delta() {
        let mut wm = WorkingMemory::new();
        let e = wm.fresh_element();
        let t = Triple::new(e, sym("a"), sym("1"));
        wm.apply_delta(REAL, std::slice::from_ref(&t), &[]).unwrap();
        let u = Triple::new(e, sym("b"), sym("2"));
        let err = wm.apply_delta(REAL, &[u.clone(), t.clone()], &[]);
        assert_eq!(err, Err(WmError::DuplicateAdd(t)));
        assert!(!wm.visible_triples(REAL).unwrap().contains(&u));
    }

    #[test]
    fn missing_remove_is_rejected() {
        let mut wm = WorkingMemory::new();
        let e = wm.fresh_element();
        let t = Triple::new(e, sym("a"), sym("1"));
        assert_eq!(
            wm.apply_delta(REAL, &[], std::slice::from_ref(&t)),
            Err(WmError::MissingRemove(t))
        );
    }

    #[test]
    fn copy_of_empty_roots_is_empty() {
        let mut wm = WorkingMemory::new();
        let c1 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, REAL)
            .unwrap();
        let map = wm.copy_into_context(REAL, &[], c1).unwrap();
        assert!(map.is_empty());
    }

    #[test]
    fn copy_board_subtree_is_isomorphic() {
        let mut wm = WorkingMemory::new();
        let board = wm.fresh_element();
        let cell = wm.fresh_element();
        let triples = vec![
            Triple::new(board, sym("cell"), cell),
            Triple::new(cell, sym("color"), sym("red")),
            Triple::new(board, sym("size"), Symbol::int(3)),
        ];
        wm.apply_delta(REAL, &triples, &[]).unwrap();
        let c1 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, REAL)
            .unwrap();
        let map = wm.copy_into_context(REAL, &[board], c1).unwrap();
        assert_eq!(map.len(), 2);
        let vis = wm.visible_triples(c1).unwrap();
        // 3 originals (inherited) + 3 copies
        assert_eq!(vis.len(), 6);
        for t in &triples {
            let mapped = Triple::new(
                map[&t.id],
                t.attr.clone(),
                match t.value {
                    Value::Elem(e) => Value::Elem(map[&e]),
                    ref v => v.clone(),
                },
            );
            assert!(vis.contains(&mapped), "missing {mapped}");
        }
    }

    #[test]
    fn two_copies_use_disjoint_ids() {
        let mut wm = WorkingMemory::new();
        let board = wm.fresh_element();
        wm.apply_delta(REAL, &[Triple::new(board, sym("size"), Symbol::int(3))], &[])
            .unwrap();
        let c1 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, REAL)
            .unwrap();
        let c2 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, REAL)
            .unwrap();
        let m1 = wm.copy_into_context(REAL, &[board], c1).unwrap();
        let m2 = wm.copy_into_context(REAL, &[board], c2).unwrap();
        let ids1: BTreeSet<ElementId> = m1.values().copied().collect();
        let ids2: BTreeSet<ElementId> = m2.values().copied().collect();
        assert!(ids1.is_disjoint(&ids2));
    }

    #[test]
    fn copy_unknown_root_is_rejected() {
        let mut wm = WorkingMemory::new();
        let c1 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, REAL)
            .unwrap();
        let ghost = ElementId(999);
        assert_eq!(
            wm.copy_into_context(REAL, &[ghost], c1),
            Err(WmError::UnknownRoot(ghost))
        );
    }

    #[test]
    fn discard_context_removes_descendants() {
        let mut wm = WorkingMemory::new();
        let c1 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, REAL)
            .unwrap();
        let c2 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, c1)
            .unwrap();
        wm.discard_context(c1).unwrap();
        assert!(wm.context(c1).is_err());
        assert!(wm.context(c2).is_err());
        assert!(wm.context(REAL).is_ok());
    }

    #[test]
    fn remasked_add_revives_triple() {
        let mut wm = WorkingMemory::new();
        let e = wm.fresh_element();
        let t = Triple::new(e, sym("door"), sym("open"));
        wm.apply_delta(REAL, std::slice::from_ref(&t), &[]).unwrap();
        let c1 = wm
            .create_context(ContextKind::Hypothetical, Stance::Future, REAL)
            .unwrap();
        wm.apply_delta(c1, &[], std::slice::from_ref(&t)).unwrap();
        wm.apply_delta(c1, std::slice::from_ref(&t), &[]).unwrap();
        assert!(wm.visible_triples(c1).unwrap().contains(&t));
    }
}
