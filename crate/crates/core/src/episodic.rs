//! Episodic memory: an automatic, temporally ordered record of the REAL
//! context. Per-cycle deltas with periodic snapshots keep storage linear in
//! change volume while bounding reconstruction cost; cue-based retrieval
//! reports interference as high familiarity without a specific episode.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::hash::{hash_triples, ScopeFilter};
use crate::process::{logistic, ProcStatus, ProcessState};
use crate::rules::ModuleKind;
use crate::symbols::{ElementId, Symbol, Value};
use crate::wm::{ContextId, ContextKind, Stance, Triple, WmError, WorkingMemory};

/// Slope of the logistic mapping from match score to familiarity on
/// below-threshold retrievals.
const SCORE_FAMILIARITY_SLOPE: f64 = 6.0;

/// One cycle's record: the REAL delta, a periodic full snapshot, and the
/// state hash after the delta.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub cycle: u64,
    pub adds: Vec<Triple>,
    pub removes: Vec<Triple>,
    pub snapshot: Option<BTreeSet<Triple>>,
    pub hash: u64,
    pub selected_rule: Option<String>,
}

/// A partial description of a past state.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeCue {
    pub patterns: Vec<(Symbol, Symbol)>,
    pub time_hint: Option<TimeHint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeHint {
    Before(u64),
    After(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodicParams {
    pub tau_match: f64,
    pub tie_limit: usize,
}

impl Default for EpisodicParams {
    fn default() -> Self {
        EpisodicParams {
            tau_match: 0.5,
            tie_limit: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpisodicRetrieval {
    Success { cycle: u64, score: f64 },
    Failure,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpisodicError {
    #[error("cycle {got} is not contiguous with last recorded {last}")]
    NonContiguousCycle { got: u64, last: u64 },
    #[error("range {0}..{1} is not fully recorded")]
    RangeUnrecorded(u64, u64),
    #[error("cycle {0} is not recorded")]
    UnknownEpisode(u64),
    #[error("reconstruction must target a hypothetical past context")]
    RealTargetForbidden,
    #[error("corrupt dump: {0}")]
    CorruptDump(String),
    #[error(transparent)]
    Wm(#[from] WmError),
}

/// The store. Episodes are gapless by cycle starting at 0.
#[derive(Debug)]
pub struct EpisodicStore {
    episodes: Vec<Episode>,
    snapshot_every: u64,
    /// Root element used for hash canonicalization of recorded states.
    root: ElementId,
}

impl EpisodicStore {
    pub fn new(snapshot_every: u64, root: ElementId) -> EpisodicStore {
        EpisodicStore {
            episodes: Vec::new(),
            snapshot_every: snapshot_every.max(1),
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn last_cycle(&self) -> Option<u64> {
        self.episodes.last().map(|e| e.cycle)
    }

    pub fn get(&self, cycle: u64) -> Option<&Episode> {
        let first = self.episodes.first()?.cycle;
        self.episodes.get(cycle.checked_sub(first)? as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    /// Append one cycle's record. The caller passes the full REAL state after
    /// the delta; the hash and the snapshot schedule are handled here.
    pub fn record_cycle(
        &mut self,
        cycle: u64,
        adds: Vec<Triple>,
        removes: Vec<Triple>,
        selected_rule: Option<String>,
        state_after: &BTreeSet<Triple>,
    ) -> Result<&Episode, EpisodicError> {
        let expected = self.episodes.last().map(|e| e.cycle + 1).unwrap_or(0);
        if cycle != expected {
            return Err(EpisodicError::NonContiguousCycle {
                got: cycle,
                last: expected.wrapping_sub(1),
            });
        }
        let snapshot = if cycle.is_multiple_of(self.snapshot_every) {
            Some(state_after.clone())
        } else {
            None
        };
        let hash = hash_triples(state_after, Some(self.root), &ScopeFilter::All);
        self.episodes.push(Episode {
            cycle,
            adds,
            removes,
            snapshot,
            hash,
            selected_rule,
        });
        Ok(self.episodes.last().expect("just pushed"))
    }

    /// Replay snapshot-plus-deltas to the state as of `cycle` (after that
    /// cycle's delta).
    pub fn state_at(&self, cycle: u64) -> Result<BTreeSet<Triple>, EpisodicError> {
        let ep = self
            .get(cycle)
            .ok_or(EpisodicError::UnknownEpisode(cycle))?;
        if let Some(s) = &ep.snapshot {
            return Ok(s.clone());
        }
        // nearest snapshot at or below
        let mut base_cycle = cycle - (cycle % self.snapshot_every);
        let mut state = loop {
            match self.get(base_cycle).and_then(|e| e.snapshot.as_ref()) {
                Some(s) => break s.clone(),
                None => {
                    if base_cycle == 0 {
                        return Err(EpisodicError::RangeUnrecorded(0, cycle));
                    }
                    base_cycle -= self.snapshot_every;
                }
            }
        };
        for c in (base_cycle + 1)..=cycle {
            let e = self.get(c).ok_or(EpisodicError::UnknownEpisode(c))?;
            for r in &e.removes {
                state.remove(r);
            }
            for a in &e.adds {
                state.insert(a.clone());
            }
        }
        Ok(state)
    }

    /// Adjacent episode in either direction, or none at the boundary.
    pub fn step(&self, cycle: u64, next: bool) -> Result<Option<&Episode>, EpisodicError> {
        self.get(cycle)
            .ok_or(EpisodicError::UnknownEpisode(cycle))?;
        Ok(if next {
            self.get(cycle + 1)
        } else {
            cycle.checked_sub(1).and_then(|c| self.get(c))
        })
    }

    /// Score every episode against the cue and classify the outcome:
    /// interference (too many tied maxima) is a failure that feels familiar.
    pub fn retrieve_episode(
        &self,
        cue: &EpisodeCue,
        params: &EpisodicParams,
    ) -> Result<(EpisodicRetrieval, ProcessState), EpisodicError> {
        let failure = |familiarity: f64, detail: Vec<(Symbol, Symbol)>| {
            (
                EpisodicRetrieval::Failure,
                ProcessState::new(
                    ModuleKind::Episodic,
                    ProcStatus::Failure,
                    0.0,
                    familiarity,
                    detail,
                ),
            )
        };
        if self.episodes.is_empty() || cue.patterns.is_empty() {
            return Ok(failure(0.0, vec![(Symbol::id("episodes"), Symbol::int(0))]));
        }
        let candidates: Vec<&Episode> = self
            .episodes
            .iter()
            .filter(|e| match cue.time_hint {
                Some(TimeHint::Before(c)) => e.cycle < c,
                Some(TimeHint::After(c)) => e.cycle > c,
                None => true,
            })
            .collect();
        if candidates.is_empty() {
            return Ok(failure(0.0, vec![(Symbol::id("episodes"), Symbol::int(0))]));
        }
        let mut scored: Vec<(u64, f64)> = Vec::with_capacity(candidates.len());
        for e in candidates {
            let state = self.state_at(e.cycle)?;
            let matched = cue
                .patterns
                .iter()
                .filter(|(attr, value)| {
                    state
                        .iter()
                        .any(|t| t.attr == *attr && t.value == Value::Sym(value.clone()))
                })
                .count();
            scored.push((e.cycle, matched as f64 / cue.patterns.len() as f64));
        }
        let best = scored.iter().map(|(_, s)| *s).fold(0.0f64, f64::max);
        if best < params.tau_match {
            let familiarity = logistic(SCORE_FAMILIARITY_SLOPE * (best - params.tau_match));
            return Ok(failure(
                familiarity,
                vec![(Symbol::id("best-score"), Symbol::real(best))],
            ));
        }
        let maxima: Vec<u64> = scored
            .iter()
            .filter(|(_, s)| *s == best)
            .map(|(c, _)| *c)
            .collect();
        if maxima.len() >= params.tie_limit {
            let familiarity = (maxima.len() as f64 / params.tie_limit as f64).min(1.0);
            return Ok(failure(
                familiarity,
                vec![
                    (Symbol::id("interference"), Symbol::int(maxima.len() as i64)),
                    (Symbol::id("best-score"), Symbol::real(best)),
                ],
            ));
        }
        // remaining ties break toward the hint, else most recent
        let cycle = match cue.time_hint {
            Some(TimeHint::After(_)) => *maxima.iter().min().expect("nonempty"),
            _ => *maxima.iter().max().expect("nonempty"),
        };
        let ps = ProcessState::new(
            ModuleKind::Episodic,
            ProcStatus::Success,
            best,
            best,
            vec![
                (Symbol::id("cycle"), Symbol::int(cycle as i64)),
                (Symbol::id("score"), Symbol::real(best)),
            ],
        );
        Ok((EpisodicRetrieval::Success { cycle, score: best }, ps))
    }

    /// Materialize the states of cycles [a, b] into `dst` (hypothetical,
    /// stance PAST) with fresh element ids, one tagged scene per cycle under
    /// a history node. Returns (cycle, scene root) handles.
    pub fn reconstruct_range(
        &self,
        a: u64,
        b: u64,
        wm: &mut WorkingMemory,
        dst: ContextId,
    ) -> Result<Vec<(u64, ElementId)>, EpisodicError> {
        if a > b || self.get(a).is_none() || self.get(b).is_none() {
            return Err(EpisodicError::RangeUnrecorded(a, b));
        }
        {
            let meta = wm.context(dst)?;
            if meta.kind != ContextKind::Hypothetical || meta.stance != Stance::Past {
                return Err(EpisodicError::RealTargetForbidden);
            }
        }
        let droot = wm.root_of(dst)?;
        let history = wm.fresh_element();
        let mut adds = vec![Triple::new(droot, Symbol::id("history"), history)];
        let mut handles = Vec::new();
        for cycle in a..=b {
            let state = self.state_at(cycle)?;
            // remap every element in the recorded state to fresh ids
            let mut map: BTreeMap<ElementId, ElementId> = BTreeMap::new();
            let mut ids: BTreeSet<ElementId> = BTreeSet::new();
            for t in &state {
                ids.insert(t.id);
                if let Some(e) = t.value.as_elem() {
                    ids.insert(e);
                }
            }
            for id in ids {
                map.insert(id, wm.fresh_element());
            }
            let holder = wm.fresh_element();
            adds.push(Triple::new(history, Symbol::id("state-at"), holder));
            adds.push(Triple::new(
                holder,
                Symbol::id("cycle"),
                Symbol::int(cycle as i64),
            ));
            let scene_root = map.get(&self.root).copied().unwrap_or_else(|| {
                // state without the designated root (synthetic stores)
                map.values().next().copied().unwrap_or(holder)
            });
            adds.push(Triple::new(holder, Symbol::id("root"), scene_root));
            for t in &state {
                let value = match t.value {
                    Value::Elem(e) => Value::Elem(map[&e]),
                    ref v => v.clone(),
                };
                adds.push(Triple::new(map[&t.id], t.attr.clone(), value));
            }
            handles.push((cycle, scene_root));
        }
        wm.apply_delta(dst, &adds, &[])?;
        Ok(handles)
    }

    /// Pairs (i, j), i < j, of consecutive occurrences of the same
    /// scope-filtered state within [a, b]. States are collapsed into
    /// change-segments first, so cycles that merely repeat the previous
    /// cycle's state do not pair with it; `i` is the cycle at which the
    /// state was (re)entered. `adjacent_only = false` reports every
    /// same-hash segment pair instead.
    pub fn find_repeated_states(
        &self,
        a: u64,
        b: u64,
        scope: &ScopeFilter,
        adjacent_only: bool,
    ) -> Result<Vec<(u64, u64)>, EpisodicError> {
        if a > b || self.get(a).is_none() || self.get(b).is_none() {
            return Err(EpisodicError::RangeUnrecorded(a, b));
        }
        let mut segments: Vec<(u64, u64)> = Vec::new(); // (entered_cycle, hash)
        let mut prev: Option<u64> = None;
        for cycle in a..=b {
            let state = self.state_at(cycle)?;
            let h = hash_triples(&state, Some(self.root), scope);
            if prev != Some(h) {
                segments.push((cycle, h));
                prev = Some(h);
            }
        }
        let mut out = Vec::new();
        let mut last_seen: BTreeMap<u64, u64> = BTreeMap::new();
        for (cycle, h) in &segments {
            if adjacent_only {
                if let Some(prev_cycle) = last_seen.get(h) {
                    out.push((*prev_cycle, *cycle));
                }
                last_seen.insert(*h, *cycle);
            } else {
                for (c2, h2) in &segments {
                    if h2 == h && c2 < cycle {
                        out.push((*c2, *cycle));
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    // -- dump format --------------------------------------------------------

    /// JSON-lines dump, one episode per line, element ids canonicalized by
    /// first appearance across the whole dump.
    pub fn dump(&self) -> String {
        let mut canon: BTreeMap<ElementId, usize> = BTreeMap::new();
        let mut out = String::new();
        for e in &self.episodes {
            let line = json!({
                "cycle": e.cycle,
                "adds": e.adds.iter().map(|t| triple_json(t, &mut canon)).collect::<Vec<_>>(),
                "removes": e.removes.iter().map(|t| triple_json(t, &mut canon)).collect::<Vec<_>>(),
                "hash": format!("{:016x}", e.hash),
                "rule": e.selected_rule,
                "snapshot": e.snapshot.as_ref().map(|s| {
                    s.iter().map(|t| triple_json(t, &mut canon)).collect::<Vec<_>>()
                }),
            });
            let _ = writeln!(out, "{line}");
        }
        out
    }

    /// Parse a dump back into a store (for offline inspection). The
    /// designated root is the canonical first element, `e0`.
    pub fn load_dump(text: &str, snapshot_every: u64) -> Result<EpisodicStore, EpisodicError> {
        let mut store = EpisodicStore::new(snapshot_every, ElementId(0));
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: Json = serde_json::from_str(line)
                .map_err(|e| EpisodicError::CorruptDump(format!("line {}: {e}", lineno + 1)))?;
            let bad = |what: &str| EpisodicError::CorruptDump(format!("line {}: {what}", lineno + 1));
            let cycle = v["cycle"].as_u64().ok_or_else(|| bad("missing cycle"))?;
            let parse_triples = |field: &Json, what: &str| -> Result<Vec<Triple>, EpisodicError> {
                field
                    .as_array()
                    .ok_or_else(|| bad(what))?
                    .iter()
                    .map(triple_from_json)
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad(what))
            };
            let adds = parse_triples(&v["adds"], "bad adds")?;
            let removes = parse_triples(&v["removes"], "bad removes")?;
            let hash = u64::from_str_radix(
                v["hash"].as_str().ok_or_else(|| bad("missing hash"))?,
                16,
            )
            .map_err(|_| bad("bad hash"))?;
            let snapshot = if v["snapshot"].is_null() {
                None
            } else {
                Some(
                    parse_triples(&v["snapshot"], "bad snapshot")?
                        .into_iter()
                        .collect::<BTreeSet<Triple>>(),
                )
            };
            let expected = store.episodes.last().map(|e| e.cycle + 1).unwrap_or(0);
            if cycle != expected {
                return Err(bad("episodes are not gapless"));
            }
            store.episodes.push(Episode {
                cycle,
                adds,
                removes,
                snapshot,
                hash,
                selected_rule: v["rule"].as_str().map(|s| s.to_string()),
            });
        }
        Ok(store)
    }

    /// Ingest seed states as the episodic history (cycles 0..n): deltas,
    /// snapshots, and hashes are derived exactly as live recording would.
    pub fn seed_states(&mut self, states: &[BTreeSet<Triple>]) -> Result<(), EpisodicError> {
        let mut prev: BTreeSet<Triple> = BTreeSet::new();
        let start = self.episodes.last().map(|e| e.cycle + 1).unwrap_or(0);
        for (i, state) in states.iter().enumerate() {
            let adds: Vec<Triple> = state.difference(&prev).cloned().collect();
            let removes: Vec<Triple> = prev.difference(state).cloned().collect();
            self.record_cycle(start + i as u64, adds, removes, None, state)?;
            prev = state.clone();
        }
        Ok(())
    }
}

fn symbol_json(s: &Symbol) -> Json {
    match s {
        Symbol::Id(a) => json!(a.as_str()),
        Symbol::Str(s) => json!({ "str": s }),
        Symbol::Int(i) => json!(i),
        Symbol::Real(r) => json!(r.0),
    }
}

fn triple_json(t: &Triple, canon: &mut BTreeMap<ElementId, usize>) -> Json {
    let next = canon.len();
    let id = *canon.entry(t.id).or_insert(next);
    let value = match &t.value {
        Value::Elem(e) => {
            let next = canon.len();
            let k = *canon.entry(*e).or_insert(next);
            json!({ "e": k })
        }
        Value::Sym(s) => symbol_json(s),
    };
    json!([format!("e{id}"), symbol_from_attr(&t.attr), value])
}

fn symbol_from_attr(s: &Symbol) -> Json {
    symbol_json(s)
}

fn symbol_from_json(v: &Json) -> Option<Symbol> {
    match v {
        Json::String(s) => Some(Symbol::id(s)),
        Json::Number(n) => {
            if let Some(i) = n.as_i64() {
                Some(Symbol::int(i))
            } else {
                n.as_f64().map(Symbol::real)
            }
        }
        Json::Object(o) => o.get("str").and_then(|s| s.as_str()).map(Symbol::str),
        _ => None,
    }
}

fn triple_from_json(v: &Json) -> Option<Triple> {
    let arr = v.as_array()?;
    if arr.len() != 3 {
        return None;
    }
    let id_text = arr[0].as_str()?;
    let id = ElementId(id_text.strip_prefix('e')?.parse().ok()?);
    let attr = symbol_from_json(&arr[1])?;
    let value = match &arr[2] {
        Json::Object(o) if o.contains_key("e") => Value::Elem(ElementId(o["e"].as_u64()?)),
        other => Value::Sym(symbol_from_json(other)?),
    };
    Some(Triple { id, attr, value })
}

/// Parse a seed file of JSON-lines `{"cycle": k, "state": [[id, attr, value], ...]}`.
/// Ids are opaque local tokens mapped into a private element range.
pub fn parse_state_seed(text: &str) -> Result<Vec<BTreeSet<Triple>>, EpisodicError> {
    const SEED_BASE: u64 = 1 << 32;
    let mut out = Vec::new();
    let mut ids: BTreeMap<String, ElementId> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| EpisodicError::CorruptDump(format!("line {}: {what}", lineno + 1));
        let v: Json = serde_json::from_str(line)
            .map_err(|e| EpisodicError::CorruptDump(format!("line {}: {e}", lineno + 1)))?;
        let state = v["state"].as_array().ok_or_else(|| bad("missing state"))?;
        let mut triples = BTreeSet::new();
        for item in state {
            let arr = item.as_array().ok_or_else(|| bad("bad wme"))?;
            if arr.len() != 3 {
                return Err(bad("wme is not a triple"));
            }
            let id_text = arr[0].as_str().ok_or_else(|| bad("bad id"))?.to_string();
            let next = SEED_BASE + ids.len() as u64;
            let id = *ids.entry(id_text).or_insert(ElementId(next));
            let attr = symbol_from_json(&arr[1]).ok_or_else(|| bad("bad attr"))?;
            let value = match &arr[2] {
                Json::Object(o) if o.contains_key("e") => {
                    let target = o["e"].as_str().ok_or_else(|| bad("bad element ref"))?;
                    let next = SEED_BASE + ids.len() as u64;
                    Value::Elem(*ids.entry(target.to_string()).or_insert(ElementId(next)))
                }
                other => Value::Sym(symbol_from_json(other).ok_or_else(|| bad("bad value"))?),
            };
            triples.insert(Triple { id, attr, value });
        }
        out.push(triples);
    }
    Ok(out)
}
