//! Semantic memory: a long-term declarative store of slotted chunks with
//! recency/frequency metadata, serving cue-based retrieval with graded
//! outcomes (success, partial disclosure, failure with familiarity).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::process::{logistic, ProcStatus, ProcessState};
use crate::rules::ModuleKind;
use crate::symbols::Symbol;

/// A slotted declarative record.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub id: String,
    pub slots: BTreeMap<Symbol, Symbol>,
    pub meta: ChunkMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkMeta {
    pub n_accesses: u64,
    pub last_access_cycle: u64,
    pub creation_cycle: u64,
}

/// Activation: ln(frequency) discounted by log recency.
/// A = ln(n_accesses) − d·ln(Δt + 1)
pub fn activation(meta: &ChunkMeta, now: u64, d: f64) -> f64 {
    debug_assert!(d > 0.0, "decay must be positive");
    let dt = now.saturating_sub(meta.last_access_cycle) as f64;
    (meta.n_accesses as f64).ln() - d * (dt + 1.0).ln()
}

/// A predicate over one slot's value.
#[derive(Debug, Clone, PartialEq)]
pub enum SlotPredicate {
    LengthEq(usize),
    LetterAt(usize, char),
    Contains(char),
    Excludes(char),
    NotValue(Symbol),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub slot: Symbol,
    pub pred: SlotPredicate,
}

impl Constraint {
    fn holds(&self, chunk: &Chunk) -> bool {
        let Some(value) = chunk.slots.get(&self.slot) else {
            return false;
        };
        let text = value.to_string();
        match &self.pred {
            SlotPredicate::LengthEq(n) => text.chars().count() == *n,
            SlotPredicate::LetterAt(i, c) => text.chars().nth(*i) == Some(*c),
            SlotPredicate::Contains(c) => text.contains(*c),
            SlotPredicate::Excludes(c) => !text.contains(*c),
            SlotPredicate::NotValue(s) => value != s,
        }
    }
}

/// A partial specification of a chunk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalCue {
    pub required: BTreeMap<Symbol, Symbol>,
    /// Carried for rule-side bookkeeping; does not filter candidates.
    pub optional: BTreeMap<Symbol, Symbol>,
    pub constraints: Vec<Constraint>,
}

impl RetrievalCue {
    fn admits(&self, chunk: &Chunk) -> bool {
        self.required
            .iter()
            .all(|(k, v)| chunk.slots.get(k) == Some(v))
            && self.constraints.iter().all(|c| c.holds(chunk))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalParams {
    pub tau_success: f64,
    pub tau_partial: f64,
    pub d: f64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            tau_success: 0.0,
            tau_partial: -1.0,
            d: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RetrievalResult {
    Success(Chunk),
    /// Below the success threshold but above the partial one: disclose a
    /// single slot (the first present in the store's disclosure order).
    Partial { slot: Symbol, value: Symbol },
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyClass {
    Common,
    Uncommon,
}

impl FrequencyClass {
    pub fn as_symbol(self) -> Symbol {
        match self {
            FrequencyClass::Common => Symbol::id("common"),
            FrequencyClass::Uncommon => Symbol::id("uncommon"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error("malformed chunk: {0}")]
    MalformedChunk(String),
    #[error("tau_partial must not exceed tau_success")]
    BadThresholds,
    #[error("frequency class is undefined on an empty store")]
    EmptyStore,
}

/// The store. Chunks are kept in insertion order; identical-slotted inserts
/// merge into the existing record.
#[derive(Debug, Default)]
pub struct SemanticStore {
    chunks: Vec<Chunk>,
    /// Slots disclosed by partial retrievals, most-preferred first.
    pub disclosure_order: Vec<Symbol>,
    /// Chunks with n_accesses at or below this quantile of the store are
    /// classed uncommon.
    pub uncommon_quantile: f64,
}

impl SemanticStore {
    pub fn new() -> SemanticStore {
        SemanticStore {
            chunks: Vec::new(),
            disclosure_order: vec![Symbol::id("first")],
            uncommon_quantile: 0.25,
        }
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Chunk> {
        self.chunks.iter().find(|c| c.id == id)
    }

    /// Insert or merge. Identical-slotted chunks merge: the access count
    /// grows and the last access advances.
    pub fn store_chunk(&mut self, c: Chunk) -> Result<String, SemanticError> {
        if c.slots.is_empty() {
            return Err(SemanticError::MalformedChunk(format!(
                "chunk {} has no slots",
                c.id
            )));
        }
        if let Some(existing) = self.chunks.iter_mut().find(|x| x.slots == c.slots) {
            existing.meta.n_accesses += 1;
            existing.meta.last_access_cycle =
                existing.meta.last_access_cycle.max(c.meta.last_access_cycle);
            return Ok(existing.id.clone());
        }
        if self.chunks.iter().any(|x| x.id == c.id) {
            return Err(SemanticError::MalformedChunk(format!(
                "chunk id {} already names different slots",
                c.id
            )));
        }
        let id = c.id.clone();
        self.chunks.push(c);
        Ok(id)
    }

    /// Nearest-rank quantile of the store's access counts.
    fn quantile_n(&self) -> Result<u64, SemanticError> {
        if self.chunks.is_empty() {
            return Err(SemanticError::EmptyStore);
        }
        let mut counts: Vec<u64> = self.chunks.iter().map(|c| c.meta.n_accesses).collect();
        counts.sort_unstable();
        let rank = ((self.uncommon_quantile * counts.len() as f64).ceil() as usize).max(1);
        Ok(counts[rank - 1])
    }

    /// Uncommon iff the chunk's access count is at or below the store's
    /// bottom quantile (a single-chunk store is uncommon by convention).
    pub fn frequency_class(&self, c: &Chunk) -> Result<FrequencyClass, SemanticError> {
        let q = self.quantile_n()?;
        Ok(if c.meta.n_accesses <= q {
            FrequencyClass::Uncommon
        } else {
            FrequencyClass::Common
        })
    }

    /// Cue-based retrieval. Success bumps the winning chunk's metadata;
    /// partial and failed retrievals touch nothing.
    pub fn retrieve(
        &mut self,
        cue: &RetrievalCue,
        now: u64,
        params: &RetrievalParams,
    ) -> Result<(RetrievalResult, ProcessState), SemanticError> {
        if params.tau_partial > params.tau_success {
            return Err(SemanticError::BadThresholds);
        }
        let best = self
            .chunks
            .iter()
            .enumerate()
            .filter(|(_, c)| cue.admits(c))
            .map(|(i, c)| (i, activation(&c.meta, now, params.d)))
            .max_by(|(i, a), (j, b)| {
                a.total_cmp(b)
                    .then_with(|| {
                        self.chunks[*i]
                            .meta
                            .n_accesses
                            .cmp(&self.chunks[*j].meta.n_accesses)
                    })
                    // lexicographically smaller id wins, so reverse
                    .then_with(|| self.chunks[*j].id.cmp(&self.chunks[*i].id))
            });

        let Some((best_idx, a)) = best else {
            let ps = ProcessState::new(
                ModuleKind::Semantic,
                ProcStatus::Failure,
                0.0,
                0.0,
                vec![(Symbol::id("candidates"), Symbol::int(0))],
            );
            return Ok((RetrievalResult::Failure, ps));
        };

        if a >= params.tau_success {
            let class = self.frequency_class(&self.chunks[best_idx])?;
            let chunk = {
                let c = &mut self.chunks[best_idx];
                c.meta.n_accesses += 1;
                c.meta.last_access_cycle = now;
                c.clone()
            };
            let ps = ProcessState::new(
                ModuleKind::Semantic,
                ProcStatus::Success,
                logistic(a - params.tau_success),
                0.0,
                vec![
                    (Symbol::id("frequency-class"), class.as_symbol()),
                    (Symbol::id("chunk"), Symbol::id(&chunk.id)),
                ],
            );
            return Ok((RetrievalResult::Success(chunk), ps));
        }

        if a >= params.tau_partial {
            let chunk = &self.chunks[best_idx];
            let disclosed = self
                .disclosure_order
                .iter()
                .find_map(|s| chunk.slots.get(s).map(|v| (s.clone(), v.clone())))
                .or_else(|| chunk.slots.iter().next().map(|(s, v)| (s.clone(), v.clone())));
            let (slot, value) = disclosed.expect("chunks have at least one slot");
            let ps = ProcessState::new(
                ModuleKind::Semantic,
                ProcStatus::Partial,
                0.0,
                logistic(a - params.tau_partial),
                vec![(slot.clone(), value.clone())],
            );
            return Ok((RetrievalResult::Partial { slot, value }, ps));
        }

        let ps = ProcessState::new(
            ModuleKind::Semantic,
            ProcStatus::Failure,
            0.0,
            logistic(a - params.tau_partial),
            vec![(Symbol::id("below"), Symbol::id("threshold"))],
        );
        Ok((RetrievalResult::Failure, ps))
    }
}

/// Parse the line-oriented seed format:
/// `id attr=value attr=value ... @n_accesses=K @last=CYCLE`
pub fn parse_seed(text: &str) -> Result<Vec<Chunk>, SemanticError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts
            .next()
            .ok_or_else(|| SemanticError::MalformedChunk(format!("line {}", lineno + 1)))?
            .to_string();
        let mut slots = BTreeMap::new();
        let mut n_accesses = 1u64;
        let mut last = 0u64;
        for part in parts {
            let (key, value) = part.split_once('=').ok_or_else(|| {
                SemanticError::MalformedChunk(format!("line {}: `{part}` is not key=value", lineno + 1))
            })?;
            match key {
                "@n_accesses" => {
                    n_accesses = value.parse().map_err(|_| {
                        SemanticError::MalformedChunk(format!("line {}: bad count", lineno + 1))
                    })?;
                }
                "@last" => {
                    last = value.parse().map_err(|_| {
                        SemanticError::MalformedChunk(format!("line {}: bad cycle", lineno + 1))
                    })?;
                }
                _ => {
                    slots.insert(Symbol::id(key), parse_value(value));
                }
            }
        }
        if slots.is_empty() {
            return Err(SemanticError::MalformedChunk(format!(
                "line {}: chunk {id} has no slots",
                lineno + 1
            )));
        }
        if n_accesses == 0 {
            return Err(SemanticError::MalformedChunk(format!(
                "line {}: n_accesses must be at least 1",
                lineno + 1
            )));
        }
        out.push(Chunk {
            id,
            slots,
            meta: ChunkMeta {
                n_accesses,
                last_access_cycle: last,
                creation_cycle: 0,
            },
        });
    }
    Ok(out)
}

fn parse_value(s: &str) -> Symbol {
    if let Ok(i) = s.parse::<i64>() {
        return Symbol::int(i);
    }
    if let Ok(r) = s.parse::<f64>() {
        return Symbol::real(r);
    }
    Symbol::id(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(id: &str, word: &str, n: u64, last: u64) -> Chunk {
        let mut slots = BTreeMap::new();
        slots.insert(Symbol::id("word"), Symbol::id(word));
        slots.insert(
            Symbol::id("first"),
            Symbol::id(&word.chars().next().unwrap().to_string()),
        );
        Chunk {
            id: id.to_string(),
            slots,
            meta: ChunkMeta {
                n_accesses: n,
                last_access_cycle: last,
                creation_cycle: 0,
            },
        }
    }

    #[test]
    fn insert_new_has_one_access() {
        let mut store = SemanticStore::new();
        store.store_chunk(chunk("tripe", "tripe", 1, 0)).unwrap();
        assert_eq!(store.get("tripe").unwrap().meta.n_accesses, 1);
    }

    #[test]
    fn identical_slots_merge() {
        let mut store = SemanticStore::new();
        store.store_chunk(chunk("tripe", "tripe", 1, 0)).unwrap();
        store.store_chunk(chunk("tripe", "tripe", 1, 5)).unwrap();
        assert_eq!(store.len(), 1);
        let c = store.get("tripe").unwrap();
        assert_eq!(c.meta.n_accesses, 2);
        assert_eq!(c.meta.last_access_cycle, 5);
    }

    #[test]
    fn one_slot_difference_keeps_both() {
        let mut store = SemanticStore::new();
        store.store_chunk(chunk("tripe", "tripe", 1, 0)).unwrap();
        store.store_chunk(chunk("trope", "trope", 1, 0)).unwrap();
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn activation_base_case_is_zero() {
        let meta = ChunkMeta {
            n_accesses: 1,
            last_access_cycle: 10,
            creation_cycle: 0,
        };
        assert_eq!(activation(&meta, 10, 0.5), 0.0);
    }

    #[test]
    fn activation_matches_direct_recomputation() {
        let meta = ChunkMeta {
            n_accesses: 5,
            last_access_cycle: 0,
            creation_cycle: 0,
        };
        let a = activation(&meta, 10, 0.5);
        let expected = 5f64.ln() - 0.5 * 11f64.ln();
        assert!((a - expected).abs() < 1e-12);
        assert!((a - 0.410).abs() < 5e-4, "{a}");
    }

    #[test]
    fn activation_decreases_with_age() {
        let meta = ChunkMeta {
            n_accesses: 3,
            last_access_cycle: 0,
            creation_cycle: 0,
        };
        let mut prev = f64::INFINITY;
        for now in [0, 1, 5, 20, 100] {
            let a = activation(&meta, now, 0.5);
            assert!(a < prev);
            prev = a;
        }
    }

    #[test]
    fn empty_store_fails_with_zero_familiarity() {
        let mut store = SemanticStore::new();
        let cue = RetrievalCue {
            required: [(Symbol::id("word"), Symbol::id("x"))].into(),
            ..Default::default()
        };
        let (result, ps) = store
            .retrieve(&cue, 5, &RetrievalParams::default())
            .unwrap();
        assert_eq!(result, RetrievalResult::Failure);
        assert_eq!(ps.status, ProcStatus::Failure);
        assert_eq!(ps.familiarity, 0.0);
    }

    #[test]
    fn uncommon_recent_chunk_wins_with_class_detail() {
        let mut store = SemanticStore::new();
        store.store_chunk(chunk("tripe", "tripe", 1, 99)).unwrap();
        for (i, w) in ["slate", "crane", "pride", "grime"].iter().enumerate() {
            store.store_chunk(chunk(w, w, 9 + i as u64, 10)).unwrap();
        }
        let cue = RetrievalCue {
            constraints: vec![Constraint {
                slot: Symbol::id("word"),
                pred: SlotPredicate::LengthEq(5),
            }],
            required: BTreeMap::new(),
            optional: BTreeMap::new(),
        };
        let params = RetrievalParams {
            tau_success: -1.0,
            tau_partial: -2.0,
            d: 1.0,
        };
        let (result, ps) = store.retrieve(&cue, 100, &params).unwrap();
        match result {
            RetrievalResult::Success(c) => assert_eq!(c.id, "tripe"),
            other => panic!("expected success, got {other:?}"),
        }
        assert!(ps
            .detail
            .contains(&(Symbol::id("frequency-class"), Symbol::id("uncommon"))));
        // success bumps exactly the winner
        assert_eq!(store.get("tripe").unwrap().meta.n_accesses, 2);
        assert_eq!(store.get("slate").unwrap().meta.n_accesses, 9);
    }

    #[test]
    fn between_thresholds_disclose_first_letter_only() {
        let mut store = SemanticStore::new();
        store.store_chunk(chunk("apple", "apple", 1, 90)).unwrap();
        let cue = RetrievalCue {
            constraints: vec![Constraint {
                slot: Symbol::id("word"),
                pred: SlotPredicate::LengthEq(5),
            }],
            ..Default::default()
        };
        // A at now=100: ln(1) − 0.5·ln(12) ≈ −1.24
        let params = RetrievalParams {
            tau_success: 0.0,
            tau_partial: -2.0,
            d: 0.5,
        };
        let (result, ps) = store.retrieve(&cue, 100, &params).unwrap();
        match result {
            RetrievalResult::Partial { slot, value } => {
                assert_eq!(slot, Symbol::id("first"));
                assert_eq!(value, Symbol::id("a"));
            }
            other => panic!("expected partial, got {other:?}"),
        }
        assert_eq!(ps.status, ProcStatus::Partial);
        assert!(ps.familiarity > 0.5);
        // no bookkeeping on partial
        assert_eq!(store.get("apple").unwrap().meta.n_accesses, 1);
    }

    #[test]
    fn bad_thresholds_error() {
        let mut store = SemanticStore::new();
        store.store_chunk(chunk("a", "apple", 1, 0)).unwrap();
        let params = RetrievalParams {
            tau_success: -2.0,
            tau_partial: 0.0,
            d: 0.5,
        };
        assert_eq!(
            store.retrieve(&RetrievalCue::default(), 1, &params),
            Err(SemanticError::BadThresholds)
        );
    }

    #[test]
    fn frequency_class_edges() {
        let mut store = SemanticStore::new();
        store.store_chunk(chunk("only", "onlyx", 4, 0)).unwrap();
        let c = store.get("only").unwrap().clone();
        // single-chunk store: uncommon by convention
        assert_eq!(
            store.frequency_class(&c).unwrap(),
            FrequencyClass::Uncommon
        );

        let mut store = SemanticStore::new();
        for (w, n) in [("a", 1), ("b", 1), ("c", 1), ("d", 100)] {
            store
                .store_chunk(chunk(w, &format!("{w}word"), n, 0))
                .unwrap();
        }
        let top = store.get("d").unwrap().clone();
        let low = store.get("a").unwrap().clone();
        assert_eq!(store.frequency_class(&top).unwrap(), FrequencyClass::Common);
        assert_eq!(
            store.frequency_class(&low).unwrap(),
            FrequencyClass::Uncommon
        );
        assert_eq!(
            SemanticStore::new().frequency_class(&top),
            Err(SemanticError::EmptyStore)
        );
    }

    #[test]
    fn raising_tau_success_never_creates_success() {
        let mut base = SemanticStore::new();
        base.store_chunk(chunk("tripe", "tripe", 3, 50)).unwrap();
        let cue = RetrievalCue {
            required: [(Symbol::id("word"), Symbol::id("tripe"))].into(),
            ..Default::default()
        };
        let mut last_was_success = true;
        for tau in [-2.0, -1.0, 0.0, 0.5, 1.0, 2.0] {
            let mut store = SemanticStore::new();
            store.store_chunk(chunk("tripe", "tripe", 3, 50)).unwrap();
            let params = RetrievalParams {
                tau_success: tau,
                tau_partial: -3.0,
                d: 0.5,
            };
            let (result, _) = store.retrieve(&cue, 60, &params).unwrap();
            let success = matches!(result, RetrievalResult::Success(_));
            assert!(
                !(success && !last_was_success),
                "raising tau converted failure into success"
            );
            last_was_success = success;
        }
    }

    #[test]
    fn seed_format_round_trip() {
        let text = "tripe word=tripe first=t length=5 @n_accesses=1 @last=395\n\
                    # comment line\n\
                    slate word=slate first=s length=5 @n_accesses=6 @last=330\n";
        let chunks = parse_seed(text).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].id, "tripe");
        assert_eq!(chunks[0].meta.last_access_cycle, 395);
        assert_eq!(
            chunks[1].slots[&Symbol::id("length")],
            Symbol::int(5)
        );
        assert!(parse_seed("bad-line-without-slots @n_accesses=2").is_err());
    }
}
