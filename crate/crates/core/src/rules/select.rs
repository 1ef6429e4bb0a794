//! Action selection: a single instantiation per cycle, or an impasse.

use rand::Rng;

use crate::symbols::Symbol;
use crate::wm::ContextId;

use super::{Impasse, ImpasseKind, Instantiation};

/// Outcome of selection over a candidate set.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Chosen(Instantiation),
    Blocked(Impasse),
}

/// Select one action. With no candidates: a no-change impasse. With a unique
/// utility maximum at least `epsilon` above the runner-up: that candidate.
/// Otherwise every candidate within `epsilon` of the maximum ties.
///
/// `epsilon = 0` never ties; exact-utility ties are then broken uniformly
/// with the seeded rng, keeping runs reproducible.
pub fn select_action<R: Rng>(
    candidates: &[Instantiation],
    epsilon: f64,
    ctx: ContextId,
    rng: &mut R,
) -> Selection {
    if candidates.is_empty() {
        return Selection::Blocked(Impasse {
            kind: ImpasseKind::NoChange,
            context: ctx,
            candidates: Vec::new(),
            detail: vec![(Symbol::id("impasse"), Symbol::id("no-change"))],
        });
    }
    let max = candidates
        .iter()
        .map(|c| c.utility)
        .fold(f64::NEG_INFINITY, f64::max);
    let within: Vec<&Instantiation> = candidates
        .iter()
        .filter(|c| max - c.utility < epsilon)
        .collect();
    if within.len() >= 2 {
        return Selection::Blocked(Impasse {
            kind: ImpasseKind::Tie,
            context: ctx,
            candidates: within.into_iter().cloned().collect(),
            detail: vec![(Symbol::id("impasse"), Symbol::id("tie"))],
        });
    }
    let top: Vec<&Instantiation> = candidates.iter().filter(|c| c.utility == max).collect();
    let chosen = if top.len() == 1 {
        top[0]
    } else {
        top[rng.gen_range(0..top.len())]
    };
    Selection::Chosen(chosen.clone())
}
