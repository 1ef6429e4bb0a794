//! A desk-scale cognitive-architecture kernel.
//!
//! The cognitive cycle matches production rules against working memory,
//! selects a single action, applies it, services module buffers (semantic
//! retrieval, episodic memory, motor, imagination), and records the real
//! state episodically. Three extensions make metacognition ordinary rule
//! work: per-module process-state buffers mirrored into working memory,
//! an automatic episodic store with reconstruction, and tagged hypothetical
//! contexts that keep imagined states from contaminating reality.

pub mod symbols;
pub mod wm;
pub mod hash;
pub mod rules;
pub mod process;
pub mod semantic;
pub mod episodic;
pub mod env;
pub mod kernel;
pub mod scenario;
pub mod oracle;

pub use symbols::{atom, Atom, ElementId, Real, Symbol, Value};
pub use wm::{Context, ContextId, ContextKind, DeltaReport, Stance, Triple, Wme, WmError, WorkingMemory, REAL};
pub use hash::{hash_triples, state_hash, ScopeFilter, EMPTY_STATE_HASH};
