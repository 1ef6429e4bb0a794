//! Symbols and element identities.
//!
//! Working memory is a graph of (id ^attribute value) triples. Attribute and
//! value slots hold [`Symbol`]s (interned identifiers, strings, integers,
//! reals); id slots and element-valued slots hold [`ElementId`]s.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

/// Identity of a working-memory element (a graph node).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementId(pub u64);

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// An interned identifier token. Equal text yields an equal token for the
/// lifetime of the process.
#[derive(Debug, Clone)]
pub struct Atom {
    id: u32,
    text: Arc<str>,
}

impl Atom {
    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn token(&self) -> u32 {
        self.id
    }
}

impl PartialEq for Atom {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl Eq for Atom {}

impl std::hash::Hash for Atom {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.id.hash(state);
    }
}

impl PartialOrd for Atom {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Atom {
    fn cmp(&self, other: &Self) -> Ordering {
        self.text.cmp(&other.text)
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

struct Interner {
    by_text: HashMap<Arc<str>, u32>,
    texts: Vec<Arc<str>>,
}

fn interner() -> &'static Mutex<Interner> {
    static INTERNER: OnceLock<Mutex<Interner>> = OnceLock::new();
    INTERNER.get_or_init(|| {
        Mutex::new(Interner {
            by_text: HashMap::new(),
            texts: Vec::new(),
        })
    })
}

/// Intern `text`, returning its stable token.
pub fn atom(text: &str) -> Atom {
    let mut it = interner().lock().expect("interner poisoned");
    if let Some(&id) = it.by_text.get(text) {
        return Atom {
            id,
            text: it.texts[id as usize].clone(),
        };
    }
    let arc: Arc<str> = Arc::from(text);
    let id = it.texts.len() as u32;
    it.texts.push(arc.clone());
    it.by_text.insert(arc.clone(), id);
    Atom { id, text: arc }
}

/// A scalar symbol: interned identifier, string literal, integer, or real.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Id(Atom),
    Str(String),
    Int(i64),
    Real(Real),
}

impl Symbol {
    pub fn id(text: &str) -> Symbol {
        Symbol::Id(atom(text))
    }

    pub fn int(v: i64) -> Symbol {
        Symbol::Int(v)
    }

    pub fn real(v: f64) -> Symbol {
        Symbol::Real(Real(v))
    }

    pub fn str(v: &str) -> Symbol {
        Symbol::Str(v.to_string())
    }

    /// Numeric view, for relational tests. Integers widen to f64.
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Symbol::Int(i) => Some(*i as f64),
            Symbol::Real(r) => Some(r.0),
            _ => None,
        }
    }

    pub fn as_ident(&self) -> Option<&str> {
        match self {
            Symbol::Id(a) => Some(a.as_str()),
            _ => None,
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Id(a) => write!(f, "{a}"),
            Symbol::Str(s) => write!(f, "{s:?}"),
            Symbol::Int(i) => write!(f, "{i}"),
            Symbol::Real(r) => write!(f, "{}", r.0),
        }
    }
}

/// An f64 with bitwise equality/hashing and total ordering, so symbols can
/// live in sets and maps.
#[derive(Debug, Clone, Copy)]
pub struct Real(pub f64);

impl PartialEq for Real {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}
impl Eq for Real {}

impl std::hash::Hash for Real {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl PartialOrd for Real {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Real {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// The value slot of a triple: a scalar symbol or a link to another element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Sym(Symbol),
    Elem(ElementId),
}

impl Value {
    pub fn sym(s: Symbol) -> Value {
        Value::Sym(s)
    }

    pub fn elem(e: ElementId) -> Value {
        Value::Elem(e)
    }

    pub fn as_elem(&self) -> Option<ElementId> {
        match self {
            Value::Elem(e) => Some(*e),
            Value::Sym(_) => None,
        }
    }

    pub fn as_sym(&self) -> Option<&Symbol> {
        match self {
            Value::Sym(s) => Some(s),
            Value::Elem(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Sym(s) => write!(f, "{s}"),
            Value::Elem(e) => write!(f, "{e}"),
        }
    }
}

impl From<Symbol> for Value {
    fn from(s: Symbol) -> Value {
        Value::Sym(s)
    }
}

impl From<ElementId> for Value {
    fn from(e: ElementId) -> Value {
        Value::Elem(e)
    }
}
