//! Recursive-descent parser for the rule language.
//!
//! ```text
//! rule NAME [utility REAL] [scope any] {
//!   when:
//!     (TERM ^ATTR TERM [^ATTR TERM ...])     positive pattern (multi-attr
//!                                            groups share the id term)
//!     -(TERM ^ATTR TERM ...)                  negated pattern
//!     -{ PATTERN+ TEST* }                     negated conjunction
//!     test(TERM OP TERM)                      OP: = != < > <= >=
//!   then:
//!     add PATTERN | remove PATTERN
//!     command MODULE PATTERN                  MODULE: semantic episodic
//!                                             motor wm perception procedural
//!     result [add|remove] PATTERN
//! }
//! ```
//!
//! `#` starts a comment. Terms are identifiers, numbers, quoted strings, or
//! `<var>`. Every variable used in an action must be bound by a positive
//! condition, except a command pattern's id term, which names the command
//! node the kernel mints.

use std::collections::BTreeSet;
use std::fmt;

use crate::symbols::Symbol;

use super::{
    Action, ActionKind, Condition, MatchScope, ModuleKind, NegItem, Origin, Production, Term,
    TestCond, TestOp, TriplePattern,
};

/// A parse problem with its source position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    Str(String),
    Var(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Caret,
    Colon,
    Minus,
    Op(TestOp),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(i) => write!(f, "`{i}`"),
            Tok::Real(r) => write!(f, "`{r}`"),
            Tok::Str(s) => write!(f, "{s:?}"),
            Tok::Var(v) => write!(f, "`<{v}>`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBrace => write!(f, "`{{`"),
            Tok::RBrace => write!(f, "`}}`"),
            Tok::Caret => write!(f, "`^`"),
            Tok::Colon => write!(f, "`:`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Op(op) => write!(f, "`{op}`"),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

type Spanned = (Tok, usize, usize);

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = *self.src.get(self.pos)?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<u8> {
        self.src.get(self.pos + 1).copied()
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, Diagnostic> {
        let mut out = Vec::new();
        loop {
            while let Some(b) = self.peek() {
                if b == b'#' {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                } else if b.is_ascii_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(b) = self.peek() else {
                return Ok(out);
            };
            let tok = match b {
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b'{' => {
                    self.bump();
                    Tok::LBrace
                }
                b'}' => {
                    self.bump();
                    Tok::RBrace
                }
                b'^' => {
                    self.bump();
                    Tok::Caret
                }
                b':' => {
                    self.bump();
                    Tok::Colon
                }
                b'=' => {
                    self.bump();
                    Tok::Op(TestOp::Eq)
                }
                b'!' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Op(TestOp::Ne)
                    } else {
                        return Err(Diagnostic {
                            line,
                            col,
                            message: "expected `!=`".into(),
                        });
                    }
                }
                b'>' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Op(TestOp::Ge)
                    } else {
                        Tok::Op(TestOp::Gt)
                    }
                }
                b'<' => {
                    // `<name>` is a variable; otherwise a comparison.
                    if self
                        .peek2()
                        .map(|c| c.is_ascii_alphabetic() || c == b'_')
                        .unwrap_or(false)
                    {
                        self.bump();
                        let mut name = String::new();
                        while let Some(c) = self.peek() {
                            if c.is_ascii_alphanumeric() || c == b'_' || c == b'-' {
                                name.push(c as char);
                                self.bump();
                            } else {
                                break;
                            }
                        }
                        if self.peek() == Some(b'>') {
                            self.bump();
                            Tok::Var(name)
                        } else {
                            return Err(Diagnostic {
                                line,
                                col,
                                message: format!("unterminated variable `<{name}`"),
                            });
                        }
                    } else {
                        self.bump();
                        if self.peek() == Some(b'=') {
                            self.bump();
                            Tok::Op(TestOp::Le)
                        } else {
                            Tok::Op(TestOp::Lt)
                        }
                    }
                }
                b'"' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            Some(b'"') => break,
                            Some(b'\\') => match self.bump() {
                                Some(b'n') => s.push('\n'),
                                Some(b'"') => s.push('"'),
                                Some(b'\\') => s.push('\\'),
                                other => {
                                    return Err(Diagnostic {
                                        line,
                                        col,
                                        message: format!(
                                            "bad escape {:?}",
                                            other.map(|c| c as char)
                                        ),
                                    })
                                }
                            },
                            Some(c) => s.push(c as char),
                            None => {
                                return Err(Diagnostic {
                                    line,
                                    col,
                                    message: "unterminated string".into(),
                                })
                            }
                        }
                    }
                    Tok::Str(s)
                }
                b'-' => {
                    if self.peek2().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                        self.lex_number(line, col)?
                    } else {
                        self.bump();
                        Tok::Minus
                    }
                }
                c if c.is_ascii_digit() => self.lex_number(line, col)?,
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let mut name = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == b'_' || c == b'-' {
                            name.push(c as char);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(name)
                }
                other => {
                    return Err(Diagnostic {
                        line,
                        col,
                        message: format!("unexpected character {:?}", other as char),
                    })
                }
            };
            out.push((tok, line, col));
        }
    }

    fn lex_number(&mut self, line: usize, col: usize) -> Result<Tok, Diagnostic> {
        let mut text = String::new();
        if self.peek() == Some(b'-') {
            text.push('-');
            self.bump();
        }
        let mut is_real = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                text.push(c as char);
                self.bump();
            } else if c == b'.' && !is_real && self.peek2().map(|d| d.is_ascii_digit()).unwrap_or(false)
            {
                is_real = true;
                text.push('.');
                self.bump();
            } else if (c == b'e' || c == b'E') && self.peek2().map(|d| d.is_ascii_digit() || d == b'-').unwrap_or(false) {
                is_real = true;
                text.push(c as char);
                self.bump();
                if self.peek() == Some(b'-') {
                    text.push('-');
                    self.bump();
                }
            } else {
                break;
            }
        }
        if is_real {
            text.parse::<f64>()
                .map(Tok::Real)
                .map_err(|_| Diagnostic {
                    line,
                    col,
                    message: format!("bad real literal `{text}`"),
                })
        } else {
            text.parse::<i64>().map(Tok::Int).map_err(|_| Diagnostic {
                line,
                col,
                message: format!("bad integer literal `{text}`"),
            })
        }
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    /// Extra positives from a multi-attribute group, drained by the caller.
    pending_pos: Vec<TriplePattern>,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _, _)| t)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|(_, l, c)| (*l, *c))
            .unwrap_or((1, 1))
    }

    fn err(&self, expected: &str) -> Diagnostic {
        let (line, col) = self.here();
        let found = self
            .peek()
            .map(|t| t.to_string())
            .unwrap_or_else(|| "end of input".into());
        Diagnostic {
            line,
            col,
            message: format!("expected {expected}, found {found}"),
        }
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok, expected: &str) -> Result<(), Diagnostic> {
        if self.peek() == Some(tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(expected))
        }
    }

    fn eat_kw(&mut self, kw: &str) -> Result<(), Diagnostic> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(&format!("`{kw}`"))),
        }
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn ident(&mut self, expected: &str) -> Result<String, Diagnostic> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(expected)),
        }
    }

    fn term(&mut self) -> Result<Term, Diagnostic> {
        match self.bump() {
            Some(Tok::Ident(s)) => Ok(Term::Const(Symbol::id(&s))),
            Some(Tok::Int(i)) => Ok(Term::Const(Symbol::int(i))),
            Some(Tok::Real(r)) => Ok(Term::Const(Symbol::real(r))),
            Some(Tok::Str(s)) => Ok(Term::Const(Symbol::Str(s))),
            Some(Tok::Var(v)) => Ok(Term::Var(v)),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("a term"))
            }
        }
    }

    /// `( TERM (^ATTR TERM)+ )` — returns one pattern per attribute pair.
    fn pattern_group(&mut self) -> Result<Vec<TriplePattern>, Diagnostic> {
        self.eat(&Tok::LParen, "`(`")?;
        let id = self.term()?;
        let mut out = Vec::new();
        loop {
            self.eat(&Tok::Caret, "`^`")?;
            let attr = self.term()?;
            let value = self.term()?;
            out.push(TriplePattern {
                id: id.clone(),
                attr,
                value,
            });
            match self.peek() {
                Some(Tok::RParen) => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(Tok::Caret) => continue,
                _ => return Err(self.err("`^` or `)`")),
            }
        }
    }

    fn test_cond(&mut self) -> Result<TestCond, Diagnostic> {
        self.eat_kw("test")?;
        self.eat(&Tok::LParen, "`(` after `test`")?;
        let left = self.term()?;
        let op = match self.bump() {
            Some(Tok::Op(op)) => op,
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.err("a comparison operator"));
            }
        };
        let right = self.term()?;
        self.eat(&Tok::RParen, "`)`")?;
        Ok(TestCond { left, op, right })
    }

    fn condition(&mut self) -> Result<Condition, Diagnostic> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                match self.peek() {
                    Some(Tok::LParen) => {
                        let pats = self.pattern_group()?;
                        Ok(Condition::Neg(
                            pats.into_iter().map(NegItem::Pattern).collect(),
                        ))
                    }
                    Some(Tok::LBrace) => {
                        self.pos += 1;
                        let mut items = Vec::new();
                        loop {
                            match self.peek() {
                                Some(Tok::RBrace) => {
                                    self.pos += 1;
                                    break;
                                }
                                Some(Tok::LParen) => {
                                    for p in self.pattern_group()? {
                                        items.push(NegItem::Pattern(p));
                                    }
                                }
                                Some(Tok::Ident(s)) if s == "test" => {
                                    items.push(NegItem::Test(self.test_cond()?));
                                }
                                _ => return Err(self.err("a pattern, `test(...)`, or `}`")),
                            }
                        }
                        if items.is_empty() {
                            return Err(self.err("a nonempty negated group"));
                        }
                        Ok(Condition::Neg(items))
                    }
                    _ => Err(self.err("`(` or `{` after `-`")),
                }
            }
            Some(Tok::Ident(s)) if s == "test" => Ok(Condition::Test(self.test_cond()?)),
            Some(Tok::LParen) => {
                let pats = self.pattern_group()?;
                let mut it = pats.into_iter();
                let first = Condition::Pos(it.next().expect("group is nonempty"));
                // Multi-attr positive groups expand to several conditions;
                // caller flattens via `conditions()`.
                self.pending_pos = it.collect();
                Ok(first)
            }
            _ => Err(self.err("a condition")),
        }
    }

    fn actions(&mut self) -> Result<Vec<Action>, Diagnostic> {
        let mut out = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::Ident(kw)) if kw == "add" => {
                    self.pos += 1;
                    for p in self.pattern_group()? {
                        out.push(Action::Add(p));
                    }
                }
                Some(Tok::Ident(kw)) if kw == "remove" => {
                    self.pos += 1;
                    for p in self.pattern_group()? {
                        out.push(Action::Remove(p));
                    }
                }
                Some(Tok::Ident(kw)) if kw == "result" => {
                    self.pos += 1;
                    let kind = if self.at_kw("remove") {
                        self.pos += 1;
                        ActionKind::Remove
                    } else {
                        if self.at_kw("add") {
                            self.pos += 1;
                        }
                        ActionKind::Add
                    };
                    for pattern in self.pattern_group()? {
                        out.push(Action::Result { kind, pattern });
                    }
                }
                Some(Tok::Ident(kw)) if kw == "command" => {
                    self.pos += 1;
                    let (line, col) = self.here();
                    let module_name = self.ident("a module name")?;
                    let module = ModuleKind::parse(&module_name).ok_or(Diagnostic {
                        line,
                        col,
                        message: format!("unknown module `{module_name}`"),
                    })?;
                    let (line, col) = self.here();
                    let pats = self.pattern_group()?;
                    let id = pats[0].id.clone();
                    let mut slots = Vec::new();
                    for p in &pats {
                        if p.id != id {
                            return Err(Diagnostic {
                                line,
                                col,
                                message: "command pattern must use a single id term".into(),
                            });
                        }
                        let attr = match &p.attr {
                            Term::Const(s) => s.clone(),
                            Term::Var(v) => {
                                return Err(Diagnostic {
                                    line,
                                    col,
                                    message: format!(
                                        "command slot attributes must be constants, got <{v}>"
                                    ),
                                })
                            }
                        };
                        slots.push((attr, p.value.clone()));
                    }
                    out.push(Action::Command { module, id, slots });
                }
                _ => {
                    if out.is_empty() {
                        return Err(self.err("an action (`add`, `remove`, `command`, `result`)"));
                    }
                    return Ok(out);
                }
            }
        }
    }

    fn rule(&mut self) -> Result<Production, Diagnostic> {
        self.eat_kw("rule")?;
        let name = self.ident("a rule name")?;
        let mut utility = 0.0;
        if self.at_kw("utility") {
            self.pos += 1;
            utility = match self.bump() {
                Some(Tok::Real(r)) => r,
                Some(Tok::Int(i)) => i as f64,
                _ => {
                    self.pos = self.pos.saturating_sub(1);
                    return Err(self.err("a utility value"));
                }
            };
        }
        let mut match_scope = MatchScope::LocalContext;
        if self.at_kw("scope") {
            self.pos += 1;
            let (line, col) = self.here();
            let s = self.ident("`local` or `any`")?;
            match_scope = match s.as_str() {
                "local" => MatchScope::LocalContext,
                "any" => MatchScope::Any,
                other => {
                    return Err(Diagnostic {
                        line,
                        col,
                        message: format!("expected `local` or `any`, found `{other}`"),
                    })
                }
            };
        }
        self.eat(&Tok::LBrace, "`{`")?;
        self.eat_kw("when")?;
        self.eat(&Tok::Colon, "`:`")?;
        let mut conditions = Vec::new();
        loop {
            let c = self.condition()?;
            conditions.push(c);
            conditions.extend(self.pending_pos.drain(..).map(Condition::Pos));
            if self.at_kw("then") {
                break;
            }
            match self.peek() {
                Some(Tok::LParen) | Some(Tok::Minus) => continue,
                Some(Tok::Ident(s)) if s == "test" => continue,
                _ => return Err(self.err("a condition or `then`")),
            }
        }
        self.eat_kw("then")?;
        self.eat(&Tok::Colon, "`:`")?;
        let actions = self.actions()?;
        self.eat(&Tok::RBrace, "`}`")?;
        Ok(Production {
            name,
            utility,
            conditions,
            actions,
            origin: Origin::HandCoded,
            match_scope,
        })
    }
}

/// Parse a rule file. Returns all productions or the collected diagnostics.
pub fn parse_rules(text: &str) -> Result<Vec<Production>, Vec<Diagnostic>> {
    let toks = Lexer::new(text).tokens().map_err(|d| vec![d])?;
    let mut parser = Parser {
        toks,
        pos: 0,
        pending_pos: Vec::new(),
    };
    let mut rules: Vec<Production> = Vec::new();
    let mut diags = Vec::new();
    while parser.peek().is_some() {
        let start = parser.pos;
        match parser.rule() {
            Ok(r) => {
                let (line, col) = parser
                    .toks
                    .get(start)
                    .map(|(_, l, c)| (*l, *c))
                    .unwrap_or((1, 1));
                if rules.iter().any(|x| x.name == r.name) {
                    diags.push(Diagnostic {
                        line,
                        col,
                        message: format!("duplicate rule name `{}`", r.name),
                    });
                } else {
                    if let Err(msg) = validate(&r) {
                        diags.push(Diagnostic { line, col, message: msg });
                    }
                    rules.push(r);
                }
            }
            Err(d) => {
                diags.push(d);
                // Recover at the next `rule` keyword.
                parser.pos += 1;
                while let Some(t) = parser.peek() {
                    if matches!(t, Tok::Ident(s) if s == "rule") {
                        break;
                    }
                    parser.pos += 1;
                }
            }
        }
    }
    if diags.is_empty() {
        Ok(rules)
    } else {
        Err(diags)
    }
}

/// Static checks: action variables bound by positives, tests ordered after
/// their binders, finite utility.
fn validate(rule: &Production) -> Result<(), String> {
    if !rule.utility.is_finite() {
        return Err(format!("rule `{}` has a non-finite utility", rule.name));
    }
    let mut bound: BTreeSet<&str> = BTreeSet::new();
    for c in &rule.conditions {
        match c {
            Condition::Pos(p) => {
                for t in [&p.id, &p.attr, &p.value] {
                    if let Term::Var(v) = t {
                        bound.insert(v);
                    }
                }
            }
            Condition::Test(t) => {
                for term in [&t.left, &t.right] {
                    if let Term::Var(v) = term {
                        if !bound.contains(v.as_str()) {
                            return Err(format!(
                                "rule `{}`: test references <{v}> before any positive condition binds it",
                                rule.name
                            ));
                        }
                    }
                }
            }
            Condition::Neg(items) => {
                // Group-local variables are existential; tests inside the
                // group may use outer or group-local bindings.
                let mut local: BTreeSet<&str> = bound.clone();
                for item in items {
                    if let NegItem::Pattern(p) = item {
                        for t in [&p.id, &p.attr, &p.value] {
                            if let Term::Var(v) = t {
                                local.insert(v);
                            }
                        }
                    }
                }
                for item in items {
                    if let NegItem::Test(t) = item {
                        for term in [&t.left, &t.right] {
                            if let Term::Var(v) = term {
                                if !local.contains(v.as_str()) {
                                    return Err(format!(
                                        "rule `{}`: negated test references unbound <{v}>",
                                        rule.name
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let check = |t: &Term, what: &str| -> Result<(), String> {
        if let Term::Var(v) = t {
            if !bound.contains(v.as_str()) {
                return Err(format!(
                    "rule `{}`: {what} uses <{v}> which no positive condition binds",
                    rule.name
                ));
            }
        }
        Ok(())
    };
    for a in &rule.actions {
        match a {
            Action::Add(p) | Action::Remove(p) | Action::Result { pattern: p, .. } => {
                check(&p.id, "action")?;
                check(&p.attr, "action")?;
                check(&p.value, "action")?;
            }
            Action::Command { slots, .. } => {
                // The command id is the minted node's placeholder.
                for (_, v) in slots {
                    check(v, "command slot")?;
                }
            }
        }
    }
    Ok(())
}
