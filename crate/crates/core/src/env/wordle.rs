//! Wordle: guess a five-letter secret; feedback is the standard two-pass
//! green/yellow/gray scoring.

use thiserror::Error;

use crate::hash::ScopeFilter;
use crate::symbols::Symbol;

use super::{ActReport, Environment, MotorCommand, Percept, PerceptNode, PerceptValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LetterScore {
    Green,
    Yellow,
    Gray,
}

impl LetterScore {
    pub fn as_symbol(self) -> Symbol {
        Symbol::id(match self {
            LetterScore::Green => "green",
            LetterScore::Yellow => "yellow",
            LetterScore::Gray => "gray",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("words must be 5 lowercase letters, got {0:?}")]
    BadLength(String),
}

/// Two-pass scoring: greens first, then yellows consume what is left of the
/// secret's letter multiset, the rest gray.
pub fn score_guess(guess: &str, secret: &str) -> Result<[LetterScore; 5], ScoreError> {
    let g: Vec<char> = guess.chars().collect();
    let s: Vec<char> = secret.chars().collect();
    for (word, chars) in [(guess, &g), (secret, &s)] {
        if chars.len() != 5 || chars.iter().any(|c| !c.is_ascii_lowercase()) {
            return Err(ScoreError::BadLength(word.to_string()));
        }
    }
    let mut out = [LetterScore::Gray; 5];
    let mut remaining: Vec<char> = Vec::new();
    for i in 0..5 {
        if g[i] == s[i] {
            out[i] = LetterScore::Green;
        } else {
            remaining.push(s[i]);
        }
    }
    for i in 0..5 {
        if out[i] == LetterScore::Green {
            continue;
        }
        if let Some(pos) = remaining.iter().position(|c| *c == g[i]) {
            remaining.remove(pos);
            out[i] = LetterScore::Yellow;
        }
    }
    Ok(out)
}

pub struct WordleEnv {
    secret: String,
    guesses: Vec<(String, [LetterScore; 5])>,
    solved: bool,
    max_guesses: usize,
}

impl WordleEnv {
    pub fn new(secret: &str, max_guesses: usize) -> WordleEnv {
        WordleEnv {
            secret: secret.to_string(),
            guesses: Vec::new(),
            solved: false,
            max_guesses,
        }
    }

    pub fn guesses_made(&self) -> usize {
        self.guesses.len()
    }

    pub fn solved(&self) -> bool {
        self.solved
    }
}

impl Environment for WordleEnv {
    fn label(&self) -> &'static str {
        "wordle"
    }

    fn perceive(&mut self) -> Percept {
        let mut world = PerceptNode::new("world")
            .sym("guess-count", Symbol::int(self.guesses.len() as i64))
            .sym(
                "solved",
                Symbol::id(if self.solved { "true" } else { "false" }),
            );
        for (i, (word, scores)) in self.guesses.iter().enumerate() {
            let mut g = PerceptNode::new(&format!("guess-{i}"))
                .sym("word", Symbol::id(word))
                .sym("turn", Symbol::int(i as i64 + 1));
            for (pos, sc) in scores.iter().enumerate() {
                g = g.sym(&format!("at-{}", pos + 1), sc.as_symbol());
            }
            world = world.node("guess", g);
        }
        Percept {
            attrs: vec![
                (Symbol::id("game"), PerceptValue::Sym(Symbol::id("wordle"))),
                (
                    Symbol::id("task-state"),
                    PerceptValue::Sym(Symbol::id(if self.solved || self.guesses.len() >= self.max_guesses {
                        "done"
                    } else {
                        "running"
                    })),
                ),
                (Symbol::id("world"), PerceptValue::Node(world)),
            ],
        }
    }

    fn act(&mut self, cmd: &MotorCommand) -> ActReport {
        if cmd.verb != Symbol::id("guess") {
            return ActReport::illegal("unknown verb");
        }
        if self.solved || self.guesses.len() >= self.max_guesses {
            return ActReport::illegal("game over");
        }
        let Some(word) = cmd.arg("word").and_then(|s| s.as_ident().map(String::from)) else {
            return ActReport::illegal("guess requires a word");
        };
        match score_guess(&word, &self.secret) {
            Ok(scores) => {
                if scores.iter().all(|s| *s == LetterScore::Green) {
                    self.solved = true;
                }
                self.guesses.push((word.clone(), scores));
                ActReport::ok(vec![format!("guessed {word}")])
            }
            Err(e) => ActReport::illegal(&e.to_string()),
        }
    }

    fn episode_index(&self) -> usize {
        0
    }

    fn goal_reached(&self) -> bool {
        self.solved
    }

    fn world_scope(&self) -> ScopeFilter {
        ScopeFilter::attrs(
            [
                "world",
                "guess",
                "guess-count",
                "solved",
                "word",
                "turn",
                "at-1",
                "at-2",
                "at-3",
                "at-4",
                "at-5",
            ]
            .map(Symbol::id),
        )
    }

    fn metrics(&self) -> serde_json::Value {
        serde_json::json!({
            "guesses": self.guesses.len(),
            "solved": self.solved,
            "history": self.guesses.iter().map(|(w, _)| w.clone()).collect::<Vec<_>>(),
        })
    }
}
