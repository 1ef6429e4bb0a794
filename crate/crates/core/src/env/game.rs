//! Two-player game fixture: positions, legal moves, successors, and material
//! balances come from a data file, so the kernel needs no game-rules engine.
//! The percept carries each legal move's successor evaluation inputs;
//! comparing them is scenario-rule knowledge, not environment knowledge.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::hash::ScopeFilter;
use crate::symbols::Symbol;

use super::{ActReport, Environment, MotorCommand, Percept, PerceptNode, PerceptValue};

#[derive(Debug, Clone, PartialEq)]
pub struct GameMove {
    pub name: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GamePosition {
    pub id: String,
    pub material_balance: i64,
    pub legal_moves: Vec<GameMove>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("bad fixture: {0}")]
    BadFixture(String),
    #[error("move {0} is not legal in {1}")]
    IllegalMove(String, String),
}

/// The full fixture: a position table plus the starting position.
#[derive(Debug, Clone, PartialEq)]
pub struct GameFixture {
    pub start: String,
    pub positions: BTreeMap<String, GamePosition>,
}

impl GameFixture {
    pub fn from_json(text: &str) -> Result<GameFixture, GameError> {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| GameError::BadFixture(e.to_string()))?;
        let start = v["start"]
            .as_str()
            .ok_or_else(|| GameError::BadFixture("missing start".into()))?
            .to_string();
        let mut positions = BTreeMap::new();
        let table = v["positions"]
            .as_object()
            .ok_or_else(|| GameError::BadFixture("missing positions".into()))?;
        for (id, p) in table {
            let material_balance = p["material"]
                .as_i64()
                .ok_or_else(|| GameError::BadFixture(format!("{id}: missing material")))?;
            let mut legal_moves = Vec::new();
            for m in p["moves"].as_array().unwrap_or(&Vec::new()) {
                legal_moves.push(GameMove {
                    name: m["name"]
                        .as_str()
                        .ok_or_else(|| GameError::BadFixture(format!("{id}: bad move name")))?
                        .to_string(),
                    to: m["to"]
                        .as_str()
                        .ok_or_else(|| GameError::BadFixture(format!("{id}: bad move target")))?
                        .to_string(),
                });
            }
            positions.insert(
                id.clone(),
                GamePosition {
                    id: id.clone(),
                    material_balance,
                    legal_moves,
                },
            );
        }
        let fixture = GameFixture { start, positions };
        fixture.validate()?;
        Ok(fixture)
    }

    fn validate(&self) -> Result<(), GameError> {
        if !self.positions.contains_key(&self.start) {
            return Err(GameError::BadFixture(format!(
                "start position {} is not in the table",
                self.start
            )));
        }
        for p in self.positions.values() {
            for m in &p.legal_moves {
                if !self.positions.contains_key(&m.to) {
                    return Err(GameError::BadFixture(format!(
                        "{}: move {} leads to unknown position {}",
                        p.id, m.name, m.to
                    )));
                }
            }
        }
        Ok(())
    }

    /// Successor of `pos` under `mv`. Pure: no environment state is touched,
    /// so hypothetical reasoning can use it freely.
    pub fn transition<'a>(
        &'a self,
        pos: &GamePosition,
        mv: &str,
    ) -> Result<&'a GamePosition, GameError> {
        let m = pos
            .legal_moves
            .iter()
            .find(|m| m.name == mv)
            .ok_or_else(|| GameError::IllegalMove(mv.to_string(), pos.id.clone()))?;
        Ok(&self.positions[&m.to])
    }
}

pub struct GameEnv {
    fixture: GameFixture,
    current: String,
    episode: usize,
    episodes_total: usize,
    moves: Vec<Vec<String>>,
}

impl GameEnv {
    pub fn new(fixture: GameFixture, episodes: usize) -> GameEnv {
        let current = fixture.start.clone();
        GameEnv {
            fixture,
            current,
            episode: 0,
            episodes_total: episodes.max(1),
            moves: vec![Vec::new()],
        }
    }

    pub fn fixture(&self) -> &GameFixture {
        &self.fixture
    }

    pub fn moves_per_episode(&self) -> &[Vec<String>] {
        &self.moves
    }

    fn position(&self) -> &GamePosition {
        &self.fixture.positions[&self.current]
    }

    fn terminal(&self) -> bool {
        self.position().legal_moves.is_empty()
    }
}

impl Environment for GameEnv {
    fn label(&self) -> &'static str {
        "game"
    }

    fn perceive(&mut self) -> Percept {
        let pos = self.position();
        let mut world = PerceptNode::new("world")
            .sym("position-name", Symbol::id(&pos.id))
            .sym("material-balance", Symbol::int(pos.material_balance));
        for m in &pos.legal_moves {
            let succ = &self.fixture.positions[&m.to];
            world = world.node(
                "legal",
                PerceptNode::new(&format!("move-{}", m.name))
                    .sym("name", Symbol::id(&m.name))
                    .node(
                        "leads-to",
                        PerceptNode::new(&format!("succ-{}", m.to))
                            .sym("position-name", Symbol::id(&succ.id))
                            .sym("material-balance", Symbol::int(succ.material_balance)),
                    ),
            );
        }
        Percept {
            attrs: vec![
                (Symbol::id("game"), PerceptValue::Sym(Symbol::id("fixture"))),
                (
                    Symbol::id("task-state"),
                    PerceptValue::Sym(Symbol::id(if self.terminal() { "done" } else { "running" })),
                ),
                (Symbol::id("world"), PerceptValue::Node(world)),
            ],
        }
    }

    fn act(&mut self, cmd: &MotorCommand) -> ActReport {
        if cmd.verb != Symbol::id("move") {
            return ActReport::illegal("unknown verb");
        }
        let Some(name) = cmd.arg("name").and_then(|s| s.as_ident().map(String::from)) else {
            return ActReport::illegal("move requires a name");
        };
        let next = match self.fixture.transition(self.position(), &name) {
            Ok(p) => p.id.clone(),
            Err(e) => return ActReport::illegal(&e.to_string()),
        };
        self.current = next;
        self.moves.last_mut().expect("episode").push(name.clone());
        let mut changed = vec![format!("moved {name}")];
        if self.terminal() && self.episode + 1 < self.episodes_total {
            self.episode += 1;
            self.current = self.fixture.start.clone();
            self.moves.push(Vec::new());
            changed.push("episode reset".into());
        }
        ActReport::ok(changed)
    }

    fn episode_index(&self) -> usize {
        self.episode
    }

    fn goal_reached(&self) -> bool {
        self.episode + 1 == self.episodes_total && self.terminal()
    }

    fn world_scope(&self) -> ScopeFilter {
        ScopeFilter::attrs(
            ["world", "position-name", "material-balance", "legal", "name", "leads-to"]
                .map(Symbol::id),
        )
    }

    fn metrics(&self) -> serde_json::Value {
        serde_json::json!({
            "moves_per_episode": self.moves,
            "episodes": self.episodes_total,
        })
    }
}

/// The three-way-tie fixture used by tests: one capture gains material.
pub fn tie_fixture() -> GameFixture {
    GameFixture::from_json(
        r#"{
        "start": "p0",
        "positions": {
            "p0": {"material": 0, "moves": [
                {"name": "move-a", "to": "p-a"},
                {"name": "move-b", "to": "p-b"},
                {"name": "move-c", "to": "p-c"}
            ]},
            "p-a": {"material": 0, "moves": []},
            "p-b": {"material": 1, "moves": []},
            "p-c": {"material": 0, "moves": []}
        }
    }"#,
    )
    .expect("fixture is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capture_move_gains_material_in_the_fixture() {
        let f = tie_fixture();
        let p0 = &f.positions["p0"];
        let succ = f.transition(p0, "move-b").unwrap();
        assert_eq!(succ.material_balance - p0.material_balance, 1);
        let succ = f.transition(p0, "move-a").unwrap();
        assert_eq!(succ.material_balance - p0.material_balance, 0);
    }

    #[test]
    fn transition_is_pure() {
        let f = tie_fixture();
        let mut env = GameEnv::new(f.clone(), 1);
        let before = env.perceive();
        let p0 = f.positions["p0"].clone();
        let _ = f.transition(&p0, "move-b").unwrap();
        let after = env.perceive();
        assert_eq!(before, after);
        assert_eq!(p0, f.positions["p0"]);
    }

    #[test]
    fn illegal_move_is_rejected() {
        let f = tie_fixture();
        assert!(matches!(
            f.transition(&f.positions["p-a"], "move-b"),
            Err(GameError::IllegalMove(..))
        ));
        let mut env = GameEnv::new(f, 1);
        let r = env.act(&MotorCommand {
            verb: Symbol::id("move"),
            args: vec![(Symbol::id("name"), Symbol::id("castle"))],
        });
        assert!(!r.ok);
    }

    #[test]
    fn percept_lists_moves_in_stable_order() {
        let f = tie_fixture();
        let mut env = GameEnv::new(f, 1);
        let a = env.perceive();
        let b = env.perceive();
        assert_eq!(a, b);
    }

    #[test]
    fn episodes_reset_to_the_start_position() {
        let f = tie_fixture();
        let mut env = GameEnv::new(f, 2);
        let mv = |env: &mut GameEnv, name: &str| {
            env.act(&MotorCommand {
                verb: Symbol::id("move"),
                args: vec![(Symbol::id("name"), Symbol::id(name))],
            })
        };
        assert!(mv(&mut env, "move-b").ok);
        assert_eq!(env.episode_index(), 1);
        assert!(!env.goal_reached());
        assert!(mv(&mut env, "move-b").ok);
        assert!(env.goal_reached());
        assert_eq!(env.moves_per_episode(), &[vec!["move-b"], vec!["move-b"]]);
    }

    #[test]
    fn bad_fixtures_are_rejected() {
        assert!(GameFixture::from_json("{}").is_err());
        assert!(GameFixture::from_json(
            r#"{"start":"p0","positions":{"p0":{"material":0,"moves":[{"name":"m","to":"ghost"}]}}}"#
        )
        .is_err());
    }
}
