//! One-armed kitchen robot: store every counter item in the refrigerator.
//! Runs the task a configurable number of times; an instructor message can
//! be queued and is delivered with the first percept after a task completes.

use crate::hash::ScopeFilter;
use crate::symbols::Symbol;

use super::{ActReport, Environment, MotorCommand, Percept, PerceptNode, PerceptValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ItemAt {
    Counter,
    Gripper,
    Fridge,
}

impl ItemAt {
    fn as_symbol(self) -> Symbol {
        Symbol::id(match self {
            ItemAt::Counter => "counter",
            ItemAt::Gripper => "gripper",
            ItemAt::Fridge => "fridge",
        })
    }
}

pub struct RobotEnv {
    items: Vec<(String, ItemAt)>,
    door_open: bool,
    last_action: Symbol,
    episode: usize,
    episodes_total: usize,
    /// Send "improve-performance" after the first completed task.
    instructor: bool,
    msg_queued: bool,
    msg_consumed: bool,
    actions: Vec<u64>,
    blocked: u64,
}

impl RobotEnv {
    pub fn new(n_items: usize, episodes: usize, instructor: bool) -> RobotEnv {
        let names = ["a", "b", "c", "d", "e", "f", "g", "h"];
        RobotEnv {
            items: (0..n_items)
                .map(|i| (names[i % names.len()].to_string(), ItemAt::Counter))
                .collect(),
            door_open: false,
            last_action: Symbol::id("none"),
            episode: 0,
            episodes_total: episodes.max(1),
            instructor,
            msg_queued: false,
            msg_consumed: false,
            actions: vec![0],
            blocked: 0,
        }
    }

    /// Queue an instructor comment; it reaches perception only once the
    /// current task episode has completed.
    pub fn queue_instructor_message(&mut self) {
        self.msg_queued = true;
    }

    pub fn actions_per_episode(&self) -> &[u64] {
        &self.actions
    }

    fn remaining(&self) -> usize {
        self.items
            .iter()
            .filter(|(_, at)| *at != ItemAt::Fridge)
            .count()
    }

    fn holding(&self) -> Option<&str> {
        self.items
            .iter()
            .find(|(_, at)| *at == ItemAt::Gripper)
            .map(|(n, _)| n.as_str())
    }

    fn task_complete(&self) -> bool {
        self.remaining() == 0 && !self.door_open
    }

    fn next_item(&self) -> Option<&str> {
        self.items
            .iter()
            .filter(|(_, at)| *at == ItemAt::Counter)
            .map(|(n, _)| n.as_str())
            .min()
    }

    fn maybe_advance_episode(&mut self) {
        if !self.task_complete() {
            return;
        }
        if self.instructor && self.episode == 0 {
            self.msg_queued = true;
        }
        if self.episode + 1 < self.episodes_total {
            self.episode += 1;
            self.actions.push(0);
            for (_, at) in &mut self.items {
                *at = ItemAt::Counter;
            }
            self.door_open = false;
            self.last_action = Symbol::id("none");
        }
    }
}

impl Environment for RobotEnv {
    fn label(&self) -> &'static str {
        "robot"
    }

    fn perceive(&mut self) -> Percept {
        let mut world = PerceptNode::new("world")
            .sym(
                "door",
                Symbol::id(if self.door_open { "open" } else { "closed" }),
            )
            .sym(
                "holding",
                self.holding().map(Symbol::id).unwrap_or(Symbol::id("none")),
            )
            .sym("remaining", Symbol::int(self.remaining() as i64))
            .sym(
                "next-item",
                self.next_item().map(Symbol::id).unwrap_or(Symbol::id("none")),
            );
        for (name, at) in &self.items {
            world = world.node(
                "item",
                PerceptNode::new(&format!("item-{name}"))
                    .sym("name", Symbol::id(name))
                    .sym("at", at.as_symbol()),
            );
        }
        let mut attrs = vec![
            (
                Symbol::id("task-state"),
                PerceptValue::Sym(Symbol::id(if self.task_complete() {
                    "done"
                } else {
                    "running"
                })),
            ),
            (
                Symbol::id("last-action"),
                PerceptValue::Sym(self.last_action.clone()),
            ),
            (Symbol::id("world"), PerceptValue::Node(world)),
        ];
        // One-shot delivery, never mid-task: either the task just finished,
        // or a later episode has been reset and not yet acted in.
        let between_tasks = self.task_complete()
            || (self.episode > 0 && self.last_action == Symbol::id("none"));
        if self.msg_queued && !self.msg_consumed && between_tasks {
            attrs.push((
                Symbol::id("instructor-says"),
                PerceptValue::Sym(Symbol::id("improve-performance")),
            ));
            self.msg_consumed = true;
        }
        Percept { attrs }
    }

    fn act(&mut self, cmd: &MotorCommand) -> ActReport {
        let verb = cmd.verb.to_string();
        let report = match verb.as_str() {
            "open-door" => {
                if self.door_open {
                    self.fail("door already open")
                } else {
                    self.door_open = true;
                    ActReport::ok(vec!["door open".into()])
                }
            }
            "close-door" => {
                if !self.door_open {
                    self.fail("door already closed")
                } else {
                    self.door_open = false;
                    ActReport::ok(vec!["door closed".into()])
                }
            }
            "pick" => {
                let Some(name) = cmd.arg("item").and_then(|s| s.as_ident().map(String::from))
                else {
                    return self.fail("pick requires an item");
                };
                if self.holding().is_some() {
                    self.fail("gripper is full")
                } else {
                    let slot = self
                        .items
                        .iter()
                        .position(|(n, at)| *n == name && *at == ItemAt::Counter);
                    match slot {
                        Some(i) => {
                            self.items[i].1 = ItemAt::Gripper;
                            ActReport::ok(vec![format!("holding {name}")])
                        }
                        None => self.fail("item is not on the counter"),
                    }
                }
            }
            "place" => {
                if !self.door_open {
                    self.fail("door is closed")
                } else {
                    let slot = self.items.iter().position(|(_, at)| *at == ItemAt::Gripper);
                    match slot {
                        Some(i) => {
                            self.items[i].1 = ItemAt::Fridge;
                            let n = self.items[i].0.clone();
                            ActReport::ok(vec![format!("{n} stored")])
                        }
                        None => self.fail("gripper is empty"),
                    }
                }
            }
            other => self.fail(&format!("unknown verb {other}")),
        };
        if report.ok {
            self.last_action = cmd.verb.clone();
            *self.actions.last_mut().expect("episode counter") += 1;
            self.maybe_advance_episode();
        }
        report
    }

    fn episode_index(&self) -> usize {
        self.episode
    }

    fn goal_reached(&self) -> bool {
        self.episode + 1 == self.episodes_total && self.task_complete()
    }

    fn world_scope(&self) -> ScopeFilter {
        ScopeFilter::attrs(
            ["world", "door", "holding", "remaining", "next-item", "item", "name", "at"]
                .map(Symbol::id),
        )
    }

    fn metrics(&self) -> serde_json::Value {
        serde_json::json!({
            "actions_per_episode": self.actions,
            "episodes": self.episodes_total,
            "illegal_attempts": self.blocked,
        })
    }
}

impl RobotEnv {
    fn fail(&mut self, reason: &str) -> ActReport {
        self.blocked += 1;
        ActReport::illegal(reason)
    }
}
