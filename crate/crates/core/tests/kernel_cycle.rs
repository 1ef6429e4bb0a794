//! Cognitive-cycle behavior: impasses and substates, imagination and
//! conclusions, result-driven compilation, reality isolation, and the
//! one-action-per-cycle discipline.

use std::collections::BTreeMap;

use cog_core::env::{ActReport, Environment, MotorCommand, NullEnv, Percept, PerceptNode, PerceptValue};
use cog_core::hash::ScopeFilter;
use cog_core::kernel::{Agent, KernelParams, SubstateStatus};
use cog_core::process::ProcStatus;
use cog_core::rules::parser::parse_rules;
use cog_core::rules::{ImpasseKind, ModuleKind};
use cog_core::semantic::{Chunk, ChunkMeta};
use cog_core::symbols::Symbol;
use cog_core::wm::REAL;

fn agent_with(rules_text: &str) -> Agent {
    let mut agent = Agent::new(KernelParams::default(), ScopeFilter::All).unwrap();
    for rule in parse_rules(rules_text).expect("test rules parse") {
        agent.rules.add(rule).unwrap();
    }
    agent
}

/// A fixed percept: one shiny object.
struct ShinyEnv;

impl Environment for ShinyEnv {
    fn label(&self) -> &'static str {
        "shiny"
    }
    fn perceive(&mut self) -> Percept {
        Percept {
            attrs: vec![(
                Symbol::id("world"),
                PerceptValue::Node(PerceptNode::new("world").sym("shiny", Symbol::id("true"))),
            )],
        }
    }
    fn act(&mut self, _cmd: &MotorCommand) -> ActReport {
        ActReport::ok(vec![])
    }
    fn episode_index(&self) -> usize {
        0
    }
    fn goal_reached(&self) -> bool {
        false
    }
    fn world_scope(&self) -> ScopeFilter {
        ScopeFilter::All
    }
    fn metrics(&self) -> serde_json::Value {
        serde_json::json!({})
    }
}

#[test]
fn empty_agent_raises_a_no_change_substate() {
    let mut agent = agent_with("");
    let mut env = NullEnv::default();
    let report = agent.run_cycle(&mut env).unwrap();
    assert_eq!(report.impasse, Some(ImpasseKind::NoChange));
    assert!(report.new_substate.is_some());
    assert_eq!(report.matched, 0);
    // the descriptor is in working memory
    let wm_text = format!("{:?}", agent.wm.visible_triples(REAL).unwrap());
    assert!(wm_text.contains("no-change"), "{wm_text}");
    // a second quiet cycle does not raise a duplicate
    let report2 = agent.run_cycle(&mut env).unwrap();
    assert_eq!(report2.impasse, Some(ImpasseKind::NoChange));
    assert!(report2.new_substate.is_none());
}

#[test]
fn one_applicable_rule_is_selected_and_recorded() {
    let mut agent = agent_with(
        "rule note utility 0.5 { when: (<s> ^type state) -(<s> ^noted true) then: add (<s> ^noted true) }",
    );
    let mut env = NullEnv::default();
    let report = agent.run_cycle(&mut env).unwrap();
    assert_eq!(report.selected.as_deref(), Some("note"));
    assert_eq!(report.applied, 1);
    assert_eq!(agent.episodic.len(), 1);
    assert_eq!(report.impasse, None);
}

#[test]
fn episodes_match_cycles_automatically() {
    let mut agent = agent_with("");
    let mut env = NullEnv::default();
    for _ in 0..7 {
        agent.run_cycle(&mut env).unwrap();
    }
    assert_eq!(agent.episodic.len(), 7);
    assert_eq!(agent.cycle(), 7);
}

#[test]
fn semantic_command_is_answered_within_the_cycle() {
    let mut agent = agent_with(
        "rule ask utility 0.5 { when: (<s> ^type state) -(<s> ^asked true) then: \
         add (<s> ^asked true) command semantic (<c> ^verb retrieve ^kind word) }",
    );
    let mut slots = BTreeMap::new();
    slots.insert(Symbol::id("kind"), Symbol::id("word"));
    slots.insert(Symbol::id("word"), Symbol::id("tripe"));
    agent
        .semantic
        .store_chunk(Chunk {
            id: "tripe".into(),
            slots,
            meta: ChunkMeta {
                n_accesses: 3,
                last_access_cycle: 0,
                creation_cycle: 0,
            },
        })
        .unwrap();
    let mut env = NullEnv::default();
    let report = agent.run_cycle(&mut env).unwrap();
    assert_eq!(report.selected.as_deref(), Some("ask"));
    let status = agent.process_state(ModuleKind::Semantic).status;
    assert!(
        matches!(status, ProcStatus::Success | ProcStatus::Partial | ProcStatus::Failure),
        "semantic buffer still {status:?} at cycle end"
    );
    // the result subtree is in working memory for rules to read
    let wm_text = format!("{:?}", agent.wm.visible_triples(REAL).unwrap());
    assert!(wm_text.contains("result"), "{wm_text}");
}

#[test]
fn tie_raises_a_substate_with_candidate_descriptors() {
    let mut agent = agent_with(
        "rule go-a utility 0.5 { when: (<s> ^type state) then: add (<s> ^went a) }\n\
         rule go-b utility 0.5 { when: (<s> ^type state) then: add (<s> ^went b) }\n\
         rule go-c utility 0.5 { when: (<s> ^type state) then: add (<s> ^went c) }",
    );
    let mut env = NullEnv::default();
    let report = agent.run_cycle(&mut env).unwrap();
    assert_eq!(report.impasse, Some(ImpasseKind::Tie));
    assert!(report.new_substate.is_some());
    let visible = agent.wm.visible_triples(REAL).unwrap();
    let candidates = visible
        .iter()
        .filter(|t| t.attr == Symbol::id("candidate"))
        .count();
    assert_eq!(candidates, 3);
    // candidate descriptors carry rule names and a deterministic order
    let text = format!("{visible:?}");
    for name in ["go-a", "go-b", "go-c"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn nested_impasse_creates_a_depth_two_substate() {
    // the first tie's substate enables two new equal-utility rules, which
    // tie again inside the deliberation
    let mut agent = agent_with(
        "rule go-a utility 0.5 { when: (<s> ^type state) then: add (<s> ^went a) }\n\
         rule go-b utility 0.5 { when: (<s> ^type state) then: add (<s> ^went b) }\n\
         rule think-x utility 0.7 { when: (<ss> ^impasse tie) then: add (<ss> ^thought x) }\n\
         rule think-y utility 0.7 { when: (<ss> ^impasse tie) then: add (<ss> ^thought y) }",
    );
    let mut env = NullEnv::default();
    let r1 = agent.run_cycle(&mut env).unwrap();
    let first = r1.new_substate.unwrap();
    let r2 = agent.run_cycle(&mut env).unwrap();
    let second = r2.new_substate.unwrap();
    assert_ne!(first, second);
    assert_eq!(agent.substate_depth(second), Some(2));
    let ss = &agent.substates()[second as usize];
    assert_eq!(ss.parent, Some(first));
}

#[test]
fn depth_cap_degrades_instead_of_raising() {
    let mut agent = Agent::new(
        KernelParams {
            depth_cap: 0,
            ..KernelParams::default()
        },
        ScopeFilter::All,
    )
    .unwrap();
    let mut env = NullEnv::default();
    let report = agent.run_cycle(&mut env).unwrap();
    assert_eq!(report.impasse, Some(ImpasseKind::NoChange));
    assert!(report.new_substate.is_none());
    let ps = agent.process_state(ModuleKind::Procedural);
    assert!(format!("{:?}", ps.detail).contains("degraded"));
}

#[test]
fn result_resolves_the_substate_and_compiles() {
    // two proposals tie; a deliberation rule reads the candidate listing and
    // results a preference; the execute rule then outranks the proposals
    let mut agent = agent_with(
        "rule go-a utility 0.5 { when: (<s> ^type state ^coin heads) then: add (<s> ^went a) }\n\
         rule go-b utility 0.5 { when: (<s> ^type state ^coin heads) then: add (<s> ^went b) }\n\
         rule decide utility 0.7 { when: (<ss> ^impasse tie) (<s> ^type state ^coin <c>) then: result add (<s> ^preferred go-b) }\n\
         rule execute utility 0.9 { when: (<s> ^type state ^preferred <r>) then: add (<s> ^done <r>) remove (<s> ^preferred <r>) }",
    );
    // seed the coin so decide has a real feature to test
    let root = agent.real_root();
    agent
        .wm
        .apply_delta(
            REAL,
            &[cog_core::wm::Triple::new(
                root,
                Symbol::id("coin"),
                Symbol::id("heads"),
            )],
            &[],
        )
        .unwrap();

    let mut env = NullEnv::default();
    let r1 = agent.run_cycle(&mut env).unwrap();
    assert_eq!(r1.impasse, Some(ImpasseKind::Tie));
    let ss_id = r1.new_substate.unwrap();

    let r2 = agent.run_cycle(&mut env).unwrap();
    assert_eq!(r2.selected.as_deref(), Some("decide"));
    assert_eq!(r2.compiled.len(), 1);
    assert_eq!(
        r2.resolved,
        vec![(ss_id, SubstateStatus::Resolved)],
        "result should resolve the substate in the same cycle"
    );
    // the learned rule exists with the deciding utility
    let learned = agent.rules.get(&r2.compiled[0]).unwrap();
    assert_eq!(learned.utility, 0.7);
    // descriptors are cleaned out of REAL
    let text = format!("{:?}", agent.wm.visible_triples(REAL).unwrap());
    assert!(!text.contains("impasse"), "{text}");
    assert!(text.contains("preferred"), "{text}");

    let r3 = agent.run_cycle(&mut env).unwrap();
    assert_eq!(r3.selected.as_deref(), Some("execute"));
}

#[test]
fn vanished_impasse_abandons_without_compiling() {
    // the tie depends on a coin WME; a higher-utility rule removes it
    let mut agent = agent_with(
        "rule go-a utility 0.5 { when: (<s> ^type state ^coin heads) then: add (<s> ^went a) }\n\
         rule go-b utility 0.5 { when: (<s> ^type state ^coin heads) then: add (<s> ^went b) }\n\
         rule lose-coin utility 0.8 { when: (<ss> ^impasse tie) (<s> ^type state ^coin heads) then: remove (<s> ^coin heads) }",
    );
    let root = agent.real_root();
    agent
        .wm
        .apply_delta(
            REAL,
            &[cog_core::wm::Triple::new(
                root,
                Symbol::id("coin"),
                Symbol::id("heads"),
            )],
            &[],
        )
        .unwrap();
    let mut env = NullEnv::default();
    let r1 = agent.run_cycle(&mut env).unwrap();
    let ss_id = r1.new_substate.unwrap();
    let r2 = agent.run_cycle(&mut env).unwrap();
    assert_eq!(r2.selected.as_deref(), Some("lose-coin"));
    assert_eq!(r2.resolved, vec![(ss_id, SubstateStatus::Abandoned)]);
    assert!(r2.compiled.is_empty());
    assert!(agent.rules_learned().is_empty());
}

#[test]
fn same_rule_fires_in_real_and_in_imagination() {
    let mut agent = agent_with(
        "rule observe utility 0.65 { when: (<x> ^shiny true) -(<x> ^noted here) then: add (<x> ^noted here) }\n\
         rule imagine utility 0.6 { when: (<s> ^type state) -(<s> ^imagined true) then: \
           add (<s> ^imagined true) command wm (<c> ^verb imagine ^stance future) }\n\
         rule shine-there utility 0.62 { when: (<r> ^kind hypothetical) -(<r> ^shiny true) then: add (<r> ^shiny true) }",
    );
    let mut env = ShinyEnv;
    let mut fired_in = Vec::new();
    for _ in 0..6 {
        let report = agent.run_cycle(&mut env).unwrap();
        if report.selected.as_deref() == Some("observe") {
            fired_in.push(report.stepped_real);
        }
    }
    assert!(
        fired_in.contains(&true) && fired_in.contains(&false),
        "observe fired in {fired_in:?}; one ruleset must serve both levels"
    );
    assert_eq!(agent.hypothetical_contexts_created(), 1);
}

#[test]
fn motor_commands_from_imagination_are_blocked() {
    let mut agent = agent_with(
        "rule dream utility 0.8 { when: (<s> ^type state) -(<s> ^dreaming true) then: \
           add (<s> ^dreaming true) command wm (<c> ^verb imagine ^stance future) }\n\
         rule flail utility 0.7 { when: (<r> ^kind hypothetical) -(<r> ^flailed true) then: \
           add (<r> ^flailed true) command motor (<c> ^verb wave) }",
    );
    let mut env = NullEnv::default();
    for _ in 0..3 {
        agent.run_cycle(&mut env).unwrap();
    }
    assert_eq!(agent.motor_blocked_from_hypothetical(), 1);
    assert_eq!(env.metrics()["acted"], 0);
    assert_eq!(
        agent.process_state(ModuleKind::Motor).status,
        ProcStatus::Failure
    );
}

#[test]
fn conclude_pops_and_publishes() {
    let mut agent = agent_with(
        "rule open utility 0.8 { when: (<s> ^type state) -(<s> ^opened true) then: \
           add (<s> ^opened true) command wm (<c> ^verb imagine ^stance future) }\n\
         rule wonder utility 0.7 { when: (<r> ^kind hypothetical ^stance future) then: \
           command wm (<c> ^verb conclude ^verdict fine) }\n\
         rule accept utility 0.9 { when: (<s> ^conclusion <k>) (<k> ^verdict <v>) then: \
           add (<s> ^accepted <v>) remove (<s> ^conclusion <k>) }",
    );
    let mut env = NullEnv::default();
    let mut selections = Vec::new();
    for _ in 0..4 {
        let r = agent.run_cycle(&mut env).unwrap();
        selections.push(r.selected.clone().unwrap_or_default());
    }
    assert_eq!(selections, vec!["open", "wonder", "accept", ""]);
    let text = format!("{:?}", agent.wm.visible_triples(REAL).unwrap());
    assert!(text.contains("accepted"), "{text}");
    // the imagination context is gone
    assert_eq!(agent.wm.live_contexts(), vec![REAL]);
}

#[test]
fn reality_isolation_across_a_deliberating_run() {
    // While imagination is open, rules edit the inherited state freely;
    // REAL must keep its triples untouched.
    let mut agent = agent_with(
        "rule open utility 0.8 { when: (<s> ^type state) -(<s> ^opened true) then: \
           add (<s> ^opened true) command wm (<c> ^verb imagine ^stance future) }\n\
         rule repaint utility 0.7 { when: (<r> ^kind hypothetical) (<w> ^shiny true) -(<w> ^painted true) then: \
           add (<w> ^painted true) remove (<w> ^shiny true) }",
    );
    let mut env = ShinyEnv;
    agent.run_cycle(&mut env).unwrap(); // open
    let real_before = agent.wm.visible_triples(REAL).unwrap();
    let r = agent.run_cycle(&mut env).unwrap(); // repaint inside imagination
    assert_eq!(r.selected.as_deref(), Some("repaint"));
    assert!(!r.stepped_real);
    let real_after = agent.wm.visible_triples(REAL).unwrap();
    let shiny: Vec<_> = real_after
        .iter()
        .filter(|t| t.attr == Symbol::id("shiny"))
        .collect();
    assert_eq!(shiny.len(), 1, "REAL lost its percept");
    // process-state mirrors changed, but no percept triple did
    let percept_before: Vec<_> = real_before
        .iter()
        .filter(|t| t.attr == Symbol::id("shiny") || t.attr == Symbol::id("world"))
        .collect();
    let percept_after: Vec<_> = real_after
        .iter()
        .filter(|t| t.attr == Symbol::id("shiny") || t.attr == Symbol::id("world"))
        .collect();
    assert_eq!(percept_before, percept_after);
}

#[test]
fn at_most_one_instantiation_applies_per_cycle() {
    let mut agent = agent_with(
        "rule a utility 0.9 { when: (<s> ^type state) -(<s> ^a true) then: add (<s> ^a true) }\n\
         rule b utility 0.8 { when: (<s> ^type state) -(<s> ^b true) then: add (<s> ^b true) }\n\
         rule c utility 0.7 { when: (<s> ^type state) -(<s> ^c true) then: add (<s> ^c true) }",
    );
    let mut env = NullEnv::default();
    for _ in 0..5 {
        let report = agent.run_cycle(&mut env).unwrap();
        assert!(report.applied <= 1);
    }
}

#[test]
fn command_collision_is_an_operator_failure() {
    let mut agent = agent_with(
        "rule greedy utility 0.9 { when: (<s> ^type state) then: \
           command semantic (<c> ^verb retrieve ^word a) \
           command semantic (<d> ^verb retrieve ^word b) }",
    );
    let mut env = NullEnv::default();
    let report = agent.run_cycle(&mut env).unwrap();
    assert_eq!(report.impasse, Some(ImpasseKind::OperatorFailure));
    assert_eq!(report.applied, 0);
}

#[test]
fn seeded_history_resumes_the_cycle_clock() {
    use std::collections::BTreeSet;
    let mut agent = agent_with("");
    let states: Vec<BTreeSet<cog_core::wm::Triple>> = (0..5)
        .map(|i| {
            let mut s = BTreeSet::new();
            s.insert(cog_core::wm::Triple::new(
                cog_core::symbols::ElementId(1 << 33),
                Symbol::id("n"),
                Symbol::int(i),
            ));
            s
        })
        .collect();
    agent.episodic.seed_states(&states).unwrap();
    agent.resume_after_seed();
    assert_eq!(agent.cycle(), 5);
    let mut env = NullEnv::default();
    agent.run_cycle(&mut env).unwrap();
    assert_eq!(agent.episodic.len(), 6);
    assert_eq!(agent.episodic.last_cycle(), Some(5));
}
