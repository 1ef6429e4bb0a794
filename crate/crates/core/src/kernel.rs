//! The cognitive cycle: percepts in, one selected action, module servicing,
//! episodic recording, and impasse-driven substates — with no structural
//! boundary between task reasoning and metareasoning. Stepping always
//! happens in the top context of the context stack; imagination pushes
//! hypothetical contexts and concluding pops them, so results become
//! visible where deliberation continues.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::SeedableRng;
use thiserror::Error;

use crate::env::{Environment, MotorCommand, Percept, PerceptValue};
use crate::episodic::{EpisodeCue, EpisodicError, EpisodicParams, EpisodicRetrieval, EpisodicStore, TimeHint};
use crate::hash::ScopeFilter;
use crate::process::{ProcStatus, ProcessState};
use crate::rules::learn::ProductionSet;
use crate::rules::matcher::{match_context, still_valid, Aliases};
use crate::rules::select::{select_action, Selection};
use crate::rules::{
    Action, ActionKind, CompilationTrace, Condition, ImpasseKind, Instantiation, ModuleKind,
    Production, RuleError, Term,
};
use crate::semantic::{
    Constraint, RetrievalCue, RetrievalParams, RetrievalResult, SemanticError, SemanticStore,
    SlotPredicate,
};
use crate::symbols::{ElementId, Symbol, Value};
use crate::wm::{ContextId, ContextKind, Stance, Triple, WmError, WorkingMemory, REAL};

/// Run-wide tunables, all settable from a scenario config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub epsilon: f64,
    pub alpha: f64,
    pub d: f64,
    pub tau_success: f64,
    pub tau_partial: f64,
    pub tau_match: f64,
    pub tie_limit: usize,
    pub snapshot_k: u64,
    pub depth_cap: usize,
    pub seed: u64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            epsilon: 1e-6,
            alpha: 0.2,
            d: 0.5,
            tau_success: 0.0,
            tau_partial: -1.0,
            tau_match: 0.5,
            tie_limit: 10,
            snapshot_k: 32,
            depth_cap: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubstateStatus {
    Active,
    Resolved,
    Abandoned,
}

/// A substate: impasse description written into the context where the
/// impasse arose, plus bookkeeping for resolution and compilation.
#[derive(Debug, Clone)]
pub struct Substate {
    pub id: u32,
    pub kind: ImpasseKind,
    pub context: ContextId,
    pub parent: Option<u32>,
    pub created_cycle: u64,
    pub status: SubstateStatus,
    pub node: ElementId,
    /// Elements minted for descriptors and conclusions, removed on cleanup.
    minted: BTreeSet<ElementId>,
    /// Context-stack depth when raised; resolution pops back to it.
    stack_depth: usize,
    /// The instantiations that tied (empty for other impasse kinds).
    candidates: Vec<Instantiation>,
    signature: String,
    result_fired: bool,
    terminate_requested: bool,
}

struct BufferState {
    state_node: ElementId,
    pending: Option<PendingCommand>,
    /// (context, triple) written for the last command echo and result.
    materialized: Vec<(ContextId, Triple)>,
    ps_triples: Vec<Triple>,
    ps: ProcessState,
}

#[derive(Debug, Clone)]
struct PendingCommand {
    module: ModuleKind,
    slots: Vec<(Symbol, Value)>,
    issued_from: ContextId,
}

impl PendingCommand {
    fn verb(&self) -> Option<&Symbol> {
        let key = Symbol::id("verb");
        self.slots
            .iter()
            .find(|(a, _)| *a == key)
            .and_then(|(_, v)| v.as_sym())
    }

    fn sym_slot(&self, name: &str) -> Option<&Symbol> {
        let key = Symbol::id(name);
        self.slots
            .iter()
            .find(|(a, _)| *a == key)
            .and_then(|(_, v)| v.as_sym())
    }

    fn elem_slot(&self, name: &str) -> Option<ElementId> {
        let key = Symbol::id(name);
        self.slots
            .iter()
            .find(|(a, _)| *a == key)
            .and_then(|(_, v)| v.as_elem())
    }
}

/// What one cycle did, phase by phase.
#[derive(Debug, Clone)]
pub struct CycleReport {
    pub cycle: u64,
    pub stepped: ContextId,
    pub stepped_real: bool,
    pub percept_adds: usize,
    pub percept_removes: usize,
    pub matched: usize,
    pub selected: Option<String>,
    pub selected_bindings: Option<String>,
    pub impasse: Option<ImpasseKind>,
    pub new_substate: Option<u32>,
    pub resolved: Vec<(u32, SubstateStatus)>,
    /// Instantiations applied in the stepped context this cycle (0 or 1).
    pub applied: usize,
    pub commands: Vec<(ModuleKind, String, bool)>,
    pub motor: Vec<(String, bool)>,
    pub compiled: Vec<String>,
    pub buffer_status: Vec<(ModuleKind, ProcStatus)>,
    pub episode_hash: u64,
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error(transparent)]
    Wm(#[from] WmError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Episodic(#[from] EpisodicError),
    #[error("halt requested")]
    HaltRequested,
}

/// One agent: working memory, long-term memories, buffers, and the cycle.
pub struct Agent {
    pub wm: WorkingMemory,
    pub rules: ProductionSet,
    pub semantic: SemanticStore,
    pub episodic: EpisodicStore,
    pub params: KernelParams,
    aliases: Aliases,
    buffers: BTreeMap<ModuleKind, BufferState>,
    ctx_stack: Vec<ContextId>,
    substates: Vec<Substate>,
    active: Vec<usize>,
    rng: StdRng,
    cycle: u64,
    percept_map: BTreeMap<(ElementId, String), ElementId>,
    percept_owned: BTreeSet<Triple>,
    /// REAL as of the last recorded episode; the next delta diffs against
    /// this, so late-cycle changes (substate cleanup) are never lost.
    last_recorded: BTreeSet<Triple>,
    episode_starts: Vec<(usize, u64)>,
    world_scope: ScopeFilter,
    hyp_contexts_created: u64,
    motor_from_hypothetical: u64,
    impasses_per_episode: Vec<BTreeMap<ImpasseKind, u64>>,
    degraded_impasses: u64,
    rules_learned: Vec<String>,
    rewarded: Vec<(String, f64)>,
}

impl Agent {
    pub fn new(params: KernelParams, world_scope: ScopeFilter) -> Result<Agent, KernelError> {
        let mut wm = WorkingMemory::new();
        let root = wm.root_of(REAL)?;
        // The root-typed triple is written first so dumps canonicalize the
        // state root as e0.
        wm.apply_delta(REAL, &[Triple::new(root, Symbol::id("type"), Symbol::id("state"))], &[])?;

        let mut buffers = BTreeMap::new();
        for module in ModuleKind::ALL {
            let node = wm.fresh_element();
            let state_node = wm.fresh_element();
            wm.apply_delta(
                REAL,
                &[
                    Triple::new(root, Symbol::id(&format!("{}-buffer", module.name())), node),
                    Triple::new(node, Symbol::id("module"), Symbol::id(module.name())),
                    Triple::new(node, Symbol::id("state"), state_node),
                ],
                &[],
            )?;
            let mut buf = BufferState {
                state_node,
                pending: None,
                materialized: Vec::new(),
                ps_triples: Vec::new(),
                ps: ProcessState::idle(module),
            };
            let ps_triples = ps_mirror(state_node, &buf.ps);
            wm.apply_delta(REAL, &ps_triples, &[])?;
            buf.ps_triples = ps_triples;
            buffers.insert(module, buf);
        }

        let episodic = EpisodicStore::new(params.snapshot_k, root);
        Ok(Agent {
            wm,
            rules: ProductionSet::new(),
            semantic: SemanticStore::new(),
            episodic,
            aliases: Aliases::new(),
            buffers,
            ctx_stack: vec![REAL],
            substates: Vec::new(),
            active: Vec::new(),
            rng: StdRng::seed_from_u64(params.seed),
            cycle: 0,
            percept_map: BTreeMap::new(),
            percept_owned: BTreeSet::new(),
            last_recorded: BTreeSet::new(),
            episode_starts: vec![(0, 0)],
            world_scope,
            hyp_contexts_created: 0,
            motor_from_hypothetical: 0,
            impasses_per_episode: vec![BTreeMap::new()],
            degraded_impasses: 0,
            rules_learned: Vec::new(),
            rewarded: Vec::new(),
            params,
        })
    }

    /// Continue the cycle clock after seeding episodic history.
    pub fn resume_after_seed(&mut self) {
        if let Some(last) = self.episodic.last_cycle() {
            self.cycle = last + 1;
            self.episode_starts = vec![(0, self.cycle)];
            self.last_recorded = self
                .episodic
                .state_at(last)
                .expect("seeded episodes replay");
        }
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn real_root(&self) -> ElementId {
        self.wm.root_of(REAL).expect("REAL exists")
    }

    pub fn aliases(&self) -> &Aliases {
        &self.aliases
    }

    pub fn substates(&self) -> &[Substate] {
        &self.substates
    }

    pub fn hypothetical_contexts_created(&self) -> u64 {
        self.hyp_contexts_created
    }

    pub fn motor_blocked_from_hypothetical(&self) -> u64 {
        self.motor_from_hypothetical
    }

    pub fn impasses_per_episode(&self) -> &[BTreeMap<ImpasseKind, u64>] {
        &self.impasses_per_episode
    }

    /// (environment episode index, first cycle) pairs, in order.
    pub fn episode_starts(&self) -> &[(usize, u64)] {
        &self.episode_starts
    }

    pub fn rules_learned(&self) -> &[String] {
        &self.rules_learned
    }

    pub fn rewards_applied(&self) -> &[(String, f64)] {
        &self.rewarded
    }

    /// Reward every compiled rule that is loaded, per the scenario's
    /// improvement signal.
    pub fn reward_compiled(&mut self, reward: f64) -> Result<(), KernelError> {
        let names: Vec<String> = self.rules.compiled_rules().map(|r| r.name.clone()).collect();
        for name in names {
            let q = self.rules.update_utility(&name, reward, self.params.alpha)?;
            self.rewarded.push((name, q));
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // The cycle
    // ------------------------------------------------------------------

    pub fn run_cycle(&mut self, env: &mut dyn Environment) -> Result<CycleReport, KernelError> {
        self.wm.set_cycle(self.cycle);

        // (1) percepts
        let percept = env.perceive();
        let (percept_adds, percept_removes) = self.sync_percept(&percept)?;
        let episode_idx = env.episode_index();
        if episode_idx != self.episode_starts.last().expect("nonempty").0 {
            self.episode_starts.push((episode_idx, self.cycle));
            self.impasses_per_episode.push(BTreeMap::new());
        }

        // (2) step the top context
        let stepped = *self.ctx_stack.last().expect("stack holds REAL");

        // (3) match and select
        let rule_refs: Vec<&Production> = self.rules.iter().collect();
        let candidates = match_context(&self.wm, &rule_refs, stepped, &self.aliases)?;
        let matched = candidates.len();
        let outcome = select_action(&candidates, self.params.epsilon, stepped, &mut self.rng);

        let mut report = CycleReport {
            cycle: self.cycle,
            stepped,
            stepped_real: stepped == REAL,
            percept_adds,
            percept_removes,
            matched,
            selected: None,
            selected_bindings: None,
            impasse: None,
            new_substate: None,
            resolved: Vec::new(),
            applied: 0,
            commands: Vec::new(),
            motor: Vec::new(),
            compiled: Vec::new(),
            buffer_status: Vec::new(),
            episode_hash: 0,
        };

        // (4) apply, or raise a substate
        match outcome {
            Selection::Chosen(inst) => {
                report.selected = Some(inst.production.clone());
                report.selected_bindings = Some(format!("{inst}"));
                self.set_ps(
                    ModuleKind::Procedural,
                    ProcessState::new(
                        ModuleKind::Procedural,
                        ProcStatus::Success,
                        1.0,
                        0.0,
                        vec![(Symbol::id("selected"), Symbol::id(&inst.production))],
                    ),
                )?;
                match self.apply_instantiation(&inst) {
                    Ok(compiled) => {
                        report.applied = 1;
                        report.compiled = compiled;
                    }
                    Err(KernelError::Rule(e)) => {
                        // an operator that cannot apply is itself an impasse;
                        // the cycle reports the impasse, not a selection
                        report.selected = None;
                        report.selected_bindings = None;
                        let detail = vec![
                            (Symbol::id("rule"), Symbol::id(&inst.production)),
                            (Symbol::id("error"), Symbol::str(&e.to_string())),
                        ];
                        report.impasse = Some(ImpasseKind::OperatorFailure);
                        report.new_substate = self.raise_substate(
                            ImpasseKind::OperatorFailure,
                            stepped,
                            Vec::new(),
                            detail,
                        )?;
                    }
                    Err(other) => return Err(other),
                }
            }
            Selection::Blocked(imp) => {
                report.impasse = Some(imp.kind);
                self.set_ps(
                    ModuleKind::Procedural,
                    ProcessState::new(
                        ModuleKind::Procedural,
                        ProcStatus::Failure,
                        0.0,
                        0.0,
                        vec![(Symbol::id("last-impasse"), Symbol::id(imp.kind.name()))],
                    ),
                )?;
                report.new_substate =
                    self.raise_substate(imp.kind, stepped, imp.candidates, imp.detail)?;
            }
        }

        // (5) service pending buffer commands, fixed order
        for module in [
            ModuleKind::WorkingMemory,
            ModuleKind::Semantic,
            ModuleKind::Episodic,
            ModuleKind::Motor,
        ] {
            let Some(cmd) = self.buffers.get_mut(&module).and_then(|b| b.pending.take()) else {
                continue;
            };
            let verb = cmd.verb().cloned().unwrap_or(Symbol::id("?"));
            report
                .commands
                .push((module, verb.to_string(), cmd.issued_from == REAL));
            match module {
                ModuleKind::WorkingMemory => self.service_wm(&cmd)?,
                ModuleKind::Semantic => self.service_semantic(&cmd)?,
                ModuleKind::Episodic => self.service_episodic(&cmd)?,
                ModuleKind::Motor => {
                    let acted = self.service_motor(&cmd, env)?;
                    if let Some(line) = acted {
                        report.motor.push(line);
                    }
                }
                _ => {}
            }
        }

        // (6) record the REAL delta episodically, against the last
        // recorded state
        let real_after = self.wm.visible_triples(REAL)?;
        let adds: Vec<Triple> = real_after.difference(&self.last_recorded).cloned().collect();
        let removes: Vec<Triple> = self.last_recorded.difference(&real_after).cloned().collect();
        let episode = self.episodic.record_cycle(
            self.cycle,
            adds,
            removes,
            report.selected.clone(),
            &real_after,
        )?;
        report.episode_hash = episode.hash;
        self.last_recorded = real_after;

        // (7) resolution check, deepest first
        report.resolved = self.check_resolution()?;

        for (module, buf) in &self.buffers {
            report.buffer_status.push((*module, buf.ps.status));
        }
        self.cycle += 1;
        Ok(report)
    }

    // ------------------------------------------------------------------
    // Percepts
    // ------------------------------------------------------------------

    fn sync_percept(&mut self, percept: &Percept) -> Result<(usize, usize), KernelError> {
        let root = self.real_root();
        let mut desired: BTreeSet<Triple> = BTreeSet::new();
        let mut stack: Vec<(ElementId, &[(Symbol, PerceptValue)])> = vec![(root, &percept.attrs)];
        while let Some((parent, attrs)) = stack.pop() {
            for (attr, value) in attrs {
                match value {
                    PerceptValue::Sym(s) => {
                        desired.insert(Triple::new(parent, attr.clone(), s.clone()));
                    }
                    PerceptValue::Node(node) => {
                        let key = (parent, node.key.clone());
                        let elem = match self.percept_map.get(&key) {
                            Some(e) => *e,
                            None => {
                                let e = self.wm.fresh_element();
                                self.percept_map.insert(key, e);
                                e
                            }
                        };
                        desired.insert(Triple::new(parent, attr.clone(), elem));
                        stack.push((elem, &node.attrs));
                    }
                }
            }
        }
        let visible = self.wm.visible_triples(REAL)?;
        let adds: Vec<Triple> = desired
            .iter()
            .filter(|t| !visible.contains(t))
            .cloned()
            .collect();
        let removes: Vec<Triple> = self
            .percept_owned
            .iter()
            .filter(|t| !desired.contains(t) && visible.contains(t))
            .cloned()
            .collect();
        self.wm.apply_delta(REAL, &adds, &removes)?;
        self.percept_owned = desired;
        Ok((adds.len(), removes.len()))
    }

    // ------------------------------------------------------------------
    // Applying an instantiation
    // ------------------------------------------------------------------

    /// Apply one instantiation atomically: stage the working-memory delta,
    /// buffer commands, and result contributions, then commit. Returns the
    /// names of rules compiled from result actions.
    pub fn apply_instantiation(&mut self, inst: &Instantiation) -> Result<Vec<String>, KernelError> {
        let rule = self
            .rules
            .get(&inst.production)
            .ok_or_else(|| RuleError::UnknownRule(inst.production.clone()))?
            .clone();
        if !still_valid(&self.wm, &rule, inst, &self.aliases)? {
            return Err(KernelError::Rule(RuleError::StaleInstantiation(
                inst.production.clone(),
            )));
        }

        let mut adds = Vec::new();
        let mut removes = Vec::new();
        let mut commands: Vec<PendingCommand> = Vec::new();
        let mut result_adds = Vec::new();
        let mut result_removes = Vec::new();
        let ground = |p: &crate::rules::TriplePattern| {
            crate::rules::ground_pattern(p, &inst.bindings, &self.aliases).ok_or_else(|| {
                KernelError::Rule(RuleError::StaleInstantiation(inst.production.clone()))
            })
        };
        for action in &rule.actions {
            match action {
                Action::Add(p) => adds.push(ground(p)?),
                Action::Remove(p) => removes.push(ground(p)?),
                Action::Result { kind, pattern } => {
                    let t = ground(pattern)?;
                    match kind {
                        ActionKind::Add => {
                            adds.push(t.clone());
                            result_adds.push((pattern.clone(), t));
                        }
                        ActionKind::Remove => {
                            removes.push(t.clone());
                            result_removes.push((pattern.clone(), t));
                        }
                    }
                }
                Action::Command { module, slots, .. } => {
                    if commands.iter().any(|c| c.module == *module)
                        || self.buffers[module].pending.is_some()
                    {
                        return Err(KernelError::Rule(RuleError::CommandCollision(*module)));
                    }
                    let mut resolved = Vec::new();
                    for (attr, term) in slots {
                        let value = match term {
                            Term::Const(s) => Value::Sym(s.clone()),
                            Term::Var(v) => inst
                                .bindings
                                .get(v)
                                .cloned()
                                .ok_or_else(|| {
                                    KernelError::Rule(RuleError::StaleInstantiation(
                                        inst.production.clone(),
                                    ))
                                })?,
                        };
                        resolved.push((attr.clone(), value));
                    }
                    commands.push(PendingCommand {
                        module: *module,
                        slots: resolved,
                        issued_from: inst.context,
                    });
                }
            }
        }

        self.wm.apply_delta(inst.context, &adds, &removes).map_err(|e| {
            KernelError::Rule(RuleError::StaleInstantiation(format!(
                "{}: {e}",
                inst.production
            )))
        })?;

        for cmd in commands {
            self.issue_command(cmd)?;
        }

        let mut compiled = Vec::new();
        if !result_adds.is_empty() || !result_removes.is_empty() {
            let tested = self.ground_positives(&rule, inst);
            let tests = rule
                .conditions
                .iter()
                .filter_map(|c| match c {
                    Condition::Test(t) => Some(t.clone()),
                    _ => None,
                })
                .collect();
            let trace = CompilationTrace {
                tested,
                tests,
                result_adds,
                result_removes,
                utility: inst.utility,
            };
            let name = self.rules.compile_result(&trace)?;
            self.rules_learned.push(name.clone());
            compiled.push(name);
            if let Some(&top) = self.active.last() {
                self.substates[top].result_fired = true;
            }
        }
        Ok(compiled)
    }

    fn ground_positives(
        &self,
        rule: &Production,
        inst: &Instantiation,
    ) -> Vec<(crate::rules::TriplePattern, Triple)> {
        rule.conditions
            .iter()
            .filter_map(|c| match c {
                Condition::Pos(p) => {
                    crate::rules::ground_pattern(p, &inst.bindings, &self.aliases)
                        .map(|t| (p.clone(), t))
                }
                _ => None,
            })
            .collect()
    }

    fn issue_command(&mut self, cmd: PendingCommand) -> Result<(), KernelError> {
        let module = cmd.module;
        // clear the previous command echo and result subtree
        self.clear_materialized(module)?;
        // echo the command into the issuing context
        let cmd_node = self.wm.fresh_element();
        let buf_node = self.buffer_node(module)?;
        let mut adds = vec![Triple::new(buf_node, Symbol::id("command"), cmd_node)];
        for (attr, value) in &cmd.slots {
            adds.push(Triple::new(cmd_node, attr.clone(), value.clone()));
        }
        let ctx = cmd.issued_from;
        self.wm.apply_delta(ctx, &adds, &[])?;
        let buf = self.buffers.get_mut(&module).expect("all buffers exist");
        buf.materialized
            .extend(adds.into_iter().map(|t| (ctx, t)));
        buf.pending = Some(cmd);
        self.set_ps(module, ProcessState::pending(module))?;
        Ok(())
    }

    fn buffer_node(&self, module: ModuleKind) -> Result<ElementId, KernelError> {
        // the buffer anchor is the value of (root ^<module>-buffer B)
        let root = self.real_root();
        let attr = Symbol::id(&format!("{}-buffer", module.name()));
        for t in self.wm.visible(REAL)? {
            if t.triple.id == root && t.triple.attr == attr {
                if let Some(e) = t.triple.value.as_elem() {
                    return Ok(e);
                }
            }
        }
        unreachable!("buffers are created at boot")
    }

    fn clear_materialized(&mut self, module: ModuleKind) -> Result<(), KernelError> {
        let buf = self.buffers.get_mut(&module).expect("all buffers exist");
        let old = std::mem::take(&mut buf.materialized);
        let mut by_ctx: BTreeMap<ContextId, Vec<Triple>> = BTreeMap::new();
        for (ctx, t) in old {
            by_ctx.entry(ctx).or_default().push(t);
        }
        for (ctx, triples) in by_ctx {
            if self.wm.context(ctx).is_err() {
                continue; // imagination context already discarded
            }
            let visible = self.wm.visible_triples(ctx)?;
            let removes: Vec<Triple> = triples.into_iter().filter(|t| visible.contains(t)).collect();
            self.wm.apply_delta(ctx, &[], &removes)?;
        }
        Ok(())
    }

    /// Update a module's process state and its working-memory mirror.
    fn set_ps(&mut self, module: ModuleKind, ps: ProcessState) -> Result<(), KernelError> {
        let buf = self.buffers.get_mut(&module).expect("all buffers exist");
        let old = std::mem::take(&mut buf.ps_triples);
        let fresh = ps_mirror(buf.state_node, &ps);
        buf.ps = ps;
        let visible = self.wm.visible_triples(REAL)?;
        let removes: Vec<Triple> = old.into_iter().filter(|t| visible.contains(t)).collect();
        let adds: Vec<Triple> = fresh
            .iter()
            .filter(|t| !visible.contains(*t) && !removes.contains(*t))
            .cloned()
            .collect();
        // a triple both removed and re-added stays put
        let adds: Vec<Triple> = adds
            .into_iter()
            .filter(|t| !removes.contains(t))
            .collect();
        let removes: Vec<Triple> = removes
            .into_iter()
            .filter(|t| !fresh.contains(t))
            .collect();
        self.wm.apply_delta(REAL, &adds, &removes)?;
        self.buffers.get_mut(&module).expect("exists").ps_triples = fresh;
        Ok(())
    }

    pub fn process_state(&self, module: ModuleKind) -> &ProcessState {
        &self.buffers[&module].ps
    }

    // ------------------------------------------------------------------
    // Substates
    // ------------------------------------------------------------------

    fn raise_substate(
        &mut self,
        kind: ImpasseKind,
        ctx: ContextId,
        candidates: Vec<Instantiation>,
        detail: Vec<(Symbol, Symbol)>,
    ) -> Result<Option<u32>, KernelError> {
        let signature = format!(
            "{kind}@{ctx}:{}",
            candidates
                .iter()
                .map(|c| format!("{c}"))
                .collect::<Vec<_>>()
                .join("|")
        );
        if self
            .active
            .iter()
            .any(|&i| self.substates[i].signature == signature)
        {
            return Ok(None); // the same impasse is already being deliberated
        }
        let episode = self.impasses_per_episode.last_mut().expect("nonempty");
        *episode.entry(kind).or_insert(0) += 1;
        if self.active.len() >= self.params.depth_cap {
            // degraded mode: note it in the procedural process state and
            // carry on in the base context
            self.degraded_impasses += 1;
            let ps = ProcessState::new(
                ModuleKind::Procedural,
                ProcStatus::Failure,
                0.0,
                0.0,
                vec![
                    (Symbol::id("last-impasse"), Symbol::id(kind.name())),
                    (Symbol::id("degraded"), Symbol::id("true")),
                ],
            );
            self.set_ps(ModuleKind::Procedural, ps)?;
            return Ok(None);
        }

        let id = self.substates.len() as u32;
        let node = self.wm.fresh_element();
        let mut minted = BTreeSet::new();
        minted.insert(node);
        let mut adds = vec![
            Triple::new(node, Symbol::id("type"), Symbol::id("substate")),
            Triple::new(node, Symbol::id("impasse"), Symbol::id(kind.name())),
            Triple::new(node, Symbol::id("cycle"), Symbol::int(self.cycle as i64)),
        ];
        for (attr, value) in &detail {
            let t = Triple::new(node, attr.clone(), value.clone());
            if !adds.contains(&t) {
                adds.push(t);
            }
        }
        for (order, cand) in candidates.iter().enumerate() {
            let ci = self.wm.fresh_element();
            minted.insert(ci);
            adds.push(Triple::new(node, Symbol::id("candidate"), ci));
            adds.push(Triple::new(ci, Symbol::id("rule"), Symbol::id(&cand.production)));
            adds.push(Triple::new(
                ci,
                Symbol::id("order"),
                Symbol::int(order as i64 + 1),
            ));
            adds.push(Triple::new(
                ci,
                Symbol::id("utility"),
                Symbol::real(cand.utility),
            ));
            for (var, value) in &cand.bindings {
                let attr = match value {
                    Value::Sym(_) => Symbol::id(&format!("bound-{var}")),
                    Value::Elem(_) => Symbol::id(&format!("elem-{var}")),
                };
                adds.push(Triple::new(ci, attr, value.clone()));
            }
        }
        self.wm.apply_delta(ctx, &adds, &[])?;

        let parent = self.active.last().map(|&i| self.substates[i].id);
        self.substates.push(Substate {
            id,
            kind,
            context: ctx,
            parent,
            created_cycle: self.cycle,
            status: SubstateStatus::Active,
            node,
            minted,
            stack_depth: self.ctx_stack.len(),
            candidates,
            signature,
            result_fired: false,
            terminate_requested: false,
        });
        self.active.push(self.substates.len() - 1);
        Ok(Some(id))
    }

    /// Depth of a substate in the active stack (1-based).
    pub fn substate_depth(&self, id: u32) -> Option<usize> {
        self.active
            .iter()
            .position(|&i| self.substates[i].id == id)
            .map(|p| p + 1)
    }

    fn check_resolution(&mut self) -> Result<Vec<(u32, SubstateStatus)>, KernelError> {
        let mut resolved = Vec::new();
        while let Some(&top) = self.active.last() {
            let status = {
                let ss = &self.substates[top];
                if ss.result_fired {
                    Some(SubstateStatus::Resolved)
                } else if ss.terminate_requested || self.impasse_vanished(top)? {
                    Some(SubstateStatus::Abandoned)
                } else {
                    None
                }
            };
            let Some(status) = status else { break };
            self.cleanup_substate(top, status)?;
            resolved.push((self.substates[top].id, status));
        }
        Ok(resolved)
    }

    /// Does the originating impasse still hold?
    fn impasse_vanished(&mut self, idx: usize) -> Result<bool, KernelError> {
        let ss = &self.substates[idx];
        match ss.kind {
            ImpasseKind::Tie => {
                // the tie holds while every tied candidate remains valid
                for cand in &ss.candidates {
                    let Some(rule) = self.rules.get(&cand.production) else {
                        return Ok(true);
                    };
                    if self.wm.context(cand.context).is_err()
                        || !still_valid(&self.wm, rule, cand, &self.aliases)?
                    {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            ImpasseKind::NoChange | ImpasseKind::OperatorFailure => {
                // vanished once base-level knowledge (not substate
                // descriptors) can act in the impasse context again
                if self.wm.context(ss.context).is_err() {
                    return Ok(true);
                }
                let rule_refs: Vec<&Production> = self.rules.iter().collect();
                let candidates =
                    match_context(&self.wm, &rule_refs, ss.context, &self.aliases)?;
                let tainted: BTreeSet<ElementId> = self
                    .substates
                    .iter()
                    .filter(|s| s.status == SubstateStatus::Active)
                    .flat_map(|s| s.minted.iter().copied())
                    .collect();
                for cand in candidates {
                    let Some(rule) = self.rules.get(&cand.production) else {
                        continue;
                    };
                    let touches_substate = self
                        .ground_positives(rule, &cand)
                        .iter()
                        .any(|(_, t)| {
                            tainted.contains(&t.id)
                                || t.value.as_elem().is_some_and(|e| tainted.contains(&e))
                        });
                    if !touches_substate {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    fn cleanup_substate(&mut self, idx: usize, status: SubstateStatus) -> Result<(), KernelError> {
        // discard imagination contexts opened during this substate
        let depth = self.substates[idx].stack_depth;
        while self.ctx_stack.len() > depth {
            let ctx = self.ctx_stack.pop().expect("nonempty");
            self.wm.discard_context(ctx)?;
        }
        // remove descriptor triples from the impasse context
        let ss_ctx = self.substates[idx].context;
        if self.wm.context(ss_ctx).is_ok() {
            let minted = self.substates[idx].minted.clone();
            let visible = self.wm.visible_triples(ss_ctx)?;
            let removes: Vec<Triple> = visible
                .into_iter()
                .filter(|t| {
                    minted.contains(&t.id)
                        || t.value.as_elem().is_some_and(|e| minted.contains(&e))
                })
                .collect();
            self.wm.apply_delta(ss_ctx, &[], &removes)?;
        }
        self.substates[idx].status = status;
        self.active.pop();
        Ok(())
    }

    // ------------------------------------------------------------------
    // Module servicing
    // ------------------------------------------------------------------

    fn service_wm(&mut self, cmd: &PendingCommand) -> Result<(), KernelError> {
        let module = ModuleKind::WorkingMemory;
        let verb = cmd.verb().cloned();
        match verb.as_ref().and_then(|s| s.as_ident()) {
            Some("imagine") => {
                let stance = match cmd.sym_slot("stance").and_then(|s| s.as_ident()) {
                    Some("past") => Stance::Past,
                    _ => Stance::Future,
                };
                let parent = *self.ctx_stack.last().expect("nonempty");
                let ctx = self
                    .wm
                    .create_context(ContextKind::Hypothetical, stance, parent)?;
                self.hyp_contexts_created += 1;
                let root = self.wm.root_of(ctx)?;
                let parent_root = self.wm.root_of(parent)?;
                let mut adds = vec![
                    Triple::new(root, Symbol::id("kind"), Symbol::id("hypothetical")),
                    Triple::new(root, Symbol::id("stance"), stance.as_symbol()),
                    Triple::new(root, Symbol::id("superstate"), parent_root),
                ];
                // optional subgraph copy, exposed as ^copied
                if let Some(src_root) = cmd.elem_slot("copy") {
                    self.wm.apply_delta(ctx, &adds, &[])?;
                    adds.clear();
                    let map = self.wm.copy_into_context(parent, &[src_root], ctx)?;
                    adds.push(Triple::new(root, Symbol::id("copied"), map[&src_root]));
                }
                // remaining slots become tags on the new root
                for (attr, value) in &cmd.slots {
                    let name = attr.to_string();
                    if ["verb", "stance", "copy"].contains(&name.as_str()) {
                        continue;
                    }
                    adds.push(Triple::new(root, attr.clone(), value.clone()));
                }
                self.wm.apply_delta(ctx, &adds, &[])?;
                self.ctx_stack.push(ctx);
                if let Some(&top) = self.active.last() {
                    // imagination belongs to the deliberation that asked
                    let _ = top;
                }
                self.set_ps(
                    module,
                    ProcessState::new(
                        module,
                        ProcStatus::Success,
                        1.0,
                        0.0,
                        vec![(Symbol::id("opened"), stance.as_symbol())],
                    ),
                )?;
            }
            Some("conclude") => {
                if self.ctx_stack.len() == 1 {
                    self.set_ps(
                        module,
                        ProcessState::new(
                            module,
                            ProcStatus::Failure,
                            0.0,
                            0.0,
                            vec![(Symbol::id("error"), Symbol::id("no-imagination-open"))],
                        ),
                    )?;
                    return Ok(());
                }
                let ctx = self.ctx_stack.pop().expect("len > 1");
                self.wm.discard_context(ctx)?;
                let revealed = *self.ctx_stack.last().expect("nonempty");
                let revealed_root = self.wm.root_of(revealed)?;
                let slots: Vec<(Symbol, Value)> = cmd
                    .slots
                    .iter()
                    .filter(|(a, _)| a.to_string() != "verb")
                    .cloned()
                    .collect();
                if !slots.is_empty() {
                    let k = self.wm.fresh_element();
                    if let Some(&top) = self.active.last() {
                        self.substates[top].minted.insert(k);
                    }
                    let mut adds = vec![Triple::new(revealed_root, Symbol::id("conclusion"), k)];
                    for (attr, value) in slots {
                        adds.push(Triple::new(k, attr, value));
                    }
                    self.wm.apply_delta(revealed, &adds, &[])?;
                }
                self.set_ps(
                    module,
                    ProcessState::new(module, ProcStatus::Success, 1.0, 0.0, vec![]),
                )?;
            }
            Some("terminate") => {
                if let Some(&top) = self.active.last() {
                    self.substates[top].terminate_requested = true;
                }
                self.set_ps(
                    module,
                    ProcessState::new(module, ProcStatus::Success, 1.0, 0.0, vec![]),
                )?;
            }
            other => {
                self.set_ps(
                    module,
                    ProcessState::new(
                        module,
                        ProcStatus::Failure,
                        0.0,
                        0.0,
                        vec![(
                            Symbol::id("error"),
                            Symbol::str(&format!("unknown wm verb {other:?}")),
                        )],
                    ),
                )?;
            }
        }
        Ok(())
    }

    fn service_semantic(&mut self, cmd: &PendingCommand) -> Result<(), KernelError> {
        let module = ModuleKind::Semantic;
        if cmd.verb().and_then(|s| s.as_ident()) != Some("retrieve") {
            return self.set_ps(
                module,
                ProcessState::new(
                    module,
                    ProcStatus::Failure,
                    0.0,
                    0.0,
                    vec![(Symbol::id("error"), Symbol::id("unknown-verb"))],
                ),
            );
        }
        let mut cue = RetrievalCue::default();
        let word_slot = Symbol::id("word");
        for (attr, value) in &cmd.slots {
            let name = attr.to_string();
            let Some(sym) = value.as_sym() else { continue };
            match name.as_str() {
                "verb" => {}
                "length" => {
                    if let Some(n) = sym.as_number() {
                        cue.constraints.push(Constraint {
                            slot: word_slot.clone(),
                            pred: SlotPredicate::LengthEq(n as usize),
                        });
                    }
                }
                "excludes" | "contains" => {
                    if let Some(c) = sym.to_string().chars().next() {
                        cue.constraints.push(Constraint {
                            slot: word_slot.clone(),
                            pred: if name == "excludes" {
                                SlotPredicate::Excludes(c)
                            } else {
                                SlotPredicate::Contains(c)
                            },
                        });
                    }
                }
                "exclude-word" => {
                    cue.constraints.push(Constraint {
                        slot: word_slot.clone(),
                        pred: SlotPredicate::NotValue(sym.clone()),
                    });
                }
                other if other.starts_with("at-") => {
                    if let (Ok(pos), Some(c)) = (
                        other[3..].parse::<usize>(),
                        sym.to_string().chars().next(),
                    ) {
                        if pos >= 1 {
                            cue.constraints.push(Constraint {
                                slot: word_slot.clone(),
                                pred: SlotPredicate::LetterAt(pos - 1, c),
                            });
                        }
                    }
                }
                _ => {
                    cue.required.insert(attr.clone(), sym.clone());
                }
            }
        }
        let params = RetrievalParams {
            tau_success: self.params.tau_success,
            tau_partial: self.params.tau_partial,
            d: self.params.d,
        };
        let (result, ps) = self.semantic.retrieve(&cue, self.cycle, &params)?;
        match result {
            RetrievalResult::Success(chunk) => {
                let r = self.wm.fresh_element();
                let buf_node = self.buffer_node(module)?;
                let mut adds = vec![
                    Triple::new(buf_node, Symbol::id("result"), r),
                    Triple::new(r, Symbol::id("chunk"), Symbol::id(&chunk.id)),
                ];
                for (slot, value) in &chunk.slots {
                    adds.push(Triple::new(r, slot.clone(), value.clone()));
                }
                let ctx = cmd.issued_from;
                self.wm.apply_delta(ctx, &adds, &[])?;
                self.buffers
                    .get_mut(&module)
                    .expect("exists")
                    .materialized
                    .extend(adds.into_iter().map(|t| (ctx, t)));
                // retrieved chunks are addressable by their id in rule text
                self.aliases.insert(Symbol::id(&chunk.id), r);
            }
            RetrievalResult::Partial { slot, value } => {
                let r = self.wm.fresh_element();
                let buf_node = self.buffer_node(module)?;
                let adds = vec![
                    Triple::new(buf_node, Symbol::id("result"), r),
                    Triple::new(r, slot, value),
                ];
                let ctx = cmd.issued_from;
                self.wm.apply_delta(ctx, &adds, &[])?;
                self.buffers
                    .get_mut(&module)
                    .expect("exists")
                    .materialized
                    .extend(adds.into_iter().map(|t| (ctx, t)));
            }
            RetrievalResult::Failure => {}
        }
        self.set_ps(module, ps)
    }

    fn service_episodic(&mut self, cmd: &PendingCommand) -> Result<(), KernelError> {
        let module = ModuleKind::Episodic;
        match cmd.verb().and_then(|s| s.as_ident()) {
            Some("retrieve") => {
                let mut patterns = Vec::new();
                let mut time_hint = None;
                for (attr, value) in &cmd.slots {
                    let name = attr.to_string();
                    let Some(sym) = value.as_sym() else { continue };
                    match name.as_str() {
                        "verb" => {}
                        "before" => {
                            if let Some(n) = sym.as_number() {
                                time_hint = Some(TimeHint::Before(n as u64));
                            }
                        }
                        "after" => {
                            if let Some(n) = sym.as_number() {
                                time_hint = Some(TimeHint::After(n as u64));
                            }
                        }
                        other => {
                            if let Some(p) = other.strip_prefix("pattern-") {
                                patterns.push((Symbol::id(p), sym.clone()));
                            }
                        }
                    }
                }
                let cue = EpisodeCue { patterns, time_hint };
                let params = EpisodicParams {
                    tau_match: self.params.tau_match,
                    tie_limit: self.params.tie_limit,
                };
                let (result, ps) = self.episodic.retrieve_episode(&cue, &params)?;
                if let EpisodicRetrieval::Success { cycle, score } = result {
                    let r = self.wm.fresh_element();
                    let buf_node = self.buffer_node(module)?;
                    let adds = vec![
                        Triple::new(buf_node, Symbol::id("result"), r),
                        Triple::new(r, Symbol::id("cycle"), Symbol::int(cycle as i64)),
                        Triple::new(r, Symbol::id("score"), Symbol::real(score)),
                    ];
                    let ctx = cmd.issued_from;
                    self.wm.apply_delta(ctx, &adds, &[])?;
                    self.buffers
                        .get_mut(&module)
                        .expect("exists")
                        .materialized
                        .extend(adds.into_iter().map(|t| (ctx, t)));
                }
                self.set_ps(module, ps)?;
            }
            Some("find-repeats") => {
                let scope = match cmd.sym_slot("scope").and_then(|s| s.as_ident()) {
                    Some("world") => self.world_scope.clone(),
                    _ => ScopeFilter::All,
                };
                let range = self.resolve_episode_range(cmd);
                let Some((a, b)) = range else {
                    return self.set_ps(
                        module,
                        ProcessState::new(
                            module,
                            ProcStatus::Failure,
                            0.0,
                            0.0,
                            vec![(Symbol::id("error"), Symbol::id("no-such-range"))],
                        ),
                    );
                };
                let pairs = self.episodic.find_repeated_states(a, b, &scope, true)?;
                let r = self.wm.fresh_element();
                let buf_node = self.buffer_node(module)?;
                let mut adds = vec![
                    Triple::new(buf_node, Symbol::id("result"), r),
                    Triple::new(r, Symbol::id("pair-count"), Symbol::int(pairs.len() as i64)),
                    Triple::new(r, Symbol::id("from"), Symbol::int(a as i64)),
                    Triple::new(r, Symbol::id("to"), Symbol::int(b as i64)),
                ];
                let mut fresh = Vec::new();
                for (i, j) in &pairs {
                    let p = self.wm.fresh_element();
                    fresh.push(p);
                    adds.push(Triple::new(r, Symbol::id("pair"), p));
                    adds.push(Triple::new(p, Symbol::id("first"), Symbol::int(*i as i64)));
                    adds.push(Triple::new(p, Symbol::id("second"), Symbol::int(*j as i64)));
                }
                let ctx = cmd.issued_from;
                self.wm.apply_delta(ctx, &adds, &[])?;
                self.buffers
                    .get_mut(&module)
                    .expect("exists")
                    .materialized
                    .extend(adds.into_iter().map(|t| (ctx, t)));
                self.set_ps(
                    module,
                    ProcessState::new(
                        module,
                        ProcStatus::Success,
                        1.0,
                        0.0,
                        vec![(Symbol::id("pairs"), Symbol::int(pairs.len() as i64))],
                    ),
                )?;
            }
            Some("reconstruct") => {
                let a = cmd.sym_slot("from").and_then(|s| s.as_number());
                let b = cmd.sym_slot("to").and_then(|s| s.as_number());
                let (Some(a), Some(b)) = (a, b) else {
                    return self.set_ps(
                        module,
                        ProcessState::new(
                            module,
                            ProcStatus::Failure,
                            0.0,
                            0.0,
                            vec![(Symbol::id("error"), Symbol::id("bad-range"))],
                        ),
                    );
                };
                let (a, b) = (a as u64, b as u64);
                let parent = *self.ctx_stack.last().expect("nonempty");
                let ctx = self
                    .wm
                    .create_context(ContextKind::Hypothetical, Stance::Past, parent)?;
                self.hyp_contexts_created += 1;
                let root = self.wm.root_of(ctx)?;
                let parent_root = self.wm.root_of(parent)?;
                self.wm.apply_delta(
                    ctx,
                    &[
                        Triple::new(root, Symbol::id("kind"), Symbol::id("hypothetical")),
                        Triple::new(root, Symbol::id("stance"), Stance::Past.as_symbol()),
                        Triple::new(root, Symbol::id("superstate"), parent_root),
                    ],
                    &[],
                )?;
                match self.episodic.reconstruct_range(a, b, &mut self.wm, ctx) {
                    Ok(handles) => {
                        self.ctx_stack.push(ctx);
                        self.set_ps(
                            module,
                            ProcessState::new(
                                module,
                                ProcStatus::Success,
                                1.0,
                                0.0,
                                vec![(Symbol::id("states"), Symbol::int(handles.len() as i64))],
                            ),
                        )?;
                    }
                    Err(e) => {
                        self.wm.discard_context(ctx)?;
                        self.hyp_contexts_created -= 1;
                        self.set_ps(
                            module,
                            ProcessState::new(
                                module,
                                ProcStatus::Failure,
                                0.0,
                                0.0,
                                vec![(Symbol::id("error"), Symbol::str(&e.to_string()))],
                            ),
                        )?;
                    }
                }
            }
            other => {
                self.set_ps(
                    module,
                    ProcessState::new(
                        module,
                        ProcStatus::Failure,
                        0.0,
                        0.0,
                        vec![(
                            Symbol::id("error"),
                            Symbol::str(&format!("unknown episodic verb {other:?}")),
                        )],
                    ),
                )?;
            }
        }
        Ok(())
    }

    fn resolve_episode_range(&self, cmd: &PendingCommand) -> Option<(u64, u64)> {
        match cmd.sym_slot("episode").and_then(|s| s.as_ident()) {
            Some("previous") => {
                let n = self.episode_starts.len();
                if n < 2 {
                    return None;
                }
                let (_, start) = self.episode_starts[n - 2];
                let (_, next_start) = self.episode_starts[n - 1];
                Some((start, next_start.saturating_sub(1)))
            }
            Some("current") => {
                let (_, start) = *self.episode_starts.last()?;
                Some((start, self.episodic.last_cycle()?))
            }
            _ => {
                let a = cmd.sym_slot("from").and_then(|s| s.as_number())? as u64;
                let b = cmd.sym_slot("to").and_then(|s| s.as_number())? as u64;
                Some((a, b))
            }
        }
    }

    fn service_motor(
        &mut self,
        cmd: &PendingCommand,
        env: &mut dyn Environment,
    ) -> Result<Option<(String, bool)>, KernelError> {
        let module = ModuleKind::Motor;
        // reality guard: imagined states never drive the body
        if cmd.issued_from != REAL {
            self.motor_from_hypothetical += 1;
            self.set_ps(
                module,
                ProcessState::new(
                    module,
                    ProcStatus::Failure,
                    0.0,
                    0.0,
                    vec![(Symbol::id("blocked"), Symbol::id("hypothetical-origin"))],
                ),
            )?;
            return Ok(None);
        }
        let Some(verb) = cmd.verb().cloned() else {
            self.set_ps(
                module,
                ProcessState::new(
                    module,
                    ProcStatus::Failure,
                    0.0,
                    0.0,
                    vec![(Symbol::id("error"), Symbol::id("missing-verb"))],
                ),
            )?;
            return Ok(None);
        };
        let args: Vec<(Symbol, Symbol)> = cmd
            .slots
            .iter()
            .filter(|(a, _)| a.to_string() != "verb")
            .filter_map(|(a, v)| v.as_sym().map(|s| (a.clone(), s.clone())))
            .collect();
        let motor_cmd = MotorCommand { verb, args };
        let line = motor_cmd.to_string();
        let report = env.act(&motor_cmd);
        let ps = if report.ok {
            ProcessState::new(
                module,
                ProcStatus::Success,
                1.0,
                0.0,
                vec![(Symbol::id("did"), motor_cmd.verb.clone())],
            )
        } else {
            ProcessState::new(
                module,
                ProcStatus::Failure,
                0.0,
                0.0,
                vec![
                    (Symbol::id("failed"), motor_cmd.verb.clone()),
                    (
                        Symbol::id("reason"),
                        Symbol::str(report.reason.as_deref().unwrap_or("unknown")),
                    ),
                ],
            )
        };
        let ok = report.ok;
        self.set_ps(module, ps)?;
        Ok(Some((line, ok)))
    }
}

fn ps_mirror(state_node: ElementId, ps: &ProcessState) -> Vec<Triple> {
    let mut out = vec![Triple::new(
        state_node,
        Symbol::id("status"),
        Symbol::id(ps.status.name()),
    )];
    if ps.status != ProcStatus::Idle {
        out.push(Triple::new(
            state_node,
            Symbol::id("confidence"),
            Symbol::real(ps.confidence),
        ));
        out.push(Triple::new(
            state_node,
            Symbol::id("familiarity"),
            Symbol::real(ps.familiarity),
        ));
        for (attr, value) in &ps.detail {
            let t = Triple::new(state_node, attr.clone(), value.clone());
            if !out.contains(&t) {
                out.push(t);
            }
        }
    }
    out
}
