//! Module process-states: the per-module status summaries mirrored into
//! working-memory buffers so rules can react to how a module's last
//! operation went (success, failure, partial results, feelings of knowing).

use crate::rules::ModuleKind;
use crate::symbols::Symbol;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcStatus {
    Idle,
    Pending,
    Success,
    Failure,
    Partial,
}

impl ProcStatus {
    pub fn name(self) -> &'static str {
        match self {
            ProcStatus::Idle => "idle",
            ProcStatus::Pending => "pending",
            ProcStatus::Success => "success",
            ProcStatus::Failure => "failure",
            ProcStatus::Partial => "partial",
        }
    }
}

/// Summary of one module's processing state.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessState {
    pub module: ModuleKind,
    pub status: ProcStatus,
    pub confidence: f64,
    pub familiarity: f64,
    pub detail: Vec<(Symbol, Symbol)>,
}

impl ProcessState {
    pub fn idle(module: ModuleKind) -> ProcessState {
        ProcessState {
            module,
            status: ProcStatus::Idle,
            confidence: 0.0,
            familiarity: 0.0,
            detail: Vec::new(),
        }
    }

    pub fn pending(module: ModuleKind) -> ProcessState {
        ProcessState {
            status: ProcStatus::Pending,
            ..ProcessState::idle(module)
        }
    }

    pub fn new(
        module: ModuleKind,
        status: ProcStatus,
        confidence: f64,
        familiarity: f64,
        detail: Vec<(Symbol, Symbol)>,
    ) -> ProcessState {
        ProcessState {
            module,
            status,
            confidence: confidence.clamp(0.0, 1.0),
            familiarity: familiarity.clamp(0.0, 1.0),
            detail: if status == ProcStatus::Idle {
                Vec::new()
            } else {
                detail
            },
        }
    }
}

/// Squash an unbounded score into [0, 1].
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
