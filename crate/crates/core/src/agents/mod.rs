//! Proposer, repair and judge agents.
//!
//! Every agent has a deterministic heuristic form and an LLM form that share
//! inputs and outputs. LLM failures never propagate: each call falls back to
//! the heuristic with a logged warning.

mod fix;
mod judge;
pub mod llm;
mod propose;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{DesignPoint, FuKind, MAX_GRID_DIM, MAX_UNROLL, MAX_VECTORIZE};
use crate::costs::{EvalReport, Objective};
use crate::kernel::KernelSummary;
use crate::select::TraceRecord;

pub use fix::{fix_design, heuristic_repair, stage2_check, FixFailure, Fixed, Stage2Error};
pub use judge::{
    coarse_judge, proxy_power, proxy_score, structural_wiring, CandidateSummary, Lesson, LearnedJudge, JUDGE_FEATURES,
    LESSON_CAP,
};
pub use llm::{LlmClient, LlmConfig};
pub use propose::{propose, Proposal};

pub(crate) const PROMPT_PROPOSE: &str = include_str!("../../data/prompts/propose.v1.txt");
pub(crate) const PROMPT_FIX: &str = include_str!("../../data/prompts/fix.v1.txt");
pub(crate) const PROMPT_COARSE: &str = include_str!("../../data/prompts/coarse.v1.txt");
pub(crate) const PROMPT_SELECT: &str = include_str!("../../data/prompts/select.v1.txt");
pub(crate) const SYSTEM_PROMPT: &str = include_str!("../../data/prompts/system.v1.txt");

#[derive(Debug, Clone)]
pub enum AgentBackend {
    Heuristic { seed: u64 },
    /// `seed` drives the heuristic fallback.
    Llm { client: LlmClient, seed: u64 },
}

impl AgentBackend {
    pub fn seed(&self) -> u64 {
        match self {
            AgentBackend::Heuristic { seed } | AgentBackend::Llm { seed, .. } => *seed,
        }
    }

    pub fn is_llm(&self) -> bool {
        matches!(self, AgentBackend::Llm { .. })
    }
}

/// Deterministic stream for one (seed, iteration, purpose) triple.
pub(crate) fn stream(seed: u64, iteration: u64, salt: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt);
    r
}

/// Search box the proposer stays inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignBounds {
    pub max_rows: u32,
    pub max_cols: u32,
    pub max_config_depth: u32,
    pub max_unroll: u32,
    pub max_vectorize: u32,
    pub data_mem_kb: Vec<u32>,
}

impl Default for DesignBounds {
    fn default() -> Self {
        DesignBounds {
            max_rows: 8,
            max_cols: 8,
            max_config_depth: 32,
            max_unroll: MAX_UNROLL,
            max_vectorize: MAX_VECTORIZE,
            data_mem_kb: vec![0, 8, 16],
        }
    }
}

impl DesignBounds {
    pub fn check(&self) -> Result<(), String> {
        let ok = (1..=MAX_GRID_DIM).contains(&self.max_rows)
            && (1..=MAX_GRID_DIM).contains(&self.max_cols)
            && self.max_config_depth >= 1
            && (1..=MAX_UNROLL).contains(&self.max_unroll)
            && (1..=MAX_VECTORIZE).contains(&self.max_vectorize)
            && !self.data_mem_kb.is_empty();
        if ok {
            Ok(())
        } else {
            Err(format!("design bounds out of range: {self:?}"))
        }
    }

    /// Forces every numeric field into the box; empty kind sets get `fallback`.
    pub fn clamp(&self, d: &mut DesignPoint, fallback: &BTreeSet<FuKind>) {
        let f = &mut d.fabric;
        f.rows = f.rows.clamp(1, self.max_rows);
        f.cols = f.cols.clamp(1, self.max_cols);
        f.config_mem_depth = f.config_mem_depth.clamp(1, self.max_config_depth);
        if f.fu_kinds.is_empty() {
            f.fu_kinds = fallback.clone();
        }
        if !self.data_mem_kb.contains(&f.data_mem_kb) {
            f.data_mem_kb = *self.data_mem_kb.iter().min_by_key(|m| m.abs_diff(f.data_mem_kb)).unwrap();
        }
        if f.data_mem_kb > 0 {
            f.fu_kinds.insert(FuKind::Load);
            f.fu_kinds.insert(FuKind::Store);
        }
        d.sw.unroll_factor = d.sw.unroll_factor.clamp(1, self.max_unroll);
        d.sw.vectorize_factor = d.sw.vectorize_factor.clamp(1, self.max_vectorize);
    }

    pub fn contains(&self, d: &DesignPoint) -> bool {
        let f = &d.fabric;
        (1..=self.max_rows).contains(&f.rows)
            && (1..=self.max_cols).contains(&f.cols)
            && (1..=self.max_config_depth).contains(&f.config_mem_depth)
            && !f.fu_kinds.is_empty()
            && self.data_mem_kb.contains(&f.data_mem_kb)
            && (1..=self.max_unroll).contains(&d.sw.unroll_factor)
            && (1..=self.max_vectorize).contains(&d.sw.vectorize_factor)
    }
}

/// Outcome recorded for one design of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EntryOutcome {
    Evaluated { ii: u32, report: EvalReport },
    Failed { code: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: u64,
    pub design: DesignPoint,
    pub outcome: EntryOutcome,
}

impl HistoryEntry {
    pub fn report(&self) -> Option<&EvalReport> {
        match &self.outcome {
            EntryOutcome::Evaluated { report, .. } => Some(report),
            EntryOutcome::Failed { .. } => None,
        }
    }
}

/// Append-only record of every design tried, plus the selection trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    entries: Vec<HistoryEntry>,
    pub trace: Vec<TraceRecord>,
}

fn better(a: &EvalReport, b: &EvalReport) -> bool {
    a.score.total_cmp(&b.score).then_with(|| a.design_id.cmp(&b.design_id)).is_lt()
}

impl History {
    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn last_iteration(&self) -> u64 {
        self.entries.last().map(|e| e.iteration).unwrap_or(0)
    }

    /// Adds one iteration's entries, sorted by design id.
    ///
    /// # Panics
    /// If `iteration` precedes an iteration already recorded.
    pub fn append_iteration(&mut self, iteration: u64, mut entries: Vec<HistoryEntry>) {
        assert!(iteration >= self.last_iteration(), "history is append-only");
        assert!(entries.iter().all(|e| e.iteration == iteration));
        entries.sort_by(|a, b| a.design.id.cmp(&b.design.id));
        self.entries.extend(entries);
    }

    /// Lowest-scoring evaluated entry (feasible designs always score lower).
    pub fn best(&self) -> Option<(&DesignPoint, &EvalReport)> {
        let mut best: Option<(&DesignPoint, &EvalReport)> = None;
        for e in &self.entries {
            if let Some(r) = e.report() {
                if best.is_none_or(|(_, b)| better(r, b)) {
                    best = Some((&e.design, r));
                }
            }
        }
        best
    }

    pub fn best_feasible(&self) -> Option<(&DesignPoint, &EvalReport)> {
        self.best().filter(|(_, r)| r.feasible)
    }

    /// Evaluated `(design, report)` pairs of the last `iterations` iterations.
    pub fn window(&self, iterations: u64) -> Vec<(DesignPoint, EvalReport)> {
        let from = self.last_iteration().saturating_sub(iterations.saturating_sub(1)).max(1);
        self.entries
            .iter()
            .filter(|e| e.iteration >= from)
            .filter_map(|e| e.report().map(|r| (e.design.clone(), r.clone())))
            .collect()
    }

    pub fn signatures(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.design.signature()).collect()
    }
}

/// Everything the proposer sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRequest {
    pub iteration: u64,
    pub kernel: KernelSummary,
    pub objective: Objective,
    pub window: Vec<(DesignPoint, EvalReport)>,
    pub best: Option<(DesignPoint, EvalReport)>,
    pub count: usize,
    pub bounds: DesignBounds,
    /// Signatures already tried; the heuristic avoids repeating them.
    #[serde(default)]
    pub tried: BTreeSet<String>,
}
