use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use super::llm::render;
use super::{AgentBackend, PROMPT_FIX, SYSTEM_PROMPT};
use crate::arch::{
    parse_design, validate_design, DesignPoint, FuKind, Provenance, StructuralViolation, ViolationCode, MAX_GRID_DIM,
    MAX_UNROLL, MAX_VECTORIZE,
};
use crate::kernel::{apply_sw, KernelGraph, KernelSummary};
use crate::mapper::{map_kernel, MapBudget, MapError, MapErrorCode, MappingResult, RepairHint};

/// Why a design did not make it through validation and mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage2Error {
    Structural { violations: Vec<StructuralViolation> },
    Transform { code: String, detail: String },
    Map { error: MapError },
}

impl Stage2Error {
    pub fn code(&self) -> String {
        match self {
            Stage2Error::Structural { violations } => {
                violations.first().map(|v| v.code.as_str()).unwrap_or("STRUCTURAL").to_string()
            }
            Stage2Error::Transform { code, .. } => code.clone(),
            Stage2Error::Map { error } => error.code.as_str().to_string(),
        }
    }
}

impl fmt::Display for Stage2Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage2Error::Structural { violations } => {
                let parts: Vec<String> = violations.iter().map(|v| format!("{}: {}", v.code.as_str(), v.message)).collect();
                f.write_str(&parts.join("; "))
            }
            Stage2Error::Transform { detail, .. } => f.write_str(detail),
            Stage2Error::Map { error } => write!(f, "{error}"),
        }
    }
}

/// Structural validation, software transforms, then mapping.
pub fn stage2_check(d: &DesignPoint, kernel: &KernelGraph, budget: &MapBudget) -> Result<MappingResult, Stage2Error> {
    let violations = validate_design(d);
    if !violations.is_empty() {
        return Err(Stage2Error::Structural { violations });
    }
    let k = apply_sw(kernel, &d.sw).map_err(|e| Stage2Error::Transform { code: e.code().to_string(), detail: e.to_string() })?;
    map_kernel(&k, &d.fabric, budget).map_err(|error| Stage2Error::Map { error })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixed {
    pub design: DesignPoint,
    pub mapping: MappingResult,
    pub rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixFailure {
    pub design: DesignPoint,
    pub error: Stage2Error,
    pub rounds: u32,
}

impl fmt::Display for FixFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FIX_FAILURE after {} rounds: {}", self.rounds, self.error)
    }
}

/// Repeats repair and re-check until the design maps or `max_rounds` pass.
pub fn fix_design(
    d: &DesignPoint,
    err: &Stage2Error,
    kernel: &KernelGraph,
    budget: &MapBudget,
    backend: &AgentBackend,
    max_rounds: u32,
) -> Result<Fixed, FixFailure> {
    let mut design = d.clone();
    let mut error = err.clone();
    for round in 1..=max_rounds.max(1) {
        let repaired = match backend {
            AgentBackend::Llm { client, .. } => llm_repair(client, &design, &error, kernel)
                .or_else(|| heuristic_repair(&design, &error, kernel, budget)),
            AgentBackend::Heuristic { .. } => heuristic_repair(&design, &error, kernel, budget),
        };
        let Some(mut next) = repaired else {
            return Err(FixFailure { design, error, rounds: round - 1 });
        };
        next.provenance = Provenance::Repaired;
        let tag = format!("fixed {}", error.code());
        next.note = if design.note.is_empty() { tag } else { format!("{}; {tag}", design.note) };
        design = next;
        match stage2_check(&design, kernel, budget) {
            Ok(mapping) => return Ok(Fixed { design, mapping, rounds: round }),
            Err(e) => error = e,
        }
    }
    Err(FixFailure { design, error, rounds: max_rounds.max(1) })
}

fn llm_repair(client: &super::LlmClient, d: &DesignPoint, err: &Stage2Error, kernel: &KernelGraph) -> Option<DesignPoint> {
    let report = serde_json::to_string_pretty(err).expect("serializable");
    let prompt = render(
        PROMPT_FIX,
        &[
            ("kernel_name", kernel.name.clone()),
            ("design", crate::arch::serialize_design(d)),
            ("kernel", serde_json::to_string_pretty(&KernelSummary::of(kernel)).expect("serializable")),
            ("error", format!("{err}\n{report}")),
        ],
    );
    match client.ask_json(SYSTEM_PROMPT, &prompt).map(|v| parse_design(&v.to_string())) {
        Ok(Ok(mut fixed)) => {
            fixed.id = d.id.clone();
            Some(fixed)
        }
        Ok(Err(e)) => {
            warn!("LLM repair of {} unparseable ({e}); using rule table", d.id);
            None
        }
        Err(e) => {
            warn!("LLM repair of {} unavailable ({e}); using rule table", d.id);
            None
        }
    }
}

/// Largest legal (unroll, vectorize) pair not above the current one,
/// keeping unroll as high as possible.
fn legal_factors(d: &DesignPoint, kernel: &KernelGraph, below_unroll: bool) -> Option<(u32, u32)> {
    let top_u = if below_unroll { d.sw.unroll_factor.saturating_sub(1) } else { d.sw.unroll_factor };
    for u in (1..=top_u.min(MAX_UNROLL)).rev() {
        for v in (1..=d.sw.vectorize_factor.clamp(1, MAX_VECTORIZE)).rev() {
            let sw = crate::arch::SwParams { unroll_factor: u, vectorize_factor: v };
            if apply_sw(kernel, &sw).is_ok() {
                return Some((u, v));
            }
        }
    }
    None
}

fn reduce_unroll(d: &mut DesignPoint, kernel: &KernelGraph) -> bool {
    match legal_factors(d, kernel, true) {
        Some((u, v)) => {
            d.sw.unroll_factor = u;
            d.sw.vectorize_factor = v;
            true
        }
        None => false,
    }
}

fn grow_to(d: &mut DesignPoint, tiles: u32) -> bool {
    let f = &mut d.fabric;
    let before = f.tile_count();
    loop {
        if f.tile_count() >= tiles {
            break;
        }
        if f.rows <= f.cols && f.rows < MAX_GRID_DIM {
            f.rows += 1;
        } else if f.cols < MAX_GRID_DIM {
            f.cols += 1;
        } else if f.rows < MAX_GRID_DIM {
            f.rows += 1;
        } else {
            break;
        }
    }
    f.tile_count() > before
}

/// Rule table. Returns `None` when no rule applies any more.
pub fn heuristic_repair(d: &DesignPoint, err: &Stage2Error, kernel: &KernelGraph, budget: &MapBudget) -> Option<DesignPoint> {
    let mut n = d.clone();
    let changed = match err {
        Stage2Error::Structural { violations } => {
            for v in violations {
                let f = &mut n.fabric;
                match v.code {
                    ViolationCode::RowsRange => f.rows = f.rows.clamp(1, MAX_GRID_DIM),
                    ViolationCode::ColsRange => f.cols = f.cols.clamp(1, MAX_GRID_DIM),
                    ViolationCode::FuKindsEmpty => f.fu_kinds = kernel.kinds(),
                    ViolationCode::ConfigDepthRange => f.config_mem_depth = f.config_mem_depth.max(1),
                    ViolationCode::MissingLoadstore => {
                        f.fu_kinds.insert(FuKind::Load);
                        f.fu_kinds.insert(FuKind::Store);
                    }
                    ViolationCode::UnrollRange => n.sw.unroll_factor = n.sw.unroll_factor.clamp(1, MAX_UNROLL),
                    ViolationCode::VectorizeRange => {
                        n.sw.vectorize_factor = n.sw.vectorize_factor.clamp(1, MAX_VECTORIZE)
                    }
                }
            }
            true
        }
        Stage2Error::Transform { .. } => match legal_factors(&n, kernel, false) {
            Some((u, v)) => {
                n.sw.unroll_factor = u;
                n.sw.vectorize_factor = v;
                true
            }
            None => false,
        },
        Stage2Error::Map { error } => match (error.code, &error.hint) {
            (MapErrorCode::MissingFuKind, Some(RepairHint::MissingKinds(kinds))) => {
                n.fabric.fu_kinds.extend(kinds.iter().copied());
                true
            }
            (MapErrorCode::InsufficientTiles, Some(RepairHint::RequiredTiles(t))) => {
                grow_to(&mut n, *t) || reduce_unroll(&mut n, kernel)
            }
            (MapErrorCode::ConfigMemOverflow, Some(RepairHint::RequiredIi(ii))) => {
                if *ii <= budget.max_ii {
                    n.fabric.config_mem_depth = *ii;
                    true
                } else {
                    reduce_unroll(&mut n, kernel)
                }
            }
            (MapErrorCode::RoutingFailure, _) => match n.fabric.topology.step_up() {
                Some(t) => {
                    n.fabric.topology = t;
                    true
                }
                None => reduce_unroll(&mut n, kernel) || { let want = n.fabric.tile_count() + 1; grow_to(&mut n, want) },
            },
            _ => {
                reduce_unroll(&mut n, kernel)
                    || n.fabric.topology.step_up().map(|t| n.fabric.topology = t).is_some()
                    || { let want = n.fabric.tile_count() + 1; grow_to(&mut n, want) }
            }
        },
    };
    (changed && n != *d).then_some(n)
}
