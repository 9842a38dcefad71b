//! Analytic power/area surrogate, the scalar objective, and tool-side
//! evaluation and selection of mapped candidates.
//!
//! With `tiles = rows * cols`, `w` the wiring multiplier of the topology and
//! `L(x) = 1 + x * (lanes - 1)`:
//!
//! ```text
//! area  = w * tiles * (tile_area + sum_k area(k) * L(lane_area_extra) + depth * ctx_area)
//!       + tiles * data_mem_kb * data_mem_area
//! power = w * (tiles * (tile_power + sum_k power(k) * L(lane_power_extra) + depth * ctx_power)
//!              + activity_power * nodes / ii * L(lane_power_extra))
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{DesignPoint, FuKind, Topology};
use crate::kernel::KernelGraph;
use crate::mapper::{speedup, MappingResult};

/// Score offset of designs that miss the speedup constraint.
pub const INFEASIBLE_PENALTY: f64 = 1e6;

const DEFAULT_COEFFS: &str = include_str!("../data/cost_coeffs.json");
const COEFFS_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("EVAL_ON_UNMAPPED: design `{0}` has no mapping")]
    EvalOnUnmapped(String),
    #[error("EMPTY_CANDIDATE_SET: nothing to select from")]
    EmptyCandidateSet,
    #[error("INVALID_COEFFS: {0}")]
    InvalidCoeffs(String),
    #[error("IO_ERROR reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CostError {
    pub fn code(&self) -> &'static str {
        match self {
            CostError::EvalOnUnmapped(_) => "EVAL_ON_UNMAPPED",
            CostError::EmptyCandidateSet => "EMPTY_CANDIDATE_SET",
            CostError::InvalidCoeffs(_) => "INVALID_COEFFS",
            CostError::Io { .. } => "IO_ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostCoeffs {
    pub schema_version: u32,
    pub fu_power_mw: BTreeMap<FuKind, f64>,
    pub fu_area_kum2: BTreeMap<FuKind, f64>,
    pub tile_base_power_mw: f64,
    pub tile_base_area_kum2: f64,
    pub ctx_power_mw: f64,
    pub ctx_area_kum2: f64,
    pub data_mem_area_kum2_per_kb: f64,
    /// Dynamic power per scheduled operation per cycle.
    pub activity_power_mw: f64,
    pub wiring: BTreeMap<Topology, f64>,
    pub lane_power_extra: f64,
    pub lane_area_extra: f64,
}

impl Default for CostCoeffs {
    fn default() -> Self {
        CostCoeffs::from_json(DEFAULT_COEFFS).expect("shipped coefficients are valid")
    }
}

impl CostCoeffs {
    pub fn from_json(text: &str) -> Result<Self, CostError> {
        let c: CostCoeffs = serde_json::from_str(text).map_err(|e| CostError::InvalidCoeffs(e.to_string()))?;
        c.check()?;
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CostError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<(), CostError> {
        let bad = |m: String| Err(CostError::InvalidCoeffs(m));
        if self.schema_version != COEFFS_SCHEMA {
            return bad(format!("schema_version {} (expected {COEFFS_SCHEMA})", self.schema_version));
        }
        for (name, table) in [("fu_power_mw", &self.fu_power_mw), ("fu_area_kum2", &self.fu_area_kum2)] {
            if let Some(k) = FuKind::ALL.iter().find(|k| !table.contains_key(k)) {
                return bad(format!("{name} lacks {k}"));
            }
            if let Some((k, v)) = table.iter().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
                return bad(format!("{name}[{k}] = {v} must be positive"));
            }
        }
        let scalars = [
            ("tile_base_power_mw", self.tile_base_power_mw),
            ("tile_base_area_kum2", self.tile_base_area_kum2),
            ("ctx_power_mw", self.ctx_power_mw),
            ("ctx_area_kum2", self.ctx_area_kum2),
            ("data_mem_area_kum2_per_kb", self.data_mem_area_kum2_per_kb),
            ("activity_power_mw", self.activity_power_mw),
            ("lane_power_extra", self.lane_power_extra),
            ("lane_area_extra", self.lane_area_extra),
        ];
        if let Some((name, v)) = scalars.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return bad(format!("{name} = {v} must be positive"));
        }
        let mut prev = 0.0;
        for t in Topology::ALL {
            let Some(&w) = self.wiring.get(&t) else { return bad(format!("wiring lacks {t}")) };
            if !(w > prev && w.is_finite()) {
                return bad("wiring multipliers must be positive and increase MESH < KINGMESH < CROSSBAR".into());
            }
            prev = w;
        }
        Ok(())
    }

    pub fn wiring(&self, t: Topology) -> f64 {
        self.wiring[&t]
    }
}

fn lane_mult(extra: f64, lanes: u32) -> f64 {
    1.0 + extra * (lanes.max(1) - 1) as f64
}

/// `(power_mw, area_kum2)` of `d` running mapping `m`.
pub fn estimate_ppa(d: &DesignPoint, m: &MappingResult, c: &CostCoeffs) -> (f64, f64) {
    let f = &d.fabric;
    let tiles = f.tile_count() as f64;
    let lanes = d.sw.vectorize_factor;
    let (lp, la) = (lane_mult(c.lane_power_extra, lanes), lane_mult(c.lane_area_extra, lanes));
    let w = c.wiring(f.topology);
    let depth = f.config_mem_depth as f64;

    let fu_area: f64 = f.fu_kinds.iter().map(|k| c.fu_area_kum2[k]).sum();
    let fu_power: f64 = f.fu_kinds.iter().map(|k| c.fu_power_mw[k]).sum();

    let area = w * tiles * (c.tile_base_area_kum2 + fu_area * la + depth * c.ctx_area_kum2)
        + tiles * f.data_mem_kb as f64 * c.data_mem_area_kum2_per_kb;
    let ops_per_cycle = m.node_count() as f64 / m.ii.max(1) as f64;
    let power = w
        * (tiles * (c.tile_base_power_mw + fu_power * lp + depth * c.ctx_power_mw)
            + c.activity_power_mw * ops_per_cycle * lp);
    (power, area)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectiveMode {
    MinPower,
    MaxPowerEfficiency,
}

impl fmt::Display for ObjectiveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveMode::MinPower => "min-power",
            ObjectiveMode::MaxPowerEfficiency => "max-power-efficiency",
        })
    }
}

impl FromStr for ObjectiveMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "min-power" => Ok(ObjectiveMode::MinPower),
            "max-power-efficiency" => Ok(ObjectiveMode::MaxPowerEfficiency),
            _ => Err(format!("unknown objective `{s}` (expected min-power or max-power-efficiency)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub mode: ObjectiveMode,
    #[serde(default = "default_min_speedup")]
    pub min_speedup: f64,
}

fn default_min_speedup() -> f64 {
    1.5
}

impl Default for Objective {
    fn default() -> Self {
        Objective { mode: ObjectiveMode::MinPower, min_speedup: default_min_speedup() }
    }
}

impl Objective {
    pub fn is_valid(&self) -> bool {
        self.min_speedup > 0.0 && self.min_speedup.is_finite()
    }

    /// Lower is better. Infeasible designs score `INFEASIBLE_PENALTY + shortfall`.
    pub fn score(&self, speedup: f64, power_mw: f64) -> f64 {
        if speedup < self.min_speedup {
            return INFEASIBLE_PENALTY + (self.min_speedup - speedup);
        }
        match self.mode {
            ObjectiveMode::MinPower => power_mw,
            ObjectiveMode::MaxPowerEfficiency => -(speedup / power_mw),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub design_id: String,
    pub speedup: f64,
    pub power_mw: f64,
    pub area_kum2: f64,
    pub power_efficiency: f64,
    pub score: f64,
    pub feasible: bool,
}

/// A design together with its Stage 2 outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub design: DesignPoint,
    pub mapping: Option<MappingResult>,
}

impl Candidate {
    pub fn mapped(design: DesignPoint, mapping: MappingResult) -> Self {
        Candidate { design, mapping: Some(mapping) }
    }

    /// Speedup of the mapped, transformed kernel over the scalar baseline.
    pub fn speedup(&self, original: &KernelGraph) -> Option<f64> {
        let m = self.mapping.as_ref()?;
        let factor = self.design.sw.unroll_factor as u64 * self.design.sw.vectorize_factor as u64;
        Some(speedup(original, m, original.trip_count / factor.max(1)))
    }
}

pub fn evaluate_one(c: &Candidate, kernel: &KernelGraph, obj: &Objective, coeffs: &CostCoeffs) -> Result<EvalReport, CostError> {
    let m = c.mapping.as_ref().ok_or_else(|| CostError::EvalOnUnmapped(c.design.id.clone()))?;
    let s = c.speedup(kernel).expect("mapping present");
    let (power, area) = estimate_ppa(&c.design, m, coeffs);
    Ok(EvalReport {
        design_id: c.design.id.clone(),
        speedup: s,
        power_mw: power,
        area_kum2: area,
        power_efficiency: s / power,
        score: obj.score(s, power),
        feasible: s >= obj.min_speedup,
    })
}

/// One report per candidate, in input order.
pub fn tool_evaluate(
    candidates: &[Candidate],
    kernel: &KernelGraph,
    obj: &Objective,
    coeffs: &CostCoeffs,
) -> Result<Vec<EvalReport>, CostError> {
    if let Some(c) = candidates.iter().find(|c| c.mapping.is_none()) {
        return Err(CostError::EvalOnUnmapped(c.design.id.clone()));
    }
    candidates.par_iter().map(|c| evaluate_one(c, kernel, obj, coeffs)).collect()
}

/// Lowest score; ties go to the lexicographically smallest id.
pub fn tool_select(reports: &[EvalReport]) -> Result<(String, f64), CostError> {
    reports
        .iter()
        .min_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.design_id.cmp(&b.design_id)))
        .map(|r| (r.design_id.clone(), r.score))
        .ok_or(CostError::EmptyCandidateSet)
}
