//! Modulo-scheduled placement and routing of a kernel onto a fabric.
//!
//! A mapping assigns every DFG node a tile and a start cycle. Each tile issues
//! one operation per modulo slot (`start mod ii`), and each slot needs one
//! configuration context, so `ii <= config_mem_depth`. Values travel over the
//! shortest interconnect route and pay one cycle per hop.

mod bounds;
mod check;
mod search;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{Coord, FabricSpec, FuKind};
use crate::kernel::KernelGraph;

pub use bounds::{min_ii_bounds, rec_mii_by_cycles, rec_mii_by_relaxation, res_mii};
pub use check::{check_mapping, ScheduleViolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapBudget {
    /// Largest initiation interval tried.
    pub max_ii: u32,
    /// Placement attempts allowed per candidate II before giving up on it.
    pub max_steps_per_ii: u64,
}

impl Default for MapBudget {
    fn default() -> Self {
        MapBudget { max_ii: 32, max_steps_per_ii: 50_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub node: u32,
    pub tile: Coord,
    pub cycle: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub src: u32,
    pub dst: u32,
    pub distance: u32,
    pub path: Vec<Coord>,
}

impl Route {
    pub fn hops(&self) -> u32 {
        self.path.len().saturating_sub(1) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingResult {
    pub ii: u32,
    /// Cycles from the first issue to the last result of one iteration.
    pub schedule_len: u32,
    /// Sorted by node id.
    pub placements: Vec<Placement>,
    /// One route per kernel edge, in kernel edge order.
    pub routes: Vec<Route>,
}

impl MappingResult {
    pub fn placement(&self, node: u32) -> Option<&Placement> {
        self.placements
            .binary_search_by_key(&node, |p| p.node)
            .ok()
            .map(|i| &self.placements[i])
    }

    pub fn node_count(&self) -> usize {
        self.placements.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mapping results always serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MapErrorCode {
    MissingFuKind,
    InsufficientTiles,
    ConfigMemOverflow,
    RoutingFailure,
    IiBoundExceeded,
}

impl MapErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            MapErrorCode::MissingFuKind => "MISSING_FU_KIND",
            MapErrorCode::InsufficientTiles => "INSUFFICIENT_TILES",
            MapErrorCode::ConfigMemOverflow => "CONFIG_MEM_OVERFLOW",
            MapErrorCode::RoutingFailure => "ROUTING_FAILURE",
            MapErrorCode::IiBoundExceeded => "II_BOUND_EXCEEDED",
        }
    }
}

impl fmt::Display for MapErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Machine-readable repair hint attached to a [`MapError`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairHint {
    MissingKinds(Vec<FuKind>),
    RequiredTiles(u32),
    RequiredIi(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{code}: {detail}")]
pub struct MapError {
    pub code: MapErrorCode,
    pub detail: String,
    pub hint: Option<RepairHint>,
}

/// Maps `kernel` (already transformed) onto `fabric`, searching II upward
/// from `max(res_mii, rec_mii)`.
pub fn map_kernel(kernel: &KernelGraph, fabric: &FabricSpec, budget: &MapBudget) -> Result<MappingResult, MapError> {
    let missing: Vec<FuKind> = kernel
        .kinds()
        .into_iter()
        .filter(|k| !fabric.supports(*k))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        let names: Vec<&str> = missing.iter().map(|k| k.as_str()).collect();
        return Err(MapError {
            code: MapErrorCode::MissingFuKind,
            detail: format!("kernel needs {} which the fabric lacks", names.join(", ")),
            hint: Some(RepairHint::MissingKinds(missing)),
        });
    }

    let (res, rec) = min_ii_bounds(kernel, fabric);
    if res > budget.max_ii {
        let need = required_tiles(kernel, budget.max_ii);
        return Err(MapError {
            code: MapErrorCode::InsufficientTiles,
            detail: format!(
                "res_mii {res} exceeds max_ii {} on {} tiles; need {need} tiles",
                budget.max_ii,
                fabric.tile_count()
            ),
            hint: Some(RepairHint::RequiredTiles(need)),
        });
    }
    if rec > budget.max_ii {
        return Err(MapError {
            code: MapErrorCode::IiBoundExceeded,
            detail: format!("rec_mii {rec} exceeds max_ii {}", budget.max_ii),
            hint: None,
        });
    }

    let problem = search::Problem::new(kernel, fabric);
    let mut exhausted = false;
    for ii in res.max(rec).max(1)..=budget.max_ii {
        match problem.solve(ii, budget.max_steps_per_ii) {
            search::Outcome::Found(m) => {
                if m.ii > fabric.config_mem_depth {
                    return Err(MapError {
                        code: MapErrorCode::ConfigMemOverflow,
                        detail: format!(
                            "smallest feasible ii {} exceeds config_mem_depth {}",
                            m.ii, fabric.config_mem_depth
                        ),
                        hint: Some(RepairHint::RequiredIi(m.ii)),
                    });
                }
                return Ok(m);
            }
            search::Outcome::Infeasible => {}
            search::Outcome::BudgetExhausted => exhausted = true,
        }
    }
    if exhausted {
        Err(MapError {
            code: MapErrorCode::IiBoundExceeded,
            detail: format!("placement budget exhausted before finding a schedule with ii <= {}", budget.max_ii),
            hint: None,
        })
    } else {
        Err(MapError {
            code: MapErrorCode::RoutingFailure,
            detail: format!(
                "no placement closes the loop-carried recurrences with routing delays for ii <= {}",
                budget.max_ii
            ),
            hint: None,
        })
    }
}

fn required_tiles(kernel: &KernelGraph, max_ii: u32) -> u32 {
    let per_kind = kernel.census().values().map(|&c| c as u32).max().unwrap_or(0);
    let total = kernel.nodes.len() as u32;
    per_kind.max(total).div_ceil(max_ii.max(1))
}

/// In-order single-issue baseline cycles over CGRA cycles.
///
/// `trip_after_transforms` is the trip count of the kernel that was mapped.
pub fn speedup(original: &KernelGraph, mapping: &MappingResult, trip_after_transforms: u64) -> f64 {
    let baseline = original.trip_count as f64 * original.sequential_cycles_per_iteration() as f64;
    let cgra = mapping.schedule_len as f64
        + mapping.ii as f64 * (trip_after_transforms.saturating_sub(1)) as f64;
    baseline / cgra
}
