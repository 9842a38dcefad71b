//! Re-verifies a [`MappingResult`] from scratch, independent of the search.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::MappingResult;
use crate::arch::FabricSpec;
use crate::kernel::KernelGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleViolation {
    pub rule: &'static str,
    pub detail: String,
}

/// Returns every broken mapping rule (empty = sound).
pub fn check_mapping(kernel: &KernelGraph, fabric: &FabricSpec, m: &MappingResult) -> Vec<ScheduleViolation> {
    let mut out = Vec::new();
    let mut fail = |rule: &'static str, detail: String| out.push(ScheduleViolation { rule, detail });

    if m.ii == 0 {
        fail("ii", "ii must be positive".into());
        return out;
    }
    if m.ii > fabric.config_mem_depth {
        fail("config_depth", format!("ii {} > config_mem_depth {}", m.ii, fabric.config_mem_depth));
    }

    let mut placed = BTreeMap::new();
    for p in &m.placements {
        if placed.insert(p.node, p).is_some() {
            fail("placement", format!("node {} placed twice", p.node));
        }
    }
    let mut slots = BTreeSet::new();
    for n in &kernel.nodes {
        let Some(p) = placed.get(&n.id) else {
            fail("placement", format!("node {} not placed", n.id));
            continue;
        };
        if !fabric.contains(p.tile) {
            fail("placement", format!("node {} on {} outside the grid", n.id, p.tile));
        }
        if !fabric.supports(n.kind) {
            fail("resource", format!("node {} needs {} missing from the fabric", n.id, n.kind));
        }
        if !slots.insert((p.tile, p.cycle % m.ii)) {
            fail("resource", format!("tile {} slot {} used twice", p.tile, p.cycle % m.ii));
        }
        if p.cycle + n.latency > m.schedule_len {
            fail("schedule_len", format!("node {} finishes after schedule_len {}", n.id, m.schedule_len));
        }
    }
    if placed.len() != kernel.nodes.len() {
        fail("placement", format!("{} placements for {} nodes", placed.len(), kernel.nodes.len()));
    }

    if m.routes.len() != kernel.edges.len() {
        fail("routing", format!("{} routes for {} edges", m.routes.len(), kernel.edges.len()));
        return out;
    }
    for (e, r) in kernel.edges.iter().zip(&m.routes) {
        if (r.src, r.dst, r.distance) != (e.src, e.dst, e.distance) {
            fail("routing", format!("route {}->{} does not match edge {}->{}", r.src, r.dst, e.src, e.dst));
            continue;
        }
        let (Some(pu), Some(pv)) = (placed.get(&e.src), placed.get(&e.dst)) else { continue };
        if r.path.first() != Some(&pu.tile) || r.path.last() != Some(&pv.tile) {
            fail("routing", format!("route {}->{} endpoints do not match placements", e.src, e.dst));
            continue;
        }
        for w in r.path.windows(2) {
            let adjacent = fabric.neighbors(w[0]).map(|n| n.contains(&w[1])).unwrap_or(false);
            if !adjacent {
                fail("routing", format!("route {}->{} steps {} -> {} between non-neighbors", e.src, e.dst, w[0], w[1]));
            }
        }
        let lat = kernel.node(e.src).map(|n| n.latency).unwrap_or(0) as i64;
        let ready = pu.cycle as i64 + lat + r.hops() as i64 - e.distance as i64 * m.ii as i64;
        if (pv.cycle as i64) < ready {
            fail(
                "dependence",
                format!("edge {}->{} (d={}): start {} < required {}", e.src, e.dst, e.distance, pv.cycle, ready),
            );
        }
    }
    out
}
