use std::collections::BTreeSet;

use super::{DfgEdge, DfgNode, KernelError, KernelGraph};
use crate::arch::SwParams;

fn check_factor(k: &KernelGraph, factor: u32, transform: &'static str) -> Result<(), KernelError> {
    if factor == 0 {
        return Err(KernelError::ZeroFactor { transform });
    }
    if k.trip_count % factor as u64 != 0 {
        return Err(KernelError::NonDivisibleFactor { transform, factor, trip_count: k.trip_count });
    }
    Ok(())
}

/// Id stride between unrolled copies: copy `c` of node `n` gets id
/// `c * stride + n`, with `stride = max id + 1`.
pub(crate) fn unroll_stride(k: &KernelGraph) -> u32 {
    k.nodes.iter().map(|n| n.id).max().unwrap_or(0) + 1
}

/// Replicates the loop body `factor` times.
///
/// A dependence of distance `d` leaving copy `i` lands in copy
/// `(i + d) % factor`, `(i + d) / factor` unrolled iterations later.
pub fn unroll(k: &KernelGraph, factor: u32) -> Result<KernelGraph, KernelError> {
    check_factor(k, factor, "unroll")?;
    if factor == 1 {
        return Ok(k.clone());
    }
    let stride = unroll_stride(k);
    let mut nodes = Vec::with_capacity(k.nodes.len() * factor as usize);
    for copy in 0..factor {
        nodes.extend(k.nodes.iter().map(|n| DfgNode { id: copy * stride + n.id, ..n.clone() }));
    }
    let mut edges = Vec::with_capacity(k.edges.len() * factor as usize);
    for copy in 0..factor {
        for e in &k.edges {
            let target = copy + e.distance;
            edges.push(DfgEdge {
                src: copy * stride + e.src,
                dst: (target % factor) * stride + e.dst,
                distance: target / factor,
            });
        }
    }
    let out = KernelGraph {
        name: k.name.clone(),
        description: k.description.clone(),
        trip_count: k.trip_count / factor as u64,
        lane_width: k.lane_width,
        nodes,
        edges,
    };
    debug_assert!(out.validate().is_ok());
    Ok(out)
}

/// Packs `factor` consecutive iterations into SIMD lanes.
///
/// Legal only when every carried distance is at least `factor`. A carried
/// distance `d` becomes `d / factor` vector iterations, plus an extra edge at
/// `d / factor + 1` when `factor` does not divide `d` (the upper lanes spill
/// into the following vector iteration).
pub fn vectorize(k: &KernelGraph, factor: u32) -> Result<KernelGraph, KernelError> {
    check_factor(k, factor, "vectorize")?;
    if let Some(e) = k.carried_edges().find(|e| e.distance < factor) {
        return Err(KernelError::CarriedDepBlocksVectorization {
            src: e.src,
            dst: e.dst,
            distance: e.distance,
            factor,
        });
    }
    if factor == 1 {
        return Ok(k.clone());
    }
    let mut seen = BTreeSet::new();
    let mut edges = Vec::with_capacity(k.edges.len());
    let mut push = |e: DfgEdge| {
        if seen.insert(e) {
            edges.push(e);
        }
    };
    for e in &k.edges {
        if e.distance == 0 {
            push(*e);
            continue;
        }
        let base = e.distance / factor;
        push(DfgEdge { distance: base, ..*e });
        if e.distance % factor != 0 {
            push(DfgEdge { distance: base + 1, ..*e });
        }
    }
    let out = KernelGraph {
        name: k.name.clone(),
        description: k.description.clone(),
        trip_count: k.trip_count / factor as u64,
        lane_width: k.lane_width * factor,
        nodes: k.nodes.clone(),
        edges,
    };
    debug_assert!(out.validate().is_ok());
    Ok(out)
}

/// Applies a design's software parameters: unroll first, then vectorize.
pub fn apply_sw(k: &KernelGraph, sw: &SwParams) -> Result<KernelGraph, KernelError> {
    let unrolled = unroll(k, sw.unroll_factor)?;
    vectorize(&unrolled, sw.vectorize_factor)
}
