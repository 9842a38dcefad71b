//! Loop-kernel dataflow graphs and the software-side transforms applied to
//! them (unrolling, vectorization).

mod corpus;
mod transform;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{FuKind, ParseError};

pub use corpus::{builtin_kernel, builtin_names, load_kernel};
pub use transform::{apply_sw, unroll, vectorize};

pub const MAX_LATENCY: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DfgNode {
    pub id: u32,
    pub kind: FuKind,
    #[serde(rename = "latency")]
    pub latency: u32,
}

/// Data dependence; `distance` counts loop iterations (0 = same iteration).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DfgEdge {
    pub src: u32,
    pub dst: u32,
    pub distance: u32,
}

fn is_one(v: &u32) -> bool {
    *v == 1
}

fn one() -> u32 {
    1
}

/// Innermost-loop body as a dataflow graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelGraph {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub trip_count: u64,
    /// SIMD lanes each node operates on (set by vectorization).
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub lane_width: u32,
    pub nodes: Vec<DfgNode>,
    pub edges: Vec<DfgEdge>,
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("NON_DIVISIBLE_FACTOR: {transform} factor {factor} does not divide trip count {trip_count}")]
    NonDivisibleFactor { transform: &'static str, factor: u32, trip_count: u64 },
    #[error("CARRIED_DEP_BLOCKS_VECTORIZATION: edge {src}->{dst} has distance {distance} < factor {factor}")]
    CarriedDepBlocksVectorization { src: u32, dst: u32, distance: u32, factor: u32 },
    #[error("INVALID_FACTOR: {transform} factor must be >= 1")]
    ZeroFactor { transform: &'static str },
    #[error("UNKNOWN_KERNEL: `{0}` is neither a built-in kernel nor a readable file")]
    UnknownKernel(String),
    #[error("INVALID_KERNEL: {0}")]
    Invalid(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("IO_ERROR reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl KernelError {
    pub fn code(&self) -> &'static str {
        match self {
            KernelError::NonDivisibleFactor { .. } => "NON_DIVISIBLE_FACTOR",
            KernelError::CarriedDepBlocksVectorization { .. } => "CARRIED_DEP_BLOCKS_VECTORIZATION",
            KernelError::ZeroFactor { .. } => "INVALID_FACTOR",
            KernelError::UnknownKernel(_) => "UNKNOWN_KERNEL",
            KernelError::Invalid(_) => "INVALID_KERNEL",
            KernelError::Parse(e) => e.code(),
            KernelError::Io { .. } => "IO_ERROR",
        }
    }
}

impl KernelGraph {
    pub fn node(&self, id: u32) -> Option<&DfgNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Node id -> position in `nodes`.
    pub fn index_of(&self) -> BTreeMap<u32, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    pub fn census(&self) -> BTreeMap<FuKind, usize> {
        let mut m = BTreeMap::new();
        for n in &self.nodes {
            *m.entry(n.kind).or_insert(0) += 1;
        }
        m
    }

    pub fn kinds(&self) -> BTreeSet<FuKind> {
        self.nodes.iter().map(|n| n.kind).collect()
    }

    pub fn carried_edges(&self) -> impl Iterator<Item = &DfgEdge> {
        self.edges.iter().filter(|e| e.distance > 0)
    }

    /// Sum of node latencies: cycles for one iteration on a single-issue
    /// in-order core.
    pub fn sequential_cycles_per_iteration(&self) -> u64 {
        self.nodes.iter().map(|n| n.latency as u64).sum()
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |m: String| Err(KernelError::Invalid(format!("{}: {m}", self.name)));
        if self.nodes.is_empty() {
            return bad("kernel has no nodes".into());
        }
        if self.trip_count == 0 {
            return bad("trip_count must be positive".into());
        }
        if self.lane_width == 0 {
            return bad("lane_width must be positive".into());
        }
        let index = self.index_of();
        if index.len() != self.nodes.len() {
            return bad("duplicate node ids".into());
        }
        for n in &self.nodes {
            if !(1..=MAX_LATENCY).contains(&n.latency) {
                return bad(format!("node {} latency {} outside [1, {MAX_LATENCY}]", n.id, n.latency));
            }
        }
        for e in &self.edges {
            let (Some(&s), Some(&d)) = (index.get(&e.src), index.get(&e.dst)) else {
                return bad(format!("edge {}->{} references a missing node", e.src, e.dst));
            };
            if e.src == e.dst && e.distance == 0 {
                return bad(format!("self edge on {} needs distance >= 1", e.src));
            }
            if e.distance > 0 {
                let (sk, dk) = (self.nodes[s].kind, self.nodes[d].kind);
                if dk != FuKind::Phi && dk != sk {
                    return bad(format!(
                        "carried edge {}->{} must target a PHI or an accumulator of the same kind",
                        e.src, e.dst
                    ));
                }
            }
        }
        if self.intra_topo_order().is_none() {
            return bad("distance-0 edges form a cycle".into());
        }
        Ok(())
    }

    /// Topological order (node positions) over distance-0 edges, `None` if cyclic.
    pub fn intra_topo_order(&self) -> Option<Vec<usize>> {
        let index = self.index_of();
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut succ = vec![Vec::new(); n];
        for e in self.edges.iter().filter(|e| e.distance == 0) {
            let (s, d) = (*index.get(&e.src)?, *index.get(&e.dst)?);
            succ[s].push(d);
            indeg[d] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &j in &succ[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn from_json(text: &str) -> Result<KernelGraph, KernelError> {
        let k: KernelGraph = serde_json::from_str(text).map_err(|e| {
            let pe = ParseError::from_json(e);
            KernelError::Parse(pe)
        })?;
        k.validate()?;
        Ok(k)
    }

    pub fn from_path(path: &Path) -> Result<KernelGraph, KernelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| KernelError::Io { path: path.display().to_string(), source })?;
        KernelGraph::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("kernel graphs always serialize")
    }
}

/// Compact description of a kernel handed to agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub name: String,
    pub trip_count: u64,
    pub node_count: usize,
    pub census: BTreeMap<FuKind, usize>,
    /// Smallest loop-carried distance, if any.
    pub min_carried_distance: Option<u32>,
    pub carried_edges: usize,
}

impl KernelSummary {
    pub fn of(k: &KernelGraph) -> Self {
        KernelSummary {
            name: k.name.clone(),
            trip_count: k.trip_count,
            node_count: k.nodes.len(),
            census: k.census(),
            min_carried_distance: k.carried_edges().map(|e| e.distance).min(),
            carried_edges: k.carried_edges().count(),
        }
    }

    pub fn kinds(&self) -> BTreeSet<FuKind> {
        self.census.keys().copied().collect()
    }
}
