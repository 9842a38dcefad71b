//! Seeded corpus of designs that each carry exactly one injected fault.

use std::collections::BTreeSet;

use cgra_codesign::agents::stage2_check;
use cgra_codesign::arch::{DesignPoint, FabricSpec, FuKind, Provenance, SwParams, Topology, MAX_GRID_DIM, MAX_UNROLL};
use cgra_codesign::kernel::{builtin_kernel, KernelGraph};
use cgra_codesign::mapper::MapBudget;
use rand::seq::IndexedRandom;
use rand::Rng;

pub const FAULT_KERNELS: [&str; 6] = ["relu", "gemm", "spmv", "fft", "mvt", "conv"];

pub const FAULTS: [&str; 12] = [
    "rows_zero",
    "rows_too_many",
    "cols_zero",
    "no_kinds",
    "depth_zero",
    "memory_without_loadstore",
    "unroll_zero",
    "unroll_too_big",
    "vectorize_zero",
    "missing_compute_kind",
    "depth_too_shallow",
    "carried_dep_vectorized",
];

#[derive(Debug, Clone)]
pub struct Faulty {
    pub kernel: KernelGraph,
    pub design: DesignPoint,
    pub fault: &'static str,
}

/// A design that maps the kernel as is.
pub fn healthy(kernel: &KernelGraph, id: String) -> DesignPoint {
    let mut fu_kinds: BTreeSet<FuKind> = kernel.kinds();
    fu_kinds.extend([FuKind::Load, FuKind::Store]);
    DesignPoint {
        id,
        fabric: FabricSpec { rows: 3, cols: 3, fu_kinds, config_mem_depth: 16, data_mem_kb: 8, topology: Topology::Mesh },
        sw: SwParams { unroll_factor: 1, vectorize_factor: 1 },
        provenance: Provenance::Proposed,
        note: String::new(),
    }
}

fn inject(d: &mut DesignPoint, k: &KernelGraph, fault: &str, rng: &mut impl Rng) -> bool {
    let f = &mut d.fabric;
    match fault {
        "rows_zero" => f.rows = 0,
        "rows_too_many" => f.rows = MAX_GRID_DIM + rng.random_range(1..=4),
        "cols_zero" => f.cols = 0,
        "no_kinds" => f.fu_kinds.clear(),
        "depth_zero" => f.config_mem_depth = 0,
        "memory_without_loadstore" => {
            f.fu_kinds.remove(&FuKind::Load);
            f.fu_kinds.remove(&FuKind::Store);
        }
        "unroll_zero" => d.sw.unroll_factor = 0,
        "unroll_too_big" => d.sw.unroll_factor = MAX_UNROLL + rng.random_range(1..=8),
        "vectorize_zero" => d.sw.vectorize_factor = 0,
        "missing_compute_kind" => {
            let compute: Vec<FuKind> =
                k.kinds().into_iter().filter(|x| !matches!(x, FuKind::Load | FuKind::Store)).collect();
            let Some(x) = compute.choose(rng) else { return false };
            f.fu_kinds.remove(x);
        }
        "depth_too_shallow" => {
            f.rows = 1;
            f.cols = 1;
            f.config_mem_depth = 1;
        }
        "carried_dep_vectorized" => {
            let Some(dist) = k.carried_edges().map(|e| e.distance).min() else { return false };
            if dist + 1 > 4 {
                return false;
            }
            d.sw.vectorize_factor = dist + 1;
        }
        _ => unreachable!(),
    }
    true
}

/// `n` designs over the fault kernels, each failing validation or mapping
/// because of its single fault.
pub fn fault_corpus(n: usize, seed: u64) -> Vec<Faulty> {
    let mut rng = super::rng(seed);
    let budget = MapBudget::default();
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < n {
        // cycle through faults so every kind is represented
        let fault = FAULTS[i % FAULTS.len()];
        i += 1;
        let kernel = builtin_kernel(FAULT_KERNELS.choose(&mut rng).unwrap()).unwrap();
        let mut design = healthy(&kernel, format!("f{:02}", out.len()));
        design.fabric.topology = *Topology::ALL.choose(&mut rng).unwrap();
        assert!(stage2_check(&design, &kernel, &budget).is_ok(), "{} base design maps", kernel.name);
        if !inject(&mut design, &kernel, fault, &mut rng) {
            continue;
        }
        if stage2_check(&design, &kernel, &budget).is_ok() {
            continue;
        }
        design.note = fault.to_string();
        out.push(Faulty { kernel, design, fault });
    }
    out
}
