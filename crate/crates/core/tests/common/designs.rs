//! Random designs and stand-in mappings for cost and judge properties.

use cgra_codesign::arch::{DesignPoint, FabricSpec, FuKind, Provenance, SwParams, Topology};
use cgra_codesign::mapper::{MappingResult, Placement};
use cgra_codesign::arch::Coord;
use proptest::prelude::*;
use serde_json::Value;

pub fn topology() -> impl Strategy<Value = Topology> {
    prop_oneof![Just(Topology::Mesh), Just(Topology::KingMesh), Just(Topology::Crossbar)]
}

/// Structurally valid design with at most `max_side` rows and columns.
pub fn design(max_side: u32) -> impl Strategy<Value = DesignPoint> {
    (
        1..=max_side,
        1..=max_side,
        proptest::sample::subsequence(FuKind::ALL.to_vec(), 1..=FuKind::ALL.len()),
        1u32..=64,
        prop_oneof![Just(0u32), Just(8), Just(16), Just(32)],
        topology(),
        1u32..=8,
        1u32..=4,
    )
        .prop_map(|(rows, cols, kinds, depth, mem, topology, u, v)| {
            let mut fu_kinds: std::collections::BTreeSet<FuKind> = kinds.into_iter().collect();
            if mem > 0 {
                fu_kinds.extend([FuKind::Load, FuKind::Store]);
            }
            DesignPoint {
                id: "d".into(),
                fabric: FabricSpec { rows, cols, fu_kinds, config_mem_depth: depth, data_mem_kb: mem, topology },
                sw: SwParams { unroll_factor: u, vectorize_factor: v },
                provenance: Provenance::Proposed,
                note: String::new(),
            }
        })
}

/// A mapping stand-in carrying only what the cost model reads.
pub fn fake_mapping(nodes: usize, ii: u32, schedule_len: u32) -> MappingResult {
    MappingResult {
        ii,
        schedule_len,
        placements: (0..nodes as u32).map(|n| Placement { node: n, tile: Coord::new(0, 0), cycle: n }).collect(),
        routes: vec![],
    }
}

/// Power and area straight from the coefficient file, by the documented formula.
pub fn oracle_ppa(coeffs: &Value, d: &DesignPoint, nodes: usize, ii: u32) -> (f64, f64) {
    let f = &d.fabric;
    let num = |k: &str| coeffs[k].as_f64().unwrap();
    let tiles = (f.rows * f.cols) as f64;
    let lanes = (d.sw.vectorize_factor - 1) as f64;
    let lane_p = 1.0 + num("lane_power_extra") * lanes;
    let lane_a = 1.0 + num("lane_area_extra") * lanes;
    let wire = coeffs["wiring"][f.topology.as_str()].as_f64().unwrap();
    let mut per_tile_area = num("tile_base_area_kum2") + f.config_mem_depth as f64 * num("ctx_area_kum2");
    let mut per_tile_power = num("tile_base_power_mw") + f.config_mem_depth as f64 * num("ctx_power_mw");
    for k in &f.fu_kinds {
        per_tile_area += coeffs["fu_area_kum2"][k.as_str()].as_f64().unwrap() * lane_a;
        per_tile_power += coeffs["fu_power_mw"][k.as_str()].as_f64().unwrap() * lane_p;
    }
    let area = wire * tiles * per_tile_area + tiles * f.data_mem_kb as f64 * num("data_mem_area_kum2_per_kb");
    let activity = num("activity_power_mw") * nodes as f64 / ii as f64 * lane_p;
    let power = wire * (tiles * per_tile_power + activity);
    (power, area)
}

pub fn default_coeffs_json() -> Value {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/cost_coeffs.json");
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
