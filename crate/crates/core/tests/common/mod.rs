//! Test-only oracles, independent of the library's search and transform code.
#![allow(dead_code)]

pub mod designs;
pub mod faults;
pub mod judging;

use std::collections::{BTreeSet, VecDeque};

use cgra_codesign::arch::{FuKind, Topology};
use cgra_codesign::kernel::{DfgEdge, DfgNode, KernelGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tile graph distance computed by BFS over the topology's definition.
pub fn oracle_hops(rows: u32, cols: u32, topology: Topology) -> Vec<Vec<u32>> {
    let n = (rows * cols) as usize;
    let pos = |i: usize| ((i as u32 / cols) as i64, (i as u32 % cols) as i64);
    let adjacent = |a: usize, b: usize| {
        if a == b {
            return false;
        }
        let ((ra, ca), (rb, cb)) = (pos(a), pos(b));
        let (dr, dc) = ((ra - rb).abs(), (ca - cb).abs());
        match topology {
            Topology::Mesh => dr + dc == 1,
            Topology::KingMesh => dr.max(dc) == 1,
            Topology::Crossbar => true,
        }
    };
    (0..n)
        .map(|s| {
            let mut dist = vec![u32::MAX; n];
            dist[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(x) = q.pop_front() {
                for y in 0..n {
                    if adjacent(x, y) && dist[y] == u32::MAX {
                        dist[y] = dist[x] + 1;
                        q.push_back(y);
                    }
                }
            }
            dist
        })
        .collect()
}

/// Smallest II in `1..=max_ii` admitting any valid modulo placement, by
/// enumerating every injective (tile, slot) assignment and testing the
/// start-time system with Floyd-Warshall.
pub fn brute_force_min_ii(k: &KernelGraph, rows: u32, cols: u32, topology: Topology, max_ii: u32) -> Option<u32> {
    let hops = oracle_hops(rows, cols, topology);
    let tiles = (rows * cols) as usize;
    let n = k.nodes.len();
    let pos = |id: u32| k.nodes.iter().position(|x| x.id == id).unwrap();
    let edges: Vec<(usize, usize, i64, i64)> = k
        .edges
        .iter()
        .map(|e| {
            let s = pos(e.src);
            (s, pos(e.dst), k.nodes[s].latency as i64, e.distance as i64)
        })
        .collect();

    for ii in 1..=max_ii {
        let cells = tiles * ii as usize;
        if n > cells {
            continue;
        }
        let mut assign = vec![(0usize, 0i64); n];
        let mut used = vec![false; cells];
        if enumerate(0, n, ii as i64, tiles, &mut assign, &mut used, &edges, &hops) {
            return Some(ii);
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    i: usize,
    n: usize,
    ii: i64,
    tiles: usize,
    assign: &mut Vec<(usize, i64)>,
    used: &mut Vec<bool>,
    edges: &[(usize, usize, i64, i64)],
    hops: &[Vec<u32>],
) -> bool {
    if i == n {
        return times_feasible(n, ii, assign, edges, hops);
    }
    for t in 0..tiles {
        for r in 0..ii {
            let cell = t * ii as usize + r as usize;
            if used[cell] {
                continue;
            }
            used[cell] = true;
            assign[i] = (t, r);
            let ok = enumerate(i + 1, n, ii, tiles, assign, used, edges, hops);
            used[cell] = false;
            if ok {
                return true;
            }
        }
    }
    false
}

fn times_feasible(n: usize, ii: i64, assign: &[(usize, i64)], edges: &[(usize, usize, i64, i64)], hops: &[Vec<u32>]) -> bool {
    // start(x) = r(x) + ii*q(x); need integer q with q(v) - q(u) >= c(u, v).
    const NONE: i64 = i64::MIN / 4;
    let mut w = vec![vec![NONE; n]; n];
    for &(u, v, lat, d) in edges {
        let (tu, ru) = assign[u];
        let (tv, rv) = assign[v];
        let need = lat + hops[tu][tv] as i64 - d * ii - rv + ru;
        let c = (need as f64 / ii as f64).ceil() as i64;
        if c > w[u][v] {
            w[u][v] = c;
        }
    }
    for m in 0..n {
        for a in 0..n {
            if w[a][m] == NONE {
                continue;
            }
            for b in 0..n {
                if w[m][b] == NONE {
                    continue;
                }
                let via = w[a][m] + w[m][b];
                if via > w[a][b] {
                    w[a][b] = via;
                }
            }
        }
    }
    (0..n).all(|i| w[i][i] <= 0 || w[i][i] == NONE)
}

/// Random valid kernel with at most `max_nodes` nodes.
pub fn random_small_kernel(rng: &mut ChaCha8Rng, max_nodes: usize) -> KernelGraph {
    loop {
        let n = rng.random_range(1..=max_nodes);
        let kinds = [FuKind::Add, FuKind::Mul, FuKind::Load, FuKind::Phi];
        let nodes: Vec<DfgNode> = (0..n)
            .map(|i| DfgNode {
                id: i as u32,
                kind: kinds[rng.random_range(0..kinds.len())],
                latency: rng.random_range(1..=3),
            })
            .collect();
        let mut edges = Vec::new();
        for j in 0..n {
            for i in 0..j {
                if rng.random_bool(0.35) {
                    edges.push(DfgEdge { src: i as u32, dst: j as u32, distance: 0 });
                }
            }
        }
        for v in 0..n {
            if nodes[v].kind == FuKind::Phi && rng.random_bool(0.7) {
                let u = rng.random_range(v..n);
                edges.push(DfgEdge { src: u as u32, dst: v as u32, distance: rng.random_range(1..=2) });
            }
            if nodes[v].kind == FuKind::Add && rng.random_bool(0.2) {
                edges.push(DfgEdge { src: v as u32, dst: v as u32, distance: 1 });
            }
        }
        let k = KernelGraph {
            name: "rand".into(),
            description: String::new(),
            trip_count: 12,
            lane_width: 1,
            nodes,
            edges,
        };
        if k.validate().is_ok() {
            return k;
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Instance-level dependence pairs `((node, iter), (node, iter))` of a kernel.
pub fn dependence_pairs(k: &KernelGraph) -> BTreeSet<((u32, u64), (u32, u64))> {
    let mut out = BTreeSet::new();
    for e in &k.edges {
        for i in 0..k.trip_count {
            let j = i + e.distance as u64;
            if j < k.trip_count {
                out.insert(((e.src, i), (e.dst, j)));
            }
        }
    }
    out
}

/// Maps an original-kernel instance to its instance after unrolling by
/// `unroll` (copy ids `copy * stride + id`) and vectorizing by `vector`.
pub fn project_instance(node: u32, iter: u64, stride: u32, unroll: u32, vector: u32) -> (u32, u64) {
    let copy = (iter % unroll as u64) as u32;
    let unrolled_iter = iter / unroll as u64;
    (copy * stride + node, unrolled_iter / vector as u64)
}

/// Dependence pairs of the original kernel projected onto the transformed
/// iteration space.
pub fn projected_pairs(k: &KernelGraph, unroll: u32, vector: u32) -> BTreeSet<((u32, u64), (u32, u64))> {
    let stride = k.nodes.iter().map(|n| n.id).max().unwrap() + 1;
    dependence_pairs(k)
        .into_iter()
        .map(|((u, i), (v, j))| (project_instance(u, i, stride, unroll, vector), project_instance(v, j, stride, unroll, vector)))
        .collect()
}
