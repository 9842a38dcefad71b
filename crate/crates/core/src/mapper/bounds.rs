use crate::arch::FabricSpec;
use crate::kernel::KernelGraph;

/// Graphs up to this size get the exact cycle-enumeration rec_mii.
const CYCLE_ENUM_MAX_NODES: usize = 32;
const CYCLE_ENUM_MAX_CYCLES: usize = 1 << 20;

/// Resource bound: per-kind pressure over supporting tiles, and total node
/// count over tiles (a tile issues one operation per slot whatever its kinds).
pub fn res_mii(kernel: &KernelGraph, fabric: &FabricSpec) -> u32 {
    let tiles = fabric.tile_count().max(1);
    let total = (kernel.nodes.len() as u32).div_ceil(tiles);
    kernel
        .census()
        .into_iter()
        .filter(|(kind, _)| fabric.supports(*kind))
        .map(|(_, count)| (count as u32).div_ceil(tiles))
        .fold(total, u32::max)
        .max(1)
}

/// `(res_mii, rec_mii)`, both at least 1.
pub fn min_ii_bounds(kernel: &KernelGraph, fabric: &FabricSpec) -> (u32, u32) {
    let rec = if kernel.nodes.len() <= CYCLE_ENUM_MAX_NODES {
        rec_mii_by_cycles(kernel).unwrap_or_else(|| rec_mii_by_relaxation(kernel))
    } else {
        rec_mii_by_relaxation(kernel)
    };
    (res_mii(kernel, fabric), rec)
}

struct Adj {
    // (dst position, latency of src, distance)
    out: Vec<Vec<(usize, u32, u32)>>,
}

fn adjacency(kernel: &KernelGraph) -> Adj {
    let index = kernel.index_of();
    let mut out = vec![Vec::new(); kernel.nodes.len()];
    for e in &kernel.edges {
        let (s, d) = (index[&e.src], index[&e.dst]);
        out[s].push((d, kernel.nodes[s].latency, e.distance));
    }
    Adj { out }
}

/// Max over elementary cycles of `ceil(latency sum / distance sum)`.
/// Each cycle is enumerated once from its lowest-positioned node. Returns
/// `None` when the cycle count exceeds the enumeration cap.
pub fn rec_mii_by_cycles(kernel: &KernelGraph) -> Option<u32> {
    let adj = adjacency(kernel);
    let n = kernel.nodes.len();
    let mut best = 1u32;
    let mut cycles = 0usize;
    let mut on_path = vec![false; n];

    fn dfs(
        adj: &Adj,
        start: usize,
        at: usize,
        lat: u32,
        dist: u32,
        on_path: &mut [bool],
        best: &mut u32,
        cycles: &mut usize,
    ) -> bool {
        for &(next, l, d) in &adj.out[at] {
            if next == start {
                *cycles += 1;
                if *cycles > CYCLE_ENUM_MAX_CYCLES {
                    return false;
                }
                let (lat, dist) = (lat + l, dist + d);
                // distance-0 cycles cannot occur in a valid kernel
                if dist > 0 {
                    *best = (*best).max(lat.div_ceil(dist));
                }
            } else if next > start && !on_path[next] {
                on_path[next] = true;
                let ok = dfs(adj, start, next, lat + l, dist + d, on_path, best, cycles);
                on_path[next] = false;
                if !ok {
                    return false;
                }
            }
        }
        true
    }

    for s in 0..n {
        on_path[s] = true;
        let ok = dfs(&adj, s, s, 0, 0, &mut on_path, &mut best, &mut cycles);
        on_path[s] = false;
        if !ok {
            return None;
        }
    }
    Some(best)
}

/// Smallest `ii >= 1` for which the constraint graph with edge weights
/// `latency - distance * ii` has no positive cycle (Bellman-Ford longest path).
pub fn rec_mii_by_relaxation(kernel: &KernelGraph) -> u32 {
    let adj = adjacency(kernel);
    let n = kernel.nodes.len();
    let has_positive_cycle = |ii: u32| {
        let mut dist = vec![0i64; n];
        for _ in 0..=n {
            let mut changed = false;
            for u in 0..n {
                for &(v, l, d) in &adj.out[u] {
                    let w = l as i64 - d as i64 * ii as i64;
                    if dist[u] + w > dist[v] {
                        dist[v] = dist[u] + w;
                        changed = true;
                    }
                }
            }
            if !changed {
                return false;
            }
        }
        true
    };
    let mut lo = 1u32;
    let mut hi = kernel.sequential_cycles_per_iteration().max(1) as u32;
    if !has_positive_cycle(lo) {
        return lo;
    }
    // invariant: lo infeasible, hi feasible
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if has_positive_cycle(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}
