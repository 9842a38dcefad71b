//! Fixed-II placement search.
//!
//! Nodes are placed in (ASAP cycle, id) order. Each placement picks a tile and
//! a modulo slot `r`; the start cycle is `r + ii * q` for an integer `q`
//! chosen later. Every edge `u -> v` with distance `d` then becomes the
//! difference constraint
//!
//! ```text
//! q(v) - q(u) >= ceil((lat(u) + hops - d*ii - r(v) + r(u)) / ii)
//! ```
//!
//! and a partial placement is extendable only while this system has no
//! positive cycle. Potentials are kept as the least solution and repaired
//! incrementally after each placement. The search backtracks over candidates,
//! so it is complete unless the step budget runs out.

use std::collections::VecDeque;

use super::{MappingResult, Placement, Route};
use crate::arch::{Coord, FabricSpec};
use crate::kernel::KernelGraph;

pub(super) enum Outcome {
    Found(MappingResult),
    Infeasible,
    BudgetExhausted,
}

struct Edge {
    src: usize,
    dst: usize,
    distance: u32,
}

pub(super) struct Problem<'a> {
    kernel: &'a KernelGraph,
    fabric: &'a FabricSpec,
    lat: Vec<u32>,
    edges: Vec<Edge>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    tiles: Vec<Coord>,
    hop: Vec<Vec<u32>>,
    order: Vec<usize>,
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

impl<'a> Problem<'a> {
    pub(super) fn new(kernel: &'a KernelGraph, fabric: &'a FabricSpec) -> Self {
        let index = kernel.index_of();
        let n = kernel.nodes.len();
        let lat: Vec<u32> = kernel.nodes.iter().map(|n| n.latency).collect();
        let edges: Vec<Edge> = kernel
            .edges
            .iter()
            .map(|e| Edge { src: index[&e.src], dst: index[&e.dst], distance: e.distance })
            .collect();
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            out_edges[e.src].push(i);
            in_edges[e.dst].push(i);
        }
        let tiles: Vec<Coord> = fabric.tiles().collect();
        let hop = tiles
            .iter()
            .map(|&a| tiles.iter().map(|&b| fabric.hops(a, b)).collect())
            .collect();

        // ASAP start over intra-iteration edges, ignoring routing.
        let topo = kernel.intra_topo_order().expect("validated kernel");
        let mut asap = vec![0u32; n];
        for &u in &topo {
            for &ei in &out_edges[u] {
                let e = &edges[ei];
                if e.distance == 0 {
                    asap[e.dst] = asap[e.dst].max(asap[u] + lat[u]);
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (asap[i], kernel.nodes[i].id));

        Problem { kernel, fabric, lat, edges, out_edges, in_edges, tiles, hop, order }
    }

    pub(super) fn solve(&self, ii: u32, max_steps: u64) -> Outcome {
        let n = self.lat.len();
        let mut st = State {
            ii: ii as i64,
            tile: vec![usize::MAX; n],
            slot: vec![0; n],
            pot: vec![0; n],
            busy: vec![false; self.tiles.len() * ii as usize],
            steps: 0,
            max_steps,
        };
        match self.place(0, &mut st) {
            Step::Done => Outcome::Found(self.build(&st)),
            Step::Fail => Outcome::Infeasible,
            Step::Exhausted => Outcome::BudgetExhausted,
        }
    }

    fn weight(&self, e: &Edge, st: &State, tile_src: usize, slot_src: i64, tile_dst: usize, slot_dst: i64) -> i64 {
        let w = self.lat[e.src] as i64 + self.hop[tile_src][tile_dst] as i64 - e.distance as i64 * st.ii;
        ceil_div(w - slot_dst + slot_src, st.ii)
    }

    fn place(&self, depth: usize, st: &mut State) -> Step {
        if depth == self.order.len() {
            return Step::Done;
        }
        let v = self.order[depth];
        let ii = st.ii;

        // nearest tiles to already-placed neighbors first
        let mut tiles: Vec<(u64, usize)> = (0..self.tiles.len())
            .map(|t| {
                let cost: u64 = self.in_edges[v]
                    .iter()
                    .map(|&ei| self.edges[ei].src)
                    .chain(self.out_edges[v].iter().map(|&ei| self.edges[ei].dst))
                    .filter(|&u| u != v && st.tile[u] != usize::MAX)
                    .map(|u| self.hop[t][st.tile[u]] as u64)
                    .sum();
                (cost, t)
            })
            .collect();
        tiles.sort();

        for (_, t) in tiles {
            // earliest start allowed by placed predecessors on this tile
            let est = self.in_edges[v]
                .iter()
                .map(|&ei| &self.edges[ei])
                .filter(|e| e.src != v && st.tile[e.src] != usize::MAX)
                .map(|e| {
                    let start = st.slot[e.src] + ii * st.pot[e.src];
                    start + self.lat[e.src] as i64 + self.hop[st.tile[e.src]][t] as i64 - e.distance as i64 * ii
                })
                .max()
                .unwrap_or(0);
            let slots: Vec<i64> = if depth == 0 {
                // a uniform slot shift preserves feasibility
                vec![0]
            } else {
                (0..ii).map(|j| (est + j).rem_euclid(ii)).collect()
            };
            for r in slots {
                if st.busy[t * ii as usize + r as usize] {
                    continue;
                }
                st.steps += 1;
                if st.steps > st.max_steps {
                    return Step::Exhausted;
                }
                let saved = st.pot.clone();
                if self.assign(v, t, r, st) {
                    st.busy[t * ii as usize + r as usize] = true;
                    match self.place(depth + 1, st) {
                        Step::Done => return Step::Done,
                        Step::Exhausted => return Step::Exhausted,
                        Step::Fail => {}
                    }
                    st.busy[t * ii as usize + r as usize] = false;
                }
                st.tile[v] = usize::MAX;
                st.pot = saved;
            }
        }
        Step::Fail
    }

    /// Places `v` at (`t`, `r`) and restores the least solution of the
    /// difference constraints. Returns false on a positive cycle through `v`.
    fn assign(&self, v: usize, t: usize, r: i64, st: &mut State) -> bool {
        st.tile[v] = t;
        st.slot[v] = r;
        let mut pv = 0i64;
        for &ei in &self.in_edges[v] {
            let e = &self.edges[ei];
            if e.src == v {
                if self.weight(e, st, t, r, t, r) > 0 {
                    return false;
                }
                continue;
            }
            let u = e.src;
            if st.tile[u] == usize::MAX {
                continue;
            }
            let w = self.weight(e, st, st.tile[u], st.slot[u], t, r);
            pv = pv.max(st.pot[u] + w);
        }
        st.pot[v] = pv;

        let mut queue = VecDeque::from([v]);
        while let Some(x) = queue.pop_front() {
            for &ei in &self.out_edges[x] {
                let e = &self.edges[ei];
                let y = e.dst;
                if y == x || st.tile[y] == usize::MAX {
                    continue;
                }
                let w = self.weight(e, st, st.tile[x], st.slot[x], st.tile[y], st.slot[y]);
                if st.pot[x] + w > st.pot[y] {
                    if y == v {
                        return false;
                    }
                    st.pot[y] = st.pot[x] + w;
                    queue.push_back(y);
                }
            }
        }
        true
    }

    fn build(&self, st: &State) -> MappingResult {
        let n = self.lat.len();
        let starts: Vec<i64> = (0..n).map(|i| st.slot[i] + st.ii * st.pot[i]).collect();
        let shift = starts.iter().copied().min().unwrap_or(0);
        let mut placements: Vec<Placement> = (0..n)
            .map(|i| Placement {
                node: self.kernel.nodes[i].id,
                tile: self.tiles[st.tile[i]],
                cycle: (starts[i] - shift) as u32,
            })
            .collect();
        placements.sort_by_key(|p| p.node);
        let schedule_len = (0..n)
            .map(|i| (starts[i] - shift) as u32 + self.lat[i])
            .max()
            .unwrap_or(1);
        let routes = self
            .edges
            .iter()
            .map(|e| Route {
                src: self.kernel.nodes[e.src].id,
                dst: self.kernel.nodes[e.dst].id,
                distance: e.distance,
                path: self
                    .fabric
                    .route(self.tiles[st.tile[e.src]], self.tiles[st.tile[e.dst]])
                    .expect("placed tiles are in the grid"),
            })
            .collect();
        MappingResult { ii: st.ii as u32, schedule_len, placements, routes }
    }
}

struct State {
    ii: i64,
    tile: Vec<usize>,
    slot: Vec<i64>,
    pot: Vec<i64>,
    busy: Vec<bool>,
    steps: u64,
    max_steps: u64,
}

enum Step {
    Done,
    Fail,
    Exhausted,
}
