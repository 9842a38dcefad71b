use std::collections::BTreeSet;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::llm::render;
use super::{stream, AgentBackend, ProposalRequest, PROMPT_PROPOSE, SYSTEM_PROMPT};
use crate::arch::{parse_design, DesignPoint, FabricSpec, FuKind, Provenance, SwParams, Topology};

const SALT: u64 = 0x5052_4f50;

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub drafts: Vec<DesignPoint>,
    /// Drafts that came from the LLM rather than the heuristic.
    pub from_llm: usize,
}

/// Stage 1: at most `req.count` draft designs, all inside `req.bounds`.
pub fn propose(req: &ProposalRequest, backend: &AgentBackend) -> Proposal {
    let seed = backend.seed();
    let AgentBackend::Llm { client, .. } = backend else {
        return Proposal { drafts: heuristic(req, seed, &BTreeSet::new(), req.count), from_llm: 0 };
    };

    let prompt = render(
        PROMPT_PROPOSE,
        &[
            ("count", req.count.to_string()),
            ("kernel_name", req.kernel.name.clone()),
            ("kernel", pretty(&req.kernel)),
            ("objective", req.objective.mode.to_string()),
            ("min_speedup", req.objective.min_speedup.to_string()),
            ("bounds", pretty(&req.bounds)),
            ("best", req.best.as_ref().map(|(d, r)| pretty(&json!({"design": design_json(d), "report": r}))).unwrap_or("null".into())),
            (
                "window",
                pretty(&req.window.iter().map(|(d, r)| json!({"design": design_json(d), "report": r})).collect::<Vec<_>>()),
            ),
        ],
    );
    let mut drafts = Vec::new();
    match client.ask_json(SYSTEM_PROMPT, &prompt) {
        Ok(v) => {
            let items = match v {
                Value::Array(a) => a,
                Value::Object(mut o) => match o.remove("designs") {
                    Some(Value::Array(a)) => a,
                    _ => vec![Value::Object(o)],
                },
                _ => vec![],
            };
            let fallback = req.kernel.kinds();
            let mut seen = BTreeSet::new();
            for (i, item) in items.into_iter().enumerate() {
                if drafts.len() == req.count {
                    break;
                }
                let mut d = match parse_design(&item.to_string()) {
                    Ok(d) => d,
                    Err(e) => {
                        warn!("dropping unparseable LLM proposal {i}: {e}");
                        continue;
                    }
                };
                d.id = format!("llm{i}");
                d.provenance = Provenance::Proposed;
                req.bounds.clamp(&mut d, &fallback);
                if seen.insert(d.signature()) {
                    drafts.push(d);
                }
            }
        }
        Err(e) => warn!("proposer LLM unavailable ({e}); using heuristic proposals"),
    }
    let from_llm = drafts.len();
    if drafts.len() < req.count {
        let have: BTreeSet<String> = drafts.iter().map(DesignPoint::signature).collect();
        drafts.extend(heuristic(req, seed, &have, req.count - drafts.len()));
    }
    Proposal { drafts, from_llm }
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn design_json(d: &DesignPoint) -> Value {
    crate::arch::design_to_value(d)
}

fn heuristic(req: &ProposalRequest, seed: u64, have: &BTreeSet<String>, count: usize) -> Vec<DesignPoint> {
    let mut rng = stream(seed, req.iteration, SALT);
    let mut taken: BTreeSet<String> = have.clone();
    let mut out: Vec<DesignPoint> = Vec::with_capacity(count);
    let push = |mut d: DesignPoint, taken: &mut BTreeSet<String>, out: &mut Vec<DesignPoint>| {
        d.id = format!("p{}", out.len());
        taken.insert(d.signature());
        out.push(d);
    };

    match &req.best {
        None => {
            for d in stratified(req, &mut rng, count) {
                let d = make_unique(d, req, &mut rng, &taken);
                push(d, &mut taken, &mut out);
            }
        }
        Some((best, _)) => {
            let mut moves = neighbors(best, req);
            moves.shuffle(&mut rng);
            // untried neighbors first, stable within each group
            moves.sort_by_key(|d| req.tried.contains(&d.signature()));
            for d in moves {
                if out.len() + 1 >= count {
                    break;
                }
                if !taken.contains(&d.signature()) {
                    push(d, &mut taken, &mut out);
                }
            }
            while out.len() < count {
                let d = make_unique(random_design(req, &mut rng), req, &mut rng, &taken);
                push(d, &mut taken, &mut out);
            }
        }
    }
    out
}

fn make_unique(mut d: DesignPoint, req: &ProposalRequest, rng: &mut ChaCha8Rng, taken: &BTreeSet<String>) -> DesignPoint {
    for _ in 0..64 {
        let sig = d.signature();
        if !taken.contains(&sig) && !req.tried.contains(&sig) {
            return d;
        }
        let n = neighbors(&d, req);
        d = if n.is_empty() { random_design(req, rng) } else { n[rng.random_range(0..n.len())].clone() };
    }
    d
}

fn kind_mix(req: &ProposalRequest, rng: &mut ChaCha8Rng) -> std::collections::BTreeSet<FuKind> {
    let needed = req.kernel.kinds();
    let mut kinds: BTreeSet<FuKind> = FuKind::ALL
        .into_iter()
        .filter(|k| rng.random_bool(if needed.contains(k) { 0.9 } else { 0.15 }))
        .collect();
    if kinds.is_empty() {
        kinds = needed;
    }
    kinds
}

fn draft(
    req: &ProposalRequest,
    rng: &mut ChaCha8Rng,
    rows: u32,
    cols: u32,
    topology: Topology,
    unroll: u32,
    vectorize: u32,
) -> DesignPoint {
    let b = &req.bounds;
    let mut d = DesignPoint {
        id: String::new(),
        fabric: FabricSpec {
            rows,
            cols,
            fu_kinds: kind_mix(req, rng),
            config_mem_depth: rng.random_range(2..=b.max_config_depth.clamp(2, 16)),
            data_mem_kb: b.data_mem_kb[rng.random_range(0..b.data_mem_kb.len())],
            topology,
        },
        sw: SwParams { unroll_factor: unroll, vectorize_factor: vectorize },
        provenance: Provenance::Proposed,
        note: String::new(),
    };
    b.clamp(&mut d, &req.kernel.kinds());
    d
}

fn random_design(req: &ProposalRequest, rng: &mut ChaCha8Rng) -> DesignPoint {
    let b = &req.bounds;
    let rows = rng.random_range(1..=b.max_rows);
    let cols = rng.random_range(1..=b.max_cols);
    let topo = Topology::ALL[rng.random_range(0..3)];
    let u = rng.random_range(1..=b.max_unroll);
    let v = rng.random_range(1..=b.max_vectorize);
    draft(req, rng, rows, cols, topo, u, v)
}

/// Level sequence covering every stratum before repeating any.
fn strata<T: Copy>(levels: &[T], n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut round = levels.to_vec();
        round.shuffle(rng);
        out.extend(round);
    }
    out.truncate(n);
    out
}

fn stratified(req: &ProposalRequest, rng: &mut ChaCha8Rng, n: usize) -> Vec<DesignPoint> {
    let b = &req.bounds;
    let max_side = b.max_rows.min(b.max_cols);
    let mut sides: Vec<u32> = (2..=6).filter(|s| *s <= max_side).collect();
    if sides.is_empty() {
        sides.push(max_side);
    }
    let unrolls: Vec<u32> = (1..=b.max_unroll.min(4)).collect();
    let vectors: Vec<u32> = (1..=b.max_vectorize).collect();
    let side = strata(&sides, n, rng);
    let topo = strata(&Topology::ALL, n, rng);
    let unroll = strata(&unrolls, n, rng);
    let vector = strata(&vectors, n, rng);
    (0..n)
        .map(|i| {
            let cols = if rng.random_bool(0.3) { side[i] + 1 } else { side[i] };
            draft(req, rng, side[i], cols, topo[i], unroll[i], vector[i])
        })
        .collect()
}

/// Every design one field-move away from `d` that stays inside the bounds.
pub(crate) fn neighbors(d: &DesignPoint, req: &ProposalRequest) -> Vec<DesignPoint> {
    let b = &req.bounds;
    let f = &d.fabric;
    let mut out: Vec<DesignPoint> = Vec::new();
    let mut add = |g: &dyn Fn(&mut DesignPoint)| {
        let mut n = d.clone();
        g(&mut n);
        n.provenance = Provenance::Proposed;
        n.note.clear();
        if n != *d && b.contains(&n) && crate::arch::validate_design(&n).is_empty() {
            out.push(n);
        }
    };
    for delta in [-1i64, 1] {
        add(&|n| n.fabric.rows = (f.rows as i64 + delta).max(0) as u32);
        add(&|n| n.fabric.cols = (f.cols as i64 + delta).max(0) as u32);
        add(&|n| n.fabric.config_mem_depth = (f.config_mem_depth as i64 + delta).max(0) as u32);
        add(&|n| n.sw.unroll_factor = (d.sw.unroll_factor as i64 + delta).max(0) as u32);
        add(&|n| n.sw.vectorize_factor = (d.sw.vectorize_factor as i64 + delta).max(0) as u32);
    }
    add(&|n| n.fabric.config_mem_depth = f.config_mem_depth * 2);
    add(&|n| n.fabric.config_mem_depth = f.config_mem_depth / 2);
    if let Some(t) = f.topology.step_up() {
        add(&|n| n.fabric.topology = t);
    }
    if let Some(t) = f.topology.step_down() {
        add(&|n| n.fabric.topology = t);
    }
    for k in FuKind::ALL {
        add(&|n| {
            if !n.fabric.fu_kinds.remove(&k) {
                n.fabric.fu_kinds.insert(k);
            }
        });
    }
    out
}
