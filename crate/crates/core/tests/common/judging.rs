//! Judge agreement experiment: how often the learned judge picks what the
//! cost tool picks, before and after a batch of lessons.

use cgra_codesign::agents::{AgentBackend, LearnedJudge};
use cgra_codesign::arch::{DesignPoint, FabricSpec, FuKind, Provenance, SwParams, Topology};
use cgra_codesign::costs::{tool_evaluate, tool_select, Candidate, CostCoeffs, Objective};
use cgra_codesign::kernel::{apply_sw, builtin_kernel, KernelGraph};
use cgra_codesign::mapper::{map_kernel, MapBudget};
use cgra_codesign::select::{Judge, ToolVerdict};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SET_SIZE: usize = 5;

fn random_mapped(k: &KernelGraph, rng: &mut ChaCha8Rng, id: String) -> Option<Candidate> {
    let mut fu_kinds = k.kinds();
    for extra in FuKind::ALL {
        if rng.random_bool(0.25) {
            fu_kinds.insert(extra);
        }
    }
    let d = DesignPoint {
        id,
        fabric: FabricSpec {
            rows: rng.random_range(1..=4),
            cols: rng.random_range(1..=4),
            fu_kinds,
            config_mem_depth: rng.random_range(4..=32),
            data_mem_kb: *[0, 8, 16].choose(rng).unwrap(),
            topology: *Topology::ALL.choose(rng).unwrap(),
        },
        sw: SwParams { unroll_factor: rng.random_range(1..=4), vectorize_factor: rng.random_range(1..=2) },
        provenance: Provenance::Proposed,
        note: String::new(),
    };
    let t = apply_sw(k, &d.sw).ok()?;
    let m = map_kernel(&t, &d.fabric, &MapBudget::default()).ok()?;
    Some(Candidate::mapped(d, m))
}

pub fn random_set(k: &KernelGraph, rng: &mut ChaCha8Rng) -> Vec<Candidate> {
    let mut set = Vec::new();
    while set.len() < SET_SIZE {
        if let Some(c) = random_mapped(k, rng, format!("c{}", set.len())) {
            set.push(c);
        }
    }
    set
}

pub fn verdict(set: &[Candidate], k: &KernelGraph, obj: &Objective) -> ToolVerdict {
    let reports = tool_evaluate(set, k, obj, &CostCoeffs::default()).unwrap();
    let (choice, score) = tool_select(&reports).unwrap();
    let feasible = reports.iter().find(|r| r.design_id == choice).unwrap().feasible;
    ToolVerdict { choice, score, feasible, reports }
}

pub struct Agreement {
    pub before: usize,
    pub after: usize,
    pub sets: usize,
}

/// Agreement on `eval_sets` fresh sets with zero lessons and after `lessons`.
pub fn agreement_experiment(kernel: &str, lessons: usize, eval_sets: usize, seed: u64) -> Agreement {
    let k = builtin_kernel(kernel).unwrap();
    let obj = Objective { min_speedup: 1.0, ..Objective::default() };
    let mut rng = super::rng(seed);
    let train: Vec<Vec<Candidate>> = (0..lessons).map(|_| random_set(&k, &mut rng)).collect();
    let eval: Vec<(Vec<Candidate>, String)> = (0..eval_sets)
        .map(|_| {
            let s = random_set(&k, &mut rng);
            let v = verdict(&s, &k, &obj).choice;
            (s, v)
        })
        .collect();

    let mut judge = LearnedJudge::new(k.clone(), obj, AgentBackend::Heuristic { seed });
    let score = |j: &mut LearnedJudge| eval.iter().filter(|(s, want)| j.select(s).0 == *want).count();
    let before = score(&mut judge);
    for s in &train {
        judge.select(s);
        judge.update(s, &verdict(s, &k, &obj));
    }
    let after = score(&mut judge);
    Agreement { before, after, sets: eval_sets }
}
