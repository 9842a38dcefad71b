mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use cgra_codesign::agents::llm::{LlmError, ScriptedTransport};
use cgra_codesign::agents::{
    coarse_judge, fix_design, propose, stage2_check, AgentBackend, DesignBounds, LearnedJudge, LlmClient, LlmConfig,
    ProposalRequest, LESSON_CAP,
};
use cgra_codesign::arch::validate_design;
use cgra_codesign::costs::{Candidate, Objective};
use cgra_codesign::kernel::{builtin_kernel, KernelSummary};
use cgra_codesign::mapper::{check_mapping, MapBudget};
use cgra_codesign::select::Judge;
use common::faults::{fault_corpus, FAULTS};
use common::judging::{agreement_experiment, random_set, verdict};

fn scripted(replies: Vec<Result<String, LlmError>>) -> AgentBackend {
    let cfg = LlmConfig { max_retries: 0, ..LlmConfig::default() };
    AgentBackend::Llm { client: LlmClient::new(cfg, Arc::new(ScriptedTransport::new(replies))), seed: 5 }
}

fn request(kernel: &str, count: usize) -> ProposalRequest {
    ProposalRequest {
        iteration: 1,
        kernel: KernelSummary::of(&builtin_kernel(kernel).unwrap()),
        objective: Objective::default(),
        window: vec![],
        best: None,
        count,
        bounds: DesignBounds::default(),
        tried: BTreeSet::new(),
    }
}

#[test]
fn fault_corpus_is_repaired_within_four_rounds() {
    let corpus = fault_corpus(50, 2024);
    assert_eq!(corpus.len(), 50);
    let kinds: BTreeSet<&str> = corpus.iter().map(|f| f.fault).collect();
    assert_eq!(kinds.len(), FAULTS.len(), "every fault kind is represented");

    let budget = MapBudget::default();
    let backend = AgentBackend::Heuristic { seed: 1 };
    let mut mapped_before = 0;
    let mut mapped_after = 0;
    for f in &corpus {
        let err = match stage2_check(&f.design, &f.kernel, &budget) {
            Ok(_) => {
                mapped_before += 1;
                mapped_after += 1;
                continue;
            }
            Err(e) => e,
        };
        match fix_design(&f.design, &err, &f.kernel, &budget, &backend, 4) {
            Ok(fixed) => {
                assert!(fixed.rounds <= 4);
                assert!(validate_design(&fixed.design).is_empty());
                let t = cgra_codesign::kernel::apply_sw(&f.kernel, &fixed.design.sw).unwrap();
                assert!(check_mapping(&t, &fixed.design.fabric, &fixed.mapping).is_empty());
                mapped_after += 1;
            }
            Err(e) => panic!("{} on {}: {e}", f.fault, f.kernel.name),
        }
    }
    let sr1 = mapped_before as f64 / 50.0;
    let sr2 = mapped_after as f64 / 50.0;
    assert!(sr1 < 1.0);
    assert!(sr2 >= sr1);
    assert_eq!(sr2, 1.0);
}

#[test]
fn fix_never_returns_an_unsound_design() {
    let budget = MapBudget::default();
    let backend = AgentBackend::Heuristic { seed: 0 };
    for rounds in [1, 2] {
        for f in fault_corpus(24, 77) {
            let err = stage2_check(&f.design, &f.kernel, &budget).unwrap_err();
            if let Ok(fixed) = fix_design(&f.design, &err, &f.kernel, &budget, &backend, rounds) {
                assert!(fixed.rounds <= rounds);
                assert!(stage2_check(&fixed.design, &f.kernel, &budget).is_ok(), "{}", f.fault);
            }
        }
    }
}

#[test]
fn heuristic_proposals_stay_in_bounds() {
    for kernel in ["fir", "gemm", "relu"] {
        let mut req = request(kernel, 12);
        req.bounds = DesignBounds { max_rows: 3, max_cols: 5, max_config_depth: 9, max_unroll: 2, max_vectorize: 1, data_mem_kb: vec![0, 4] };
        for iteration in 1..6 {
            req.iteration = iteration;
            let p = propose(&req, &AgentBackend::Heuristic { seed: 9 });
            assert_eq!(p.drafts.len(), 12);
            assert_eq!(p.from_llm, 0);
            let sigs: BTreeSet<String> = p.drafts.iter().map(|d| d.signature()).collect();
            assert_eq!(sigs.len(), 12, "drafts are distinct");
            for d in &p.drafts {
                assert!(req.bounds.contains(d), "{d:?}");
            }
            assert_eq!(p, propose(&req, &AgentBackend::Heuristic { seed: 9 }));
        }
    }
}

#[test]
fn llm_proposals_are_topped_up_from_the_heuristic() {
    let valid = |r: u32| format!(r#"{{"rows": {r}, "cols": 2, "fu_kinds": ["ADD", "MUL", "LOAD", "STORE"], "config_mem_depth": 8, "topology": "MESH", "unroll_factor": 1, "vectorize_factor": 1}}"#);
    let reply = format!("Here you go:\n```json\n{{\"designs\": [{}, {}, {{\"rows\": \"many\"}}, {}, 17]}}\n```", valid(2), valid(3), valid(4));
    let p = propose(&request("gemm", 5), &scripted(vec![Ok(reply)]));
    assert_eq!(p.from_llm, 3);
    assert_eq!(p.drafts.len(), 5);
    let sigs: BTreeSet<String> = p.drafts.iter().map(|d| d.signature()).collect();
    assert_eq!(sigs.len(), 5);
}

#[test]
fn llm_outage_degrades_to_heuristic() {
    let req = request("fir", 4);
    let down = scripted(vec![Err(LlmError::Transport("connection refused".into()))]);
    let p = propose(&req, &down);
    assert_eq!(p.from_llm, 0);
    assert_eq!(p.drafts, propose(&req, &AgentBackend::Heuristic { seed: 5 }).drafts);

    let garbage = scripted(vec![Ok("I cannot help with that.".into())]);
    assert_eq!(propose(&req, &garbage).from_llm, 0);

    // repair still succeeds on the heuristic path
    let f = &fault_corpus(1, 3)[0];
    let budget = MapBudget::default();
    let err = stage2_check(&f.design, &f.kernel, &budget).unwrap_err();
    let via_llm = fix_design(&f.design, &err, &f.kernel, &budget, &scripted(vec![]), 4).unwrap();
    let direct = fix_design(&f.design, &err, &f.kernel, &budget, &AgentBackend::Heuristic { seed: 5 }, 4).unwrap();
    assert_eq!(via_llm.design, direct.design);
}

/// Speedup per unit of tiles * kinds * wiring, recomputed here.
fn oracle_top_k(set: &[Candidate], k: usize) -> Vec<String> {
    let kernel = builtin_kernel("relu").unwrap();
    let obj = Objective { min_speedup: 1.0, ..Objective::default() };
    let wiring = |t: cgra_codesign::arch::Topology| match t.as_str() {
        "MESH" => 1.0,
        "KINGMESH" => 1.25,
        _ => 1.5,
    };
    let mut rows: Vec<(bool, f64, String)> = set
        .iter()
        .map(|c| {
            let f = &c.design.fabric;
            let s = c.speedup(&kernel).unwrap();
            let proxy = (f.rows * f.cols) as f64 * f.fu_kinds.len() as f64 * wiring(f.topology);
            let feasible = s >= obj.min_speedup;
            (feasible, if feasible { s / proxy } else { s }, c.design.id.clone())
        })
        .collect();
    rows.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    rows.into_iter().take(k).map(|r| r.2).collect()
}

#[test]
fn coarse_top_k_matches_recomputed_ranking() {
    let kernel = builtin_kernel("relu").unwrap();
    let obj = Objective { min_speedup: 1.0, ..Objective::default() };
    let mut rng = common::rng(42);
    for _ in 0..10 {
        let set: Vec<Candidate> = (0..2).flat_map(|_| random_set(&kernel, &mut rng)).enumerate().map(|(i, mut c)| {
            c.design.id = format!("c{i}");
            c
        }).collect();
        assert_eq!(set.len(), 10);
        let got: Vec<String> = coarse_judge(&set, &kernel, &obj, 3, &AgentBackend::Heuristic { seed: 0 })
            .into_iter()
            .map(|c| c.design.id)
            .collect();
        assert_eq!(got, oracle_top_k(&set, 3));
    }
}

#[test]
fn coarse_llm_ranking_is_completed_from_proxy_order() {
    let kernel = builtin_kernel("relu").unwrap();
    let obj = Objective { min_speedup: 1.0, ..Objective::default() };
    let set = random_set(&kernel, &mut common::rng(8));
    let backend = scripted(vec![Ok(r#"{"ranking": ["c4", "zz", "c4"]}"#.into())]);
    let got: Vec<String> = coarse_judge(&set, &kernel, &obj, 3, &backend).into_iter().map(|c| c.design.id).collect();
    let proxy: Vec<String> = oracle_top_k(&set, 5).into_iter().filter(|id| id != "c4").take(2).collect();
    assert_eq!(got, [vec!["c4".to_string()], proxy].concat());
}

#[test]
fn judge_agrees_more_after_lessons() {
    let a = agreement_experiment("relu", 20, 100, 31);
    println!("agreement {} -> {} of {}", a.before, a.after, a.sets);
    assert!(a.after > a.before, "before {} after {}", a.before, a.after);
    // frozen for this seed
    assert_eq!((a.before, a.after), (77, 92));
}

#[test]
fn lesson_store_is_capped() {
    let kernel = builtin_kernel("relu").unwrap();
    let obj = Objective { min_speedup: 1.0, ..Objective::default() };
    let mut judge = LearnedJudge::new(kernel.clone(), obj, AgentBackend::Heuristic { seed: 0 });
    let set = random_set(&kernel, &mut common::rng(1));
    let v = verdict(&set, &kernel, &obj);
    let first = judge.lesson_for(&set, &v);
    for _ in 0..LESSON_CAP + 3 {
        judge.update(&set, &v);
    }
    assert_eq!(judge.lessons().count(), LESSON_CAP);
    assert!(judge.lessons().all(|l| l.tool_choice == v.choice && l.candidates == first.candidates));
}

#[test]
fn tool_mode_lessons_record_measured_power() {
    let kernel = builtin_kernel("relu").unwrap();
    let obj = Objective { min_speedup: 1.0, ..Objective::default() };
    let judge = LearnedJudge::new(kernel.clone(), obj, AgentBackend::Heuristic { seed: 0 });
    let set = random_set(&kernel, &mut common::rng(2));
    let v = verdict(&set, &kernel, &obj);
    let l = judge.lesson_for(&set, &v);
    assert_eq!(l.tool_power.len(), set.len());
    for r in &v.reports {
        assert_eq!(l.tool_power[&r.design_id], r.power_mw);
        assert_eq!(l.tool_scores[&r.design_id], r.score);
    }
    assert_eq!(l.correct, l.judge_choice == v.choice);
}
