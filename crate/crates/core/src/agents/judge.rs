use std::collections::{BTreeMap, VecDeque};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::llm::render;
use super::{AgentBackend, PROMPT_COARSE, PROMPT_SELECT, SYSTEM_PROMPT};
use crate::arch::{design_to_value, DesignPoint, Topology};
use crate::costs::{Candidate, EvalReport, Objective, ObjectiveMode, INFEASIBLE_PENALTY};
use crate::kernel::KernelGraph;
use crate::select::{Judge, ToolVerdict};

pub const LESSON_CAP: usize = 256;
/// Power-model inputs: proxy power, bias, and four structural terms.
pub const JUDGE_FEATURES: usize = 6;

const FIT_EPOCHS: usize = 3000;
const FIT_RIDGE: f64 = 1e-4;

/// Coefficient-free wiring weight used by the judges.
pub fn structural_wiring(t: Topology) -> f64 {
    match t {
        Topology::Mesh => 1.0,
        Topology::KingMesh => 1.25,
        Topology::Crossbar => 1.5,
    }
}

/// `tiles * |fu_kinds| * wiring`.
pub fn proxy_power(d: &DesignPoint) -> f64 {
    let f = &d.fabric;
    f.tile_count() as f64 * f.fu_kinds.len() as f64 * structural_wiring(f.topology)
}

/// Judge-side score from a power estimate, in the tool's units.
pub fn proxy_score(obj: &Objective, speedup: f64, power: f64) -> f64 {
    if speedup < obj.min_speedup {
        return INFEASIBLE_PENALTY + (obj.min_speedup - speedup);
    }
    match obj.mode {
        ObjectiveMode::MinPower => power,
        ObjectiveMode::MaxPowerEfficiency => -(speedup / power),
    }
}

/// What the judges know about a mapped candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub id: String,
    pub design: Value,
    pub ii: u32,
    pub speedup: f64,
    pub feasible: bool,
    pub proxy_power: f64,
    pub features: [f64; JUDGE_FEATURES],
}

impl CandidateSummary {
    pub fn of(c: &Candidate, kernel: &KernelGraph, obj: &Objective) -> Self {
        let m = c.mapping.as_ref().expect("judged candidates are mapped");
        let d = &c.design;
        let f = &d.fabric;
        let speedup = c.speedup(kernel).expect("mapped");
        let w = structural_wiring(f.topology);
        let tiles = f.tile_count() as f64;
        let lanes = d.sw.vectorize_factor as f64;
        let activity = m.node_count() as f64 / m.ii.max(1) as f64;
        let proxy = proxy_power(d);
        CandidateSummary {
            id: d.id.clone(),
            design: design_to_value(d),
            ii: m.ii,
            speedup,
            feasible: speedup >= obj.min_speedup,
            proxy_power: proxy,
            features: [
                proxy,
                1.0,
                tiles * w,
                tiles * f.fu_kinds.len() as f64 * lanes * w,
                tiles * f.config_mem_depth as f64 * w,
                activity * lanes * w,
            ],
        }
    }
}

/// One tool-mode comparison the judge learns from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesson {
    pub candidates: Vec<CandidateSummary>,
    pub tool_choice: String,
    pub tool_scores: BTreeMap<String, f64>,
    pub tool_power: BTreeMap<String, f64>,
    pub judge_choice: String,
    pub correct: bool,
}

fn by_proxy(a: &CandidateSummary, b: &CandidateSummary) -> std::cmp::Ordering {
    // feasible first, then best speedup per proxy power, then id
    b.feasible
        .cmp(&a.feasible)
        .then_with(|| {
            if a.feasible {
                (b.speedup / b.proxy_power).total_cmp(&(a.speedup / a.proxy_power))
            } else {
                b.speedup.total_cmp(&a.speedup)
            }
        })
        .then_with(|| a.id.cmp(&b.id))
}

/// Stage 3 coarse filter: the `k` most promising mapped candidates.
pub fn coarse_judge(
    candidates: &[Candidate],
    kernel: &KernelGraph,
    obj: &Objective,
    k: usize,
    backend: &AgentBackend,
) -> Vec<Candidate> {
    let summaries: Vec<CandidateSummary> = candidates.iter().map(|c| CandidateSummary::of(c, kernel, obj)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| by_proxy(&summaries[a], &summaries[b]));

    if let (AgentBackend::Llm { client, .. }, true) = (backend, candidates.len() > k) {
        let prompt = render(
            PROMPT_COARSE,
            &[
                ("kernel_name", kernel.name.clone()),
                ("objective", obj.mode.to_string()),
                ("min_speedup", obj.min_speedup.to_string()),
                ("k", k.to_string()),
                ("candidates", serde_json::to_string_pretty(&summaries).expect("serializable")),
            ],
        );
        match client.ask_json(SYSTEM_PROMPT, &prompt) {
            Ok(v) => {
                let ids = match &v {
                    Value::Array(a) => a.clone(),
                    Value::Object(o) => o.get("ranking").and_then(Value::as_array).cloned().unwrap_or_default(),
                    _ => vec![],
                };
                let mut ranked: Vec<usize> = Vec::new();
                for id in ids.iter().filter_map(Value::as_str) {
                    match summaries.iter().position(|s| s.id == id) {
                        Some(i) if !ranked.contains(&i) => ranked.push(i),
                        Some(_) => {}
                        None => warn!("coarse judge ranked unknown id `{id}`"),
                    }
                }
                let rest: Vec<usize> = order.iter().copied().filter(|i| !ranked.contains(i)).collect();
                ranked.extend(rest);
                order = ranked;
            }
            Err(e) => warn!("coarse judge LLM unavailable ({e}); using proxy ranking"),
        }
    }
    order.into_iter().take(k.max(1)).map(|i| candidates[i].clone()).collect()
}

/// Fine-grained judge with a lesson store and a learned power correction.
///
/// The heuristic estimate of a candidate's power is `theta . features`,
/// starting at `theta = [1, 0, ...]` (the structural proxy alone). Each lesson
/// refits `theta` to the tool-measured powers by full-batch ridge gradient
/// descent with a fixed step.
#[derive(Debug, Clone)]
pub struct LearnedJudge {
    kernel: KernelGraph,
    objective: Objective,
    backend: AgentBackend,
    lessons: VecDeque<Lesson>,
    theta: [f64; JUDGE_FEATURES],
    last_choice: Option<String>,
}

const THETA0: [f64; JUDGE_FEATURES] = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];

impl LearnedJudge {
    pub fn new(kernel: KernelGraph, objective: Objective, backend: AgentBackend) -> Self {
        LearnedJudge { kernel, objective, backend, lessons: VecDeque::new(), theta: THETA0, last_choice: None }
    }

    pub fn lessons(&self) -> impl Iterator<Item = &Lesson> {
        self.lessons.iter()
    }

    pub fn theta(&self) -> [f64; JUDGE_FEATURES] {
        self.theta
    }

    pub fn estimate(&self, s: &CandidateSummary) -> f64 {
        let learned: f64 = self.theta.iter().zip(&s.features).map(|(t, x)| t * x).sum();
        // a correction that goes non-positive is not a power
        let power = if learned > 1e-9 { learned } else { s.proxy_power };
        proxy_score(&self.objective, s.speedup, power)
    }

    fn heuristic_pick(&self, summaries: &[CandidateSummary]) -> (String, f64) {
        summaries
            .iter()
            .map(|s| (s.id.clone(), self.estimate(s)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
            .expect("non-empty candidate set")
    }

    /// Summaries of `designs` as the judge sees them.
    pub fn summarize(&self, designs: &[Candidate]) -> Vec<CandidateSummary> {
        designs.iter().map(|c| CandidateSummary::of(c, &self.kernel, &self.objective)).collect()
    }

    /// Appends a lesson (evicting the oldest past the cap) and refits.
    pub fn learn(&mut self, lesson: Lesson) {
        if self.lessons.len() == LESSON_CAP {
            self.lessons.pop_front();
        }
        self.lessons.push_back(lesson);
        self.refit();
    }

    fn refit(&mut self) {
        let mut xs: Vec<[f64; JUDGE_FEATURES]> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for l in &self.lessons {
            for s in &l.candidates {
                if let Some(&p) = l.tool_power.get(&s.id) {
                    xs.push(s.features);
                    ys.push(p);
                }
            }
        }
        if xs.is_empty() {
            return;
        }
        let mut scale = [0.0f64; JUDGE_FEATURES];
        for x in &xs {
            for j in 0..JUDGE_FEATURES {
                scale[j] = scale[j].max(x[j].abs());
            }
        }
        for s in &mut scale {
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        let y_scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(1e-12);
        let n = xs.len() as f64;
        let to_scaled = |t: &[f64; JUDGE_FEATURES]| {
            let mut o = [0.0; JUDGE_FEATURES];
            for j in 0..JUDGE_FEATURES {
                o[j] = t[j] * scale[j] / y_scale;
            }
            o
        };
        let prior = to_scaled(&THETA0);
        let mut th = to_scaled(&self.theta);
        let step = 0.5 / JUDGE_FEATURES as f64;
        for _ in 0..FIT_EPOCHS {
            let mut grad = [0.0f64; JUDGE_FEATURES];
            for (x, y) in xs.iter().zip(&ys) {
                let mut pred = 0.0;
                for j in 0..JUDGE_FEATURES {
                    pred += th[j] * x[j] / scale[j];
                }
                let r = pred - y / y_scale;
                for j in 0..JUDGE_FEATURES {
                    grad[j] += 2.0 * r * x[j] / scale[j] / n;
                }
            }
            for j in 0..JUDGE_FEATURES {
                th[j] -= step * (grad[j] + 2.0 * FIT_RIDGE * (th[j] - prior[j]));
            }
        }
        for j in 0..JUDGE_FEATURES {
            self.theta[j] = th[j] * y_scale / scale[j];
        }
    }

    fn llm_pick(&self, client: &super::LlmClient, summaries: &[CandidateSummary]) -> Option<(String, f64)> {
        let window = client.config.lesson_window;
        let skip = self.lessons.len().saturating_sub(window);
        let recent: Vec<&Lesson> = self.lessons.iter().skip(skip).collect();
        let prompt = render(
            PROMPT_SELECT,
            &[
                ("kernel_name", self.kernel.name.clone()),
                ("objective", self.objective.mode.to_string()),
                ("min_speedup", self.objective.min_speedup.to_string()),
                ("candidates", serde_json::to_string_pretty(summaries).expect("serializable")),
                ("lessons", serde_json::to_string_pretty(&recent).expect("serializable")),
            ],
        );
        let v = match client.ask_json(SYSTEM_PROMPT, &prompt) {
            Ok(v) => v,
            Err(e) => {
                warn!("selection judge LLM unavailable ({e}); using learned heuristic");
                return None;
            }
        };
        let choice = v.get("choice").and_then(Value::as_str)?;
        let Some(s) = summaries.iter().find(|s| s.id == choice) else {
            warn!("selection judge chose unknown id `{choice}`; using learned heuristic");
            return None;
        };
        let score = v.get("score").and_then(Value::as_f64).filter(|x| x.is_finite()).unwrap_or_else(|| self.estimate(s));
        Some((s.id.clone(), score))
    }

    /// Builds the lesson for a tool-mode step without storing it.
    pub fn lesson_for(&self, designs: &[Candidate], verdict: &ToolVerdict) -> Lesson {
        let candidates = self.summarize(designs);
        let judge_choice = self.last_choice.clone().unwrap_or_else(|| self.heuristic_pick(&candidates).0);
        let reports: &[EvalReport] = &verdict.reports;
        Lesson {
            candidates,
            tool_choice: verdict.choice.clone(),
            tool_scores: reports.iter().map(|r| (r.design_id.clone(), r.score)).collect(),
            tool_power: reports.iter().map(|r| (r.design_id.clone(), r.power_mw)).collect(),
            correct: judge_choice == verdict.choice,
            judge_choice,
        }
    }
}

impl Judge<Candidate> for LearnedJudge {
    fn select(&mut self, designs: &[Candidate]) -> (String, f64) {
        let summaries = self.summarize(designs);
        let pick = match &self.backend {
            AgentBackend::Llm { client, .. } => self.llm_pick(client, &summaries),
            AgentBackend::Heuristic { .. } => None,
        }
        .unwrap_or_else(|| self.heuristic_pick(&summaries));
        self.last_choice = Some(pick.0.clone());
        pick
    }

    fn update(&mut self, designs: &[Candidate], verdict: &ToolVerdict) {
        let lesson = self.lesson_for(designs, verdict);
        self.learn(lesson);
        self.last_choice = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{FabricSpec, FuKind, Provenance, SwParams};
    use crate::kernel::{apply_sw, builtin_kernel};
    use crate::mapper::{map_kernel, MapBudget};

    fn mapped(id: &str, topology: Topology, kernel: &KernelGraph) -> Candidate {
        let d = DesignPoint {
            id: id.into(),
            fabric: FabricSpec {
                rows: 3,
                cols: 3,
                fu_kinds: kernel.kinds().into_iter().chain([FuKind::Add]).collect(),
                config_mem_depth: 8,
                data_mem_kb: 0,
                topology,
            },
            sw: SwParams { unroll_factor: 1, vectorize_factor: 1 },
            provenance: Provenance::Proposed,
            note: String::new(),
        };
        let k = apply_sw(kernel, &d.sw).unwrap();
        let m = map_kernel(&k, &d.fabric, &MapBudget::default()).unwrap();
        Candidate::mapped(d, m)
    }

    #[test]
    fn mesh_beats_crossbar_at_equal_ii() {
        let k = builtin_kernel("relu").unwrap();
        let a = mapped("a", Topology::Crossbar, &k);
        let b = mapped("b", Topology::Mesh, &k);
        assert_eq!(a.mapping.as_ref().unwrap().ii, b.mapping.as_ref().unwrap().ii);
        let top = coarse_judge(&[a, b], &k, &Objective::default(), 2, &AgentBackend::Heuristic { seed: 0 });
        assert_eq!(top[0].design.id, "b");
    }

    #[test]
    fn fresh_judge_scores_with_proxy() {
        let k = builtin_kernel("relu").unwrap();
        let c = mapped("only", Topology::Mesh, &k);
        let mut j = LearnedJudge::new(k.clone(), Objective::default(), AgentBackend::Heuristic { seed: 0 });
        let (choice, score) = j.select(std::slice::from_ref(&c));
        assert_eq!(choice, "only");
        let s = CandidateSummary::of(&c, &k, &Objective::default());
        assert_eq!(score, proxy_score(&Objective::default(), s.speedup, proxy_power(&c.design)));
    }
}
