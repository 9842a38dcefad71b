//! The closed loop: propose, map and repair, judge and select, evaluate.
//!
//! Every iteration's events are appended to `history.jsonl` and flushed
//! before the next one starts, so a crashed run can be resumed from the log.

mod events;

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use events::{
    complete_prefix, entries_of, parse_log, ratio, read_log, recount, Event, EventRecord, IterationStatus,
    IterationSummary, LogError, SCHEMA_VERSION,
};

use crate::agents::{
    coarse_judge, fix_design, propose, stage2_check, AgentBackend, DesignBounds, EntryOutcome, FixFailure, Fixed,
    History, HistoryEntry, LearnedJudge, LlmClient, LlmConfig, ProposalRequest, Stage2Error,
};
use crate::arch::{serialize_design, DesignPoint};
use crate::costs::{tool_evaluate, tool_select, Candidate, CostCoeffs, CostError, EvalReport, Objective};
use crate::kernel::{load_kernel, KernelError, KernelGraph, KernelSummary};
use crate::mapper::{MapBudget, MappingResult};
use crate::select::{select_step, SelectError, SelectionConfig, SelectionState, Tool, ToolVerdict};

pub const HISTORY_FILE: &str = "history.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const BEST_DESIGN_FILE: &str = "best_design.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Heuristic,
    Llm,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "heuristic" => Ok(BackendKind::Heuristic),
            "llm" => Ok(BackendKind::Llm),
            _ => Err(format!("unknown backend `{s}` (expected heuristic or llm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub proposer: BackendKind,
    pub fixer: BackendKind,
    pub coarse_judge: BackendKind,
    pub judge: BackendKind,
}

impl Backends {
    pub fn all(kind: BackendKind) -> Self {
        Backends { proposer: kind, fixer: kind, coarse_judge: kind, judge: kind }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in kernel name or path to a kernel JSON file.
    pub kernel: String,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "d_iterations")]
    pub iterations: u64,
    /// Drafts proposed per iteration (M).
    #[serde(default = "d_proposals")]
    pub proposals: usize,
    /// Survivors of the coarse judge (K).
    #[serde(default = "d_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub map_budget: MapBudget,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub backends: Backends,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_fix_rounds")]
    pub fix_rounds: u32,
    #[serde(default)]
    pub bounds: DesignBounds,
    /// Iterations of history shown to the proposer, besides the global best.
    #[serde(default = "d_window")]
    pub history_window: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_coeffs: Option<PathBuf>,
    #[serde(default = "d_out_dir")]
    pub out_dir: PathBuf,
}

fn d_iterations() -> u64 {
    10
}
fn d_proposals() -> usize {
    6
}
fn d_top_k() -> usize {
    3
}
fn d_fix_rounds() -> u32 {
    4
}
fn d_window() -> u64 {
    3
}
fn d_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl RunConfig {
    /// Defaults for everything but the kernel.
    pub fn new(kernel: &str) -> Self {
        serde_json::from_value(json!({ "kernel": kernel })).expect("all other fields defaulted")
    }

    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(format!("run config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn check(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.iterations < 1 {
            return bad("iterations must be >= 1".into());
        }
        if !(self.proposals >= self.top_k && self.top_k >= 1) {
            return bad(format!("need proposals >= top_k >= 1, got {} and {}", self.proposals, self.top_k));
        }
        if self.fix_rounds < 1 {
            return bad("fix_rounds must be >= 1".into());
        }
        if self.map_budget.max_ii < 1 || self.map_budget.max_steps_per_ii < 1 {
            return bad("map_budget fields must be >= 1".into());
        }
        if !self.objective.is_valid() {
            return bad(format!("min_speedup must be positive, got {}", self.objective.min_speedup));
        }
        if self.llm.max_in_flight < 1 {
            return bad("llm.max_in_flight must be >= 1".into());
        }
        self.selection.check().map_err(|e| RunError::Config(e.to_string()))?;
        self.bounds.check().map_err(RunError::Config)
    }

    /// The part of the config a resumed run must agree on.
    fn fingerprint(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("serializable");
        let o = v.as_object_mut().expect("object");
        o.remove("iterations");
        o.remove("out_dir");
        v
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("CONFIG_ERROR: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Costs(#[from] CostError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error("IO_ERROR: {0}")]
    Io(String),
}

impl RunError {
    pub fn code(&self) -> &'static str {
        match self {
            RunError::Config(_) => "CONFIG_ERROR",
            RunError::Kernel(e) => e.code(),
            RunError::Costs(e) => e.code(),
            RunError::Log(e) => e.code(),
            RunError::Select(e) => e.code(),
            RunError::Io(_) => "IO_ERROR",
        }
    }

    /// Errors caused by the user's inputs rather than the engine.
    pub fn is_input_error(&self) -> bool {
        matches!(self, RunError::Config(_) | RunError::Kernel(_) | RunError::Log(_))
            || matches!(self, RunError::Costs(CostError::InvalidCoeffs(_) | CostError::Io { .. }))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

/// Tool side of selection: the analytic cost model.
pub struct CostTool<'a> {
    pub kernel: &'a KernelGraph,
    pub objective: Objective,
    pub coeffs: &'a CostCoeffs,
}

impl Tool<Candidate> for CostTool<'_> {
    fn evaluate_and_select(&mut self, designs: &[Candidate]) -> Result<ToolVerdict, SelectError> {
        let reports = tool_evaluate(designs, self.kernel, &self.objective, self.coeffs)
            .map_err(|e| SelectError::Tool(e.to_string()))?;
        let (choice, score) = tool_select(&reports).map_err(|e| SelectError::Tool(e.to_string()))?;
        let feasible = reports.iter().any(|r| r.design_id == choice && r.feasible);
        Ok(ToolVerdict { choice, score, feasible, reports })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Feasible,
    NoFeasibleDesign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chosen {
    pub design: DesignPoint,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub kernel: String,
    pub objective: Objective,
    pub seed: u64,
    pub iterations: u64,
    pub status: RunStatus,
    pub sr1: f64,
    pub sr2: f64,
    pub best_score_per_iteration: Vec<Option<f64>>,
    pub best_power_efficiency_per_iteration: Vec<Option<f64>>,
    pub per_iteration: Vec<IterationSummary>,
    pub chosen: Option<Chosen>,
    /// Best design overall when none met the speedup constraint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_infeasible: Option<Chosen>,
    pub final_conf: f64,
    pub judge_lessons: usize,
}

/// How a draft came through Stage 2.
enum Stage2 {
    Mapped(MappingResult),
    Fixed(Stage2Error, Fixed),
    Failed(Stage2Error, FixFailure),
}

/// In-memory state of a run.
pub struct Run {
    cfg: RunConfig,
    kernel: KernelGraph,
    coeffs: CostCoeffs,
    proposer: AgentBackend,
    fixer: AgentBackend,
    coarse: AgentBackend,
    pool: Option<Arc<rayon::ThreadPool>>,
    pub history: History,
    pub state: SelectionState,
    pub judge: LearnedJudge,
    summaries: Vec<IterationSummary>,
    seq: u64,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self, RunError> {
        cfg.check()?;
        let kernel = load_kernel(&cfg.kernel)?;
        let coeffs = match &cfg.cost_coeffs {
            Some(p) => CostCoeffs::from_path(p)?,
            None => CostCoeffs::default(),
        };
        let uses_llm = [cfg.backends.proposer, cfg.backends.fixer, cfg.backends.coarse_judge, cfg.backends.judge]
            .contains(&BackendKind::Llm);
        let client = uses_llm.then(|| LlmClient::http(cfg.llm.clone().with_env()));
        let backend = |kind: BackendKind| match (kind, &client) {
            (BackendKind::Llm, Some(c)) => AgentBackend::Llm { client: c.clone(), seed: cfg.seed },
            _ => AgentBackend::Heuristic { seed: cfg.seed },
        };
        let pool = if uses_llm {
            let p = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.llm.max_in_flight)
                .build()
                .map_err(|e| RunError::Io(format!("thread pool: {e}")))?;
            Some(Arc::new(p))
        } else {
            None
        };
        let judge = LearnedJudge::new(kernel.clone(), cfg.objective, backend(cfg.backends.judge));
        Ok(Run {
            proposer: backend(cfg.backends.proposer),
            fixer: backend(cfg.backends.fixer),
            coarse: backend(cfg.backends.coarse_judge),
            pool,
            judge,
            kernel,
            coeffs,
            history: History::default(),
            state: SelectionState::default(),
            summaries: Vec::new(),
            seq: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn kernel(&self) -> &KernelGraph {
        &self.kernel
    }

    pub fn summaries(&self) -> &[IterationSummary] {
        &self.summaries
    }

    pub fn completed_iterations(&self) -> u64 {
        self.summaries.last().map(|s| s.iteration).unwrap_or(0)
    }

    fn record(&mut self, iteration: u64, event: Event) -> EventRecord {
        let r = EventRecord { schema_version: SCHEMA_VERSION, seq: self.seq, iteration, event, meta: None };
        self.seq += 1;
        r
    }

    pub fn start_event(&mut self) -> EventRecord {
        let config = self.cfg.fingerprint();
        self.record(0, Event::RunStart { config })
    }

    /// Restores state from the complete iterations of a log.
    pub fn replay(&mut self, records: &[EventRecord]) -> Result<(), RunError> {
        match records.first().map(|r| &r.event) {
            Some(Event::RunStart { config }) => {
                if *config != self.cfg.fingerprint() {
                    return Err(RunError::Config("resume: config differs from the logged run".into()));
                }
            }
            _ => return Err(RunError::Config("resume: log does not start with run_start".into())),
        }
        let mut pending: Vec<&EventRecord> = Vec::new();
        for r in &records[1..] {
            match &r.event {
                Event::Selection { record } => self.state = {
                    let mut trace = std::mem::take(&mut self.state.trace);
                    trace.push(record.clone());
                    SelectionState::from_trace(trace)
                },
                Event::Lesson { lesson } => self.judge.learn(lesson.clone()),
                Event::IterationEnd { summary } => {
                    pending.push(r);
                    self.history.append_iteration(summary.iteration, entries_of(&pending));
                    self.summaries.push(summary.clone());
                    pending.clear();
                    continue;
                }
                _ => {}
            }
            pending.push(r);
        }
        self.history.trace = self.state.trace.clone();
        self.seq = records.last().map(|r| r.seq + 1).unwrap_or(0);
        Ok(())
    }

    fn proposal_request(&self, iteration: u64) -> ProposalRequest {
        let best = self
            .history
            .best_feasible()
            .or_else(|| self.history.best())
            .map(|(d, r)| (d.clone(), r.clone()));
        ProposalRequest {
            iteration,
            kernel: KernelSummary::of(&self.kernel),
            objective: self.cfg.objective,
            window: self.history.window(self.cfg.history_window),
            best,
            count: self.cfg.proposals,
            bounds: self.cfg.bounds.clone(),
            tried: self.history.signatures(),
        }
    }

    /// Runs the next iteration with proposals from the configured proposer.
    pub fn run_iteration(&mut self) -> Result<Vec<EventRecord>, RunError> {
        let iteration = self.completed_iterations() + 1;
        let proposal = propose(&self.proposal_request(iteration), &self.proposer);
        let from_llm = proposal.from_llm;
        let drafts = proposal
            .drafts
            .into_iter()
            .take(self.cfg.proposals)
            .enumerate()
            .map(|(j, mut d)| {
                let llm = d.id.starts_with("llm");
                d.id = format!("i{iteration:03}-{j:02}");
                (d, llm && from_llm > 0)
            })
            .collect();
        self.run_iteration_on(drafts)
    }

    /// Runs the next iteration on the given drafts (`(design, from_llm)`).
    pub fn run_iteration_on(&mut self, drafts: Vec<(DesignPoint, bool)>) -> Result<Vec<EventRecord>, RunError> {
        let iteration = self.completed_iterations() + 1;
        let mut out = Vec::new();
        for (d, from_llm) in &drafts {
            let e = self.record(iteration, Event::Proposal { design: d.clone(), from_llm: *from_llm });
            out.push(e);
        }

        // Stage 2
        let stage2 = |d: &DesignPoint| match stage2_check(d, &self.kernel, &self.cfg.map_budget) {
            Ok(m) => Stage2::Mapped(m),
            Err(err) => match fix_design(d, &err, &self.kernel, &self.cfg.map_budget, &self.fixer, self.cfg.fix_rounds) {
                Ok(f) => Stage2::Fixed(err, f),
                Err(f) => Stage2::Failed(err, f),
            },
        };
        let results: Vec<Stage2> = match &self.pool {
            Some(p) => p.install(|| drafts.par_iter().map(|(d, _)| stage2(d)).collect()),
            None => drafts.par_iter().map(|(d, _)| stage2(d)).collect(),
        };

        let mut survivors: Vec<Candidate> = Vec::new();
        let mut failed: Vec<HistoryEntry> = Vec::new();
        let (mut mapped_pre, mut mapped_post) = (0, 0);
        for ((d, _), r) in drafts.iter().zip(results) {
            match r {
                Stage2::Mapped(m) => {
                    mapped_pre += 1;
                    mapped_post += 1;
                    let ev = Event::MapResult { design_id: d.id.clone(), ii: m.ii, schedule_len: m.schedule_len, repaired: false };
                    out.push(self.record(iteration, ev));
                    survivors.push(Candidate::mapped(d.clone(), m));
                }
                Stage2::Fixed(err, f) => {
                    mapped_post += 1;
                    out.push(self.record(iteration, Event::Violation { design_id: d.id.clone(), error: err }));
                    let ev = Event::Fix { design_id: d.id.clone(), repaired: true, rounds: f.rounds, design: f.design.clone(), error: None };
                    out.push(self.record(iteration, ev));
                    let ev = Event::MapResult { design_id: d.id.clone(), ii: f.mapping.ii, schedule_len: f.mapping.schedule_len, repaired: true };
                    out.push(self.record(iteration, ev));
                    survivors.push(Candidate::mapped(f.design, f.mapping));
                }
                Stage2::Failed(err, f) => {
                    warn!("iteration {iteration}: {} dropped ({f})", d.id);
                    out.push(self.record(iteration, Event::Violation { design_id: d.id.clone(), error: err }));
                    let ev = Event::Fix {
                        design_id: d.id.clone(),
                        repaired: false,
                        rounds: f.rounds,
                        design: f.design.clone(),
                        error: Some(f.error.clone()),
                    };
                    out.push(self.record(iteration, ev));
                    failed.push(HistoryEntry {
                        iteration,
                        design: f.design,
                        outcome: EntryOutcome::Failed { code: f.error.code(), detail: f.error.to_string() },
                    });
                }
            }
        }

        // Stage 3
        let mut summary = IterationSummary {
            iteration,
            status: IterationStatus::Ok,
            proposed: drafts.len(),
            mapped_pre,
            mapped_post,
            sr1: ratio(mapped_pre, self.cfg.proposals),
            sr2: ratio(mapped_post, self.cfg.proposals),
            survivors: Vec::new(),
            final_choice: None,
            mode: None,
            best_score: None,
            best_power_efficiency: None,
            best_id: None,
        };
        if survivors.is_empty() {
            warn!("iteration {iteration}: ITERATION_EMPTY, no candidate survived Stage 2");
            summary.status = IterationStatus::IterationEmpty;
        } else {
            let top = coarse_judge(&survivors, &self.kernel, &self.cfg.objective, self.cfg.top_k, &self.coarse);
            summary.survivors = top.iter().map(|c| c.design.id.clone()).collect();
            out.push(self.record(iteration, Event::Coarse { survivors: summary.survivors.clone() }));
            let mut tool = CostTool { kernel: &self.kernel, objective: self.cfg.objective, coeffs: &self.coeffs };
            let step = select_step(&top, &mut self.state, &self.cfg.selection, &mut tool, &mut self.judge)?;
            summary.final_choice = Some(step.record.final_choice.clone());
            summary.mode = Some(step.record.mode);
            self.history.trace.push(step.record.clone());
            out.push(self.record(iteration, Event::Selection { record: step.record }));
            if step.verdict.is_some() {
                let lesson = self.judge.lessons().last().cloned().expect("tool step stores a lesson");
                out.push(self.record(iteration, Event::Lesson { lesson }));
            }
        }

        // Stage 4
        let reports = tool_evaluate(&survivors, &self.kernel, &self.cfg.objective, &self.coeffs)?;
        let mut entries = failed;
        for (c, r) in survivors.into_iter().zip(reports) {
            let ii = c.mapping.as_ref().expect("mapped").ii;
            let ev = Event::Eval { design_id: c.design.id.clone(), ii, report: r.clone() };
            out.push(self.record(iteration, ev));
            entries.push(HistoryEntry { iteration, design: c.design, outcome: EntryOutcome::Evaluated { ii, report: r } });
        }
        self.history.append_iteration(iteration, entries);
        if let Some((d, r)) = self.history.best_feasible() {
            summary.best_score = Some(r.score);
            summary.best_power_efficiency = Some(r.power_efficiency);
            summary.best_id = Some(d.id.clone());
        }
        info!(
            "iteration {iteration}: sr1 {:.2} sr2 {:.2} choice {:?} best {:?}",
            summary.sr1, summary.sr2, summary.final_choice, summary.best_score
        );
        self.summaries.push(summary.clone());
        out.push(self.record(iteration, Event::IterationEnd { summary }));
        Ok(out)
    }

    pub fn metrics(&self) -> RunMetrics {
        let (pre, post, proposed) = self.summaries.iter().fold((0, 0, 0), |(a, b, c), s| {
            (a + s.mapped_pre, b + s.mapped_post, c + self.cfg.proposals.max(s.proposed))
        });
        let chosen = self.history.best_feasible().map(|(d, r)| Chosen { design: d.clone(), report: r.clone() });
        let best_infeasible = match chosen {
            Some(_) => None,
            None => self.history.best().map(|(d, r)| Chosen { design: d.clone(), report: r.clone() }),
        };
        RunMetrics {
            schema_version: SCHEMA_VERSION,
            kernel: self.kernel.name.clone(),
            objective: self.cfg.objective,
            seed: self.cfg.seed,
            iterations: self.completed_iterations(),
            status: if chosen.is_some() { RunStatus::Feasible } else { RunStatus::NoFeasibleDesign },
            sr1: ratio(pre, proposed),
            sr2: ratio(post, proposed),
            best_score_per_iteration: self.summaries.iter().map(|s| s.best_score).collect(),
            best_power_efficiency_per_iteration: self.summaries.iter().map(|s| s.best_power_efficiency).collect(),
            per_iteration: self.summaries.clone(),
            chosen,
            best_infeasible,
            final_conf: self.state.conf,
            judge_lessons: self.judge.lessons().count(),
        }
    }
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn append(file: &mut File, path: &Path, records: Vec<EventRecord>) -> Result<(), RunError> {
    let meta = json!({ "unix_ms": unix_ms() });
    let mut buf = String::new();
    for mut r in records {
        r.meta = Some(meta.clone());
        buf.push_str(&serde_json::to_string(&r).expect("serializable"));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).and_then(|_| file.sync_data()).map_err(|e| io_err(path, e))
}

/// Runs (or resumes) a whole loop and writes the artifacts to `cfg.out_dir`.
///
/// With `resume`, completed iterations of an existing log are replayed and
/// the run continues up to `cfg.iterations` in total.
pub fn run(cfg: &RunConfig, resume: bool) -> Result<RunMetrics, RunError> {
    let mut r = Run::new(cfg.clone())?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let log_path = dir.join(HISTORY_FILE);

    let mut file = if resume && log_path.exists() {
        let records = read_log(&log_path)?;
        let keep = complete_prefix(&records);
        if keep < records.len() {
            warn!("resume: dropping {} events of an unfinished iteration", records.len() - keep);
        }
        let kept: Vec<EventRecord> = records[..keep].iter().map(|(r, _)| r.clone()).collect();
        r.replay(&kept)?;
        let text: String = records[..keep].iter().map(|(_, line)| format!("{line}\n")).collect();
        fs::write(&log_path, text).map_err(|e| io_err(&log_path, e))?;
        info!("resumed after iteration {}", r.completed_iterations());
        OpenOptions::new().append(true).open(&log_path).map_err(|e| io_err(&log_path, e))?
    } else {
        let mut f = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
        let start = r.start_event();
        append(&mut f, &log_path, vec![start])?;
        f
    };

    while r.completed_iterations() < cfg.iterations {
        let records = r.run_iteration()?;
        append(&mut file, &log_path, records)?;
    }

    let metrics = r.metrics();
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| io_err(&p, e))
    };
    write(METRICS_FILE, serde_json::to_string_pretty(&metrics).expect("serializable") + "\n")?;
    if let Some(c) = metrics.chosen.as_ref().or(metrics.best_infeasible.as_ref()) {
        write(BEST_DESIGN_FILE, serialize_design(&c.design))?;
    }
    Ok(metrics)
}
