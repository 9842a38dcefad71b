//! Command-line front end.
//!
//! Exit codes: 0 success, 1 internal failure, 2 bad configuration or input,
//! 3 domain failure (invalid design, unmappable kernel, no feasible design).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::arch::{parse_design, validate_design, DesignPoint};
use crate::costs::{evaluate_one, Candidate, CostCoeffs, EvalReport, Objective, ObjectiveMode};
use crate::kernel::{apply_sw, builtin_kernel, builtin_names, load_kernel, KernelGraph};
use crate::mapper::{map_kernel, min_ii_bounds, MapBudget, MappingResult};
use crate::orchestrate::{self, recount, BackendKind, Backends, Event, EventRecord, RunConfig, RunStatus};
use crate::select::{run_script, trace_to_jsonl, Mode, SelectionScript};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cgra-codesign", version, about = "CGRA hardware/software co-design loop")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the closed design loop and write its artifacts.
    Run(RunArgs),
    /// Check an architecture file against the structural rules.
    Validate {
        arch: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Map a kernel onto an architecture file.
    Map {
        arch: PathBuf,
        #[arg(long)]
        kernel: String,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Print every placement and route.
        #[arg(long)]
        dump: bool,
        #[arg(long)]
        json: bool,
    },
    /// Map and score an architecture file.
    Evaluate {
        arch: PathBuf,
        #[arg(long)]
        kernel: String,
        #[arg(long, default_value = "min-power")]
        objective: ObjectiveMode,
        #[arg(long, default_value_t = 1.5)]
        min_speedup: f64,
        /// Cost coefficient file replacing the built-in one.
        #[arg(long)]
        coeffs: Option<PathBuf>,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long)]
        json: bool,
    },
    /// Replay a scripted score stream through the selection controller.
    SelectSim { script: PathBuf },
    /// Summarize a run history as tables and CSV.
    Report {
        history: PathBuf,
        /// Also write the per-iteration CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// List the built-in kernels.
    Kernels {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    #[arg(long, default_value_t = MapBudget::default().max_ii)]
    pub max_ii: u32,
    #[arg(long, default_value_t = MapBudget::default().max_steps_per_ii)]
    pub max_steps: u64,
}

impl BudgetArgs {
    fn budget(&self) -> MapBudget {
        MapBudget { max_ii: self.max_ii, max_steps_per_ii: self.max_steps }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in kernel name or kernel JSON path.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub iterations: Option<u64>,
    /// min-power or max-power-efficiency.
    #[arg(long)]
    pub objective: Option<ObjectiveMode>,
    /// Speedup a design must reach to count as feasible.
    #[arg(long)]
    pub min_speedup: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Backend for every agent.
    #[arg(long)]
    pub backend: Option<BackendKind>,
    /// Drafts proposed per iteration.
    #[arg(long)]
    pub proposals: Option<usize>,
    /// Candidates kept by the coarse filter.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Output directory for the log and artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue the run logged in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Print the metrics as JSON.
    #[arg(long)]
    pub json: bool,
}

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Validate { arch, json } => cmd_validate(&arch, json, out),
        Command::Map { arch, kernel, budget, dump, json } => cmd_map(&arch, &kernel, &budget.budget(), dump, json, out),
        Command::Evaluate { arch, kernel, objective, min_speedup, coeffs, budget, json } => {
            let obj = Objective { mode: objective, min_speedup };
            cmd_evaluate(&arch, &kernel, obj, coeffs.as_deref(), &budget.budget(), json, out)
        }
        Command::SelectSim { script } => cmd_select_sim(&script, out),
        Command::Report { history, csv, json } => cmd_report(&history, csv.as_deref(), json, out),
        Command::Kernels { json } => cmd_kernels(json, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure { code, message }) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn fail<T>(code: i32, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure { code, message: message.into() })
}

type CmdResult = Result<(), Failure>;

fn emit(out: &mut dyn Write, text: &str) -> CmdResult {
    out.write_all(text.as_bytes()).or_else(|e| fail(EXIT_INTERNAL, format!("writing output: {e}")))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn read_design(path: &Path) -> Result<DesignPoint, Failure> {
    let text = fs::read_to_string(path).or_else(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
    parse_design(&text).or_else(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))
}

fn read_kernel(name: &str) -> Result<KernelGraph, Failure> {
    load_kernel(name).or_else(|e| fail(EXIT_INPUT, e.to_string()))
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> CmdResult {
    let mut cfg = match (&a.config, &a.kernel) {
        (Some(p), _) => RunConfig::from_path(p).or_else(|e| fail(EXIT_INPUT, e.to_string()))?,
        (None, Some(k)) => RunConfig::new(k),
        (None, None) => return fail(EXIT_INPUT, "run needs --config or --kernel"),
    };
    if let Some(k) = a.kernel {
        cfg.kernel = k;
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(m) = a.objective {
        cfg.objective.mode = m;
    }
    if let Some(s) = a.min_speedup {
        cfg.objective.min_speedup = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = a.backend {
        cfg.backends = Backends::all(b);
    }
    if let Some(m) = a.proposals {
        cfg.proposals = m;
    }
    if let Some(k) = a.top_k {
        cfg.top_k = k;
    }
    if let Some(o) = a.out {
        cfg.out_dir = o;
    }
    let metrics = match orchestrate::run(&cfg, a.resume) {
        Ok(m) => m,
        Err(e) if e.is_input_error() => return fail(EXIT_INPUT, e.to_string()),
        Err(e) => return fail(EXIT_INTERNAL, e.to_string()),
    };
    if a.json {
        emit(out, &to_json(&metrics))?;
    } else {
        let mut s = String::new();
        let _ = writeln!(s, "kernel       {}", metrics.kernel);
        let _ = writeln!(s, "objective    {} (min speedup {})", metrics.objective.mode, metrics.objective.min_speedup);
        let _ = writeln!(s, "iterations   {}", metrics.iterations);
        let _ = writeln!(s, "SR1 / SR2    {:.3} / {:.3}", metrics.sr1, metrics.sr2);
        if let Some(c) = metrics.chosen.as_ref().or(metrics.best_infeasible.as_ref()) {
            let _ = writeln!(s, "best design  {}", c.design.id);
            s.push_str(&report_table(&c.report));
        }
        let _ = writeln!(s, "artifacts    {}", cfg.out_dir.display());
        emit(out, &s)?;
    }
    match metrics.status {
        RunStatus::Feasible => Ok(()),
        RunStatus::NoFeasibleDesign => {
            fail(EXIT_DOMAIN, format!("NO_FEASIBLE_DESIGN: no design reached speedup {}", metrics.objective.min_speedup))
        }
    }
}

fn report_table(r: &EvalReport) -> String {
    format!(
        "  speedup           {:.4}\n  power_mw          {:.6}\n  area_kum2         {:.6}\n  power_efficiency  {:.6}\n  score             {:.6}\n  feasible          {}\n",
        r.speedup, r.power_mw, r.area_kum2, r.power_efficiency, r.score, r.feasible
    )
}

fn cmd_validate(path: &Path, json: bool, out: &mut dyn Write) -> CmdResult {
    let d = read_design(path)?;
    let violations = validate_design(&d);
    if json {
        emit(out, &to_json(&json!({ "design_id": d.id, "valid": violations.is_empty(), "violations": violations })))?;
    } else if violations.is_empty() {
        emit(out, "valid\n")?;
    }
    if violations.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> =
        violations.iter().map(|v| format!("{} {}: {}", v.code.as_str(), v.field, v.message)).collect();
    fail(EXIT_DOMAIN, format!("{} is invalid\n  {}", d.id, lines.join("\n  ")))
}

/// Validates, transforms and maps; failures are domain errors.
fn map_design(d: &DesignPoint, kernel: &KernelGraph, budget: &MapBudget) -> Result<(KernelGraph, MappingResult), Failure> {
    let violations = validate_design(d);
    if !violations.is_empty() {
        let codes: Vec<&str> = violations.iter().map(|v| v.code.as_str()).collect();
        return fail(EXIT_DOMAIN, format!("{} is invalid: {}", d.id, codes.join(", ")));
    }
    let k = apply_sw(kernel, &d.sw).or_else(|e| fail(EXIT_DOMAIN, e.to_string()))?;
    let m = map_kernel(&k, &d.fabric, budget).or_else(|e| {
        let hint = e.hint.as_ref().map(|h| format!(" (hint: {})", serde_json::to_string(h).expect("serializable")));
        fail(EXIT_DOMAIN, format!("{e}{}", hint.unwrap_or_default()))
    })?;
    Ok((k, m))
}

fn cmd_map(path: &Path, kernel: &str, budget: &MapBudget, dump: bool, json: bool, out: &mut dyn Write) -> CmdResult {
    let d = read_design(path)?;
    let original = read_kernel(kernel)?;
    let (k, m) = map_design(&d, &original, budget)?;
    let (res, rec) = min_ii_bounds(&k, &d.fabric);
    let speedup = Candidate::mapped(d.clone(), m.clone()).speedup(&original).expect("mapped");
    if json {
        let v = json!({
            "design_id": d.id,
            "kernel": original.name,
            "res_mii": res,
            "rec_mii": rec,
            "speedup": speedup,
            "mapping": m,
        });
        return emit(out, &to_json(&v));
    }
    let mut s = format!(
        "{} on {}: ii {} (res_mii {res}, rec_mii {rec}), schedule_len {}, speedup {speedup:.4}\n",
        original.name, d.id, m.ii, m.schedule_len
    );
    if dump {
        let _ = writeln!(s, "\n{:<6} {:<6} {:<8} {:>5}", "node", "kind", "tile", "cycle");
        for p in &m.placements {
            let kind = k.node(p.node).map(|n| n.kind.as_str()).unwrap_or("?");
            let _ = writeln!(s, "{:<6} {:<6} {:<8} {:>5}", p.node, kind, p.tile.to_string(), p.cycle);
        }
        s.push('\n');
        for r in &m.routes {
            let path: Vec<String> = r.path.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "{} -> {} d={}: {}", r.src, r.dst, r.distance, path.join(" "));
        }
    }
    emit(out, &s)
}

fn cmd_evaluate(
    path: &Path,
    kernel: &str,
    obj: Objective,
    coeffs: Option<&Path>,
    budget: &MapBudget,
    json: bool,
    out: &mut dyn Write,
) -> CmdResult {
    if !obj.is_valid() {
        return fail(EXIT_INPUT, format!("min speedup must be positive, got {}", obj.min_speedup));
    }
    let coeffs = match coeffs {
        Some(p) => CostCoeffs::from_path(p).or_else(|e| fail(EXIT_INPUT, e.to_string()))?,
        None => CostCoeffs::default(),
    };
    let d = read_design(path)?;
    let original = read_kernel(kernel)?;
    let (_, m) = map_design(&d, &original, budget)?;
    let report = evaluate_one(&Candidate::mapped(d, m), &original, &obj, &coeffs)
        .or_else(|e| fail(EXIT_INTERNAL, e.to_string()))?;
    if json {
        emit(out, &to_json(&report))
    } else {
        emit(out, &format!("{} on {}\n{}", original.name, report.design_id, report_table(&report)))
    }
}

fn cmd_select_sim(path: &Path, out: &mut dyn Write) -> CmdResult {
    let text = fs::read_to_string(path).or_else(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
    let script: SelectionScript =
        serde_json::from_str(&text).or_else(|e| fail(EXIT_INPUT, format!("malformed script: {e}")))?;
    if script.steps.is_empty() {
        return fail(EXIT_INPUT, "script has no steps");
    }
    let trace = run_script(&script).or_else(|e| fail(EXIT_INPUT, e.to_string()))?;
    emit(out, &trace_to_jsonl(&trace))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub iteration: u64,
    pub best_score: Option<f64>,
    pub best_power_efficiency: Option<f64>,
    pub sr1: f64,
    pub sr2: f64,
    pub mode: Option<Mode>,
    pub final_choice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub kernel: Option<String>,
    pub iterations: usize,
    pub sr1: f64,
    pub sr2: f64,
    pub rows: Vec<ReportRow>,
    pub chosen: Option<EvalReport>,
}

/// Rebuilds the per-iteration series from raw events and checks them
/// against the logged iteration summaries.
pub fn build_report(records: &[EventRecord]) -> Result<RunReport, String> {
    let counts = recount(records);
    let proposals_per_iteration = records.iter().find_map(|r| match &r.event {
        Event::RunStart { config } => config.get("proposals").and_then(|v| v.as_u64()),
        _ => None,
    });
    let kernel = records.iter().find_map(|r| match &r.event {
        Event::RunStart { config } => config.get("kernel").and_then(|v| v.as_str()).map(str::to_string),
        _ => None,
    });
    let better = |a: &EvalReport, b: &EvalReport| {
        a.score.total_cmp(&b.score).then_with(|| a.design_id.cmp(&b.design_id)).is_lt()
    };
    let mut best: Option<EvalReport> = None;
    let mut rows = Vec::new();
    let (mut pre_total, mut post_total, mut denom_total) = (0usize, 0usize, 0usize);
    for r in records {
        match &r.event {
            Event::Eval { report, .. } if report.feasible => {
                if best.as_ref().is_none_or(|b| better(report, b)) {
                    best = Some(report.clone());
                }
            }
            Event::IterationEnd { summary } => {
                let (proposed, pre, post) = counts.get(&summary.iteration).copied().unwrap_or_default();
                let denom = proposals_per_iteration.map(|m| m as usize).unwrap_or(proposed).max(proposed);
                let (sr1, sr2) = (orchestrate::ratio(pre, denom), orchestrate::ratio(post, denom));
                if (sr1, sr2) != (summary.sr1, summary.sr2) {
                    return Err(format!(
                        "iteration {}: logged SR {}/{} but events give {sr1}/{sr2}",
                        summary.iteration, summary.sr1, summary.sr2
                    ));
                }
                let best_score = best.as_ref().map(|b| b.score);
                if best_score != summary.best_score {
                    return Err(format!(
                        "iteration {}: logged best score {:?} but events give {best_score:?}",
                        summary.iteration, summary.best_score
                    ));
                }
                pre_total += pre;
                post_total += post;
                denom_total += denom;
                rows.push(ReportRow {
                    iteration: summary.iteration,
                    best_score,
                    best_power_efficiency: best.as_ref().map(|b| b.power_efficiency),
                    sr1,
                    sr2,
                    mode: summary.mode,
                    final_choice: summary.final_choice.clone(),
                });
            }
            _ => {}
        }
    }
    if rows.is_empty() {
        return Err("EMPTY_HISTORY: no completed iterations".into());
    }
    Ok(RunReport {
        schema_version: orchestrate::SCHEMA_VERSION,
        kernel,
        iterations: rows.len(),
        sr1: orchestrate::ratio(pre_total, denom_total),
        sr2: orchestrate::ratio(post_total, denom_total),
        rows,
        chosen: best,
    })
}

pub fn report_csv(r: &RunReport) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut s = String::from("iteration,best_score,best_power_efficiency,sr1,sr2,mode,final_choice\n");
    for row in &r.rows {
        let mode = match row.mode {
            Some(Mode::Tool) => "TOOL",
            Some(Mode::Llm) => "LLM",
            None => "",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            row.iteration,
            opt(row.best_score),
            opt(row.best_power_efficiency),
            row.sr1,
            row.sr2,
            mode,
            row.final_choice.as_deref().unwrap_or("")
        );
    }
    s
}

fn cmd_report(path: &Path, csv: Option<&Path>, json: bool, out: &mut dyn Write) -> CmdResult {
    let records = orchestrate::read_log(path).or_else(|e| fail(EXIT_INPUT, e.to_string()))?;
    if records.is_empty() {
        return fail(EXIT_INPUT, "EMPTY_HISTORY: no events");
    }
    let records: Vec<EventRecord> = records.into_iter().map(|(r, _)| r).collect();
    let report = build_report(&records).or_else(|e| fail(EXIT_INPUT, e))?;
    let table = report_csv(&report);
    if let Some(p) = csv {
        fs::write(p, &table).or_else(|e| fail(EXIT_INTERNAL, format!("{}: {e}", p.display())))?;
    }
    if json {
        return emit(out, &to_json(&report));
    }
    let mut s = String::new();
    let _ = writeln!(s, "kernel       {}", report.kernel.as_deref().unwrap_or("?"));
    let _ = writeln!(s, "iterations   {}", report.iterations);
    let _ = writeln!(s, "SR1 / SR2    {:.3} / {:.3}", report.sr1, report.sr2);
    match &report.chosen {
        Some(c) => {
            let _ = writeln!(s, "best design  {}", c.design_id);
            s.push_str(&report_table(c));
        }
        None => s.push_str("best design  none feasible\n"),
    }
    s.push('\n');
    s.push_str(&table);
    emit(out, &s)
}

fn census_text(k: &KernelGraph) -> String {
    k.census().iter().map(|(kind, n)| format!("{kind}:{n}")).collect::<Vec<_>>().join(" ")
}

fn cmd_kernels(json: bool, out: &mut dyn Write) -> CmdResult {
    let kernels: Vec<KernelGraph> = builtin_names().filter_map(builtin_kernel).collect();
    if json {
        let v: Vec<_> = kernels
            .iter()
            .map(|k| {
                let census: BTreeMap<String, usize> = k.census().into_iter().map(|(f, n)| (f.to_string(), n)).collect();
                json!({
                    "name": k.name,
                    "description": k.description,
                    "trip_count": k.trip_count,
                    "nodes": k.nodes.len(),
                    "edges": k.edges.len(),
                    "carried_edges": k.carried_edges().count(),
                    "census": census,
                })
            })
            .collect();
        return emit(out, &to_json(&v));
    }
    let mut s = format!("{:<20} {:>5} {:>5} {:>7} {:>6}  census\n", "name", "nodes", "edges", "carried", "trip");
    for k in &kernels {
        let _ = writeln!(
            s,
            "{:<20} {:>5} {:>5} {:>7} {:>6}  {}",
            k.name,
            k.nodes.len(),
            k.edges.len(),
            k.carried_edges().count(),
            k.trip_count,
            census_text(k)
        );
    }
    emit(out, &s)
}
