//! Adaptive-confidence selection between tool evaluation and a learned judge.
//!
//! Each step increments the iteration counter, then runs the tool when
//! confidence is below the threshold or the iteration hits the validation
//! interval. In tool mode the judge's pick is compared with the tool's,
//! `similarity = exp(-|l_score - t_score| / sigma)` feeds an EMA of the
//! confidence, the tool's choice wins, and the judge learns from the reports.
//! Otherwise the judge's choice is taken as is.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::EvalReport;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("EMPTY_CANDIDATE_SET: no candidates for iteration {0}")]
    EmptyCandidateSet(u64),
    #[error("INVALID_SELECTION_CONFIG: {0}")]
    InvalidConfig(String),
    #[error("TOOL_FAILURE: {0}")]
    Tool(String),
    #[error("INSUFFICIENT_CANDIDATE_SETS: {got} sets for {want} iterations")]
    InsufficientSets { got: usize, want: u64 },
}

impl SelectError {
    pub fn code(&self) -> &'static str {
        match self {
            SelectError::EmptyCandidateSet(_) => "EMPTY_CANDIDATE_SET",
            SelectError::InvalidConfig(_) => "INVALID_SELECTION_CONFIG",
            SelectError::Tool(_) => "TOOL_FAILURE",
            SelectError::InsufficientSets { .. } => "INSUFFICIENT_CANDIDATE_SETS",
        }
    }
}

/// Similarity length scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Fixed(f64),
    /// `max(relative * |t_score|, floor)`
    Relative {
        relative: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
}

fn default_floor() -> f64 {
    1e-6
}

impl Sigma {
    pub fn at(&self, t_score: f64) -> f64 {
        match *self {
            Sigma::Fixed(s) => s,
            Sigma::Relative { relative, floor } => (relative * t_score.abs()).max(floor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default = "d_threshold")]
    pub conf_threshold: f64,
    #[serde(default = "d_interval")]
    pub validation_interval: u64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_sigma")]
    pub sigma: Sigma,
}

fn d_threshold() -> f64 {
    0.7
}
fn d_interval() -> u64 {
    5
}
fn d_alpha() -> f64 {
    0.3
}
fn d_sigma() -> Sigma {
    Sigma::Relative { relative: 0.2, floor: default_floor() }
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { conf_threshold: d_threshold(), validation_interval: d_interval(), alpha: d_alpha(), sigma: d_sigma() }
    }
}

impl SelectionConfig {
    pub fn check(&self) -> Result<(), SelectError> {
        let bad = |m: &str| Err(SelectError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return bad("conf_threshold must lie in [0, 1]");
        }
        if self.validation_interval == 0 {
            return bad("validation_interval must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        let sigma_ok = match self.sigma {
            Sigma::Fixed(s) => s > 0.0 && s.is_finite(),
            Sigma::Relative { relative, floor } => relative > 0.0 && floor > 0.0 && relative.is_finite(),
        };
        if !sigma_ok {
            return bad("sigma must be positive");
        }
        Ok(())
    }

    /// Whether `iteration` (already incremented) runs the tool.
    pub fn tool_mode(&self, conf: f64, iteration: u64) -> bool {
        conf < self.conf_threshold || iteration % self.validation_interval == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Tool,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub final_choice: String,
    /// Confidence after this step.
    pub conf: f64,
    pub mode: Mode,
    pub l_choice: String,
    pub l_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_choice: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_feasible: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub conf: f64,
    pub iteration: u64,
    pub trace: Vec<TraceRecord>,
}

impl SelectionState {
    /// Rebuilds the state a run had after producing `trace`.
    pub fn from_trace(trace: Vec<TraceRecord>) -> Self {
        let (conf, iteration) = trace.last().map(|r| (r.conf, r.iteration)).unwrap_or((0.0, 0));
        SelectionState { conf, iteration, trace }
    }
}

/// Tool-side outcome of one tool-mode step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolVerdict {
    pub choice: String,
    pub score: f64,
    pub feasible: bool,
    /// Per-candidate reports, when the tool produces them.
    pub reports: Vec<EvalReport>,
}

pub trait Tool<C> {
    fn evaluate_and_select(&mut self, designs: &[C]) -> Result<ToolVerdict, SelectError>;
}

pub trait Judge<C> {
    /// `(choice, score estimate)` in the tool's score units.
    fn select(&mut self, designs: &[C]) -> (String, f64);
    /// Learns from a tool-mode step. Never fails.
    fn update(&mut self, designs: &[C], verdict: &ToolVerdict);
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub record: TraceRecord,
    pub verdict: Option<ToolVerdict>,
}

pub fn select_step<C, T: Tool<C>, J: Judge<C>>(
    designs: &[C],
    state: &mut SelectionState,
    cfg: &SelectionConfig,
    tool: &mut T,
    judge: &mut J,
) -> Result<StepResult, SelectError> {
    if designs.is_empty() {
        return Err(SelectError::EmptyCandidateSet(state.iteration + 1));
    }
    let iteration = state.iteration + 1;
    let tool_mode = cfg.tool_mode(state.conf, iteration);
    let verdict = if tool_mode { Some(tool.evaluate_and_select(designs)?) } else { None };
    let (l_choice, l_score) = judge.select(designs);
    state.iteration = iteration;

    let record = match &verdict {
        Some(v) => {
            let sigma = cfg.sigma.at(v.score);
            let similarity = (-(l_score - v.score).abs() / sigma).exp();
            state.conf = cfg.alpha * similarity + (1.0 - cfg.alpha) * state.conf;
            judge.update(designs, v);
            TraceRecord {
                iteration,
                final_choice: v.choice.clone(),
                conf: state.conf,
                mode: Mode::Tool,
                l_choice,
                l_score,
                t_choice: Some(v.choice.clone()),
                t_score: Some(v.score),
                t_feasible: Some(v.feasible),
                sigma: Some(sigma),
                similarity: Some(similarity),
            }
        }
        None => TraceRecord {
            iteration,
            final_choice: l_choice.clone(),
            conf: state.conf,
            mode: Mode::Llm,
            l_choice,
            l_score,
            t_choice: None,
            t_score: None,
            t_feasible: None,
            sigma: None,
            similarity: None,
        },
    };
    state.trace.push(record.clone());
    Ok(StepResult { record, verdict })
}

/// Runs `num_iterations` steps. A single candidate set is reused for every
/// step; otherwise set `i` feeds step `i`.
pub fn run_selection<C, T: Tool<C>, J: Judge<C>>(
    sets: &[Vec<C>],
    cfg: &SelectionConfig,
    tool: &mut T,
    judge: &mut J,
    num_iterations: u64,
) -> Result<Vec<TraceRecord>, SelectError> {
    cfg.check()?;
    if sets.len() != 1 && (sets.len() as u64) < num_iterations {
        return Err(SelectError::InsufficientSets { got: sets.len(), want: num_iterations });
    }
    let mut state = SelectionState::default();
    for i in 0..num_iterations as usize {
        let set = if sets.len() == 1 { &sets[0] } else { &sets[i] };
        select_step(set, &mut state, cfg, tool, judge)?;
    }
    Ok(state.trace)
}

/// One scripted iteration: what the judge and the tool would answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    #[serde(default = "d_choice")]
    pub l_choice: String,
    pub l_score: f64,
    #[serde(default = "d_choice")]
    pub t_choice: String,
    pub t_score: f64,
    #[serde(default = "d_true")]
    pub t_feasible: bool,
}

fn d_choice() -> String {
    "a".to_string()
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionScript {
    #[serde(default)]
    pub config: SelectionConfig,
    pub steps: Vec<ScriptStep>,
}

/// Replays fixed answers; the "candidate set" of each step is its script row.
#[derive(Debug, Default)]
pub struct Scripted {
    pub tool_calls: u64,
    pub updates: u64,
}

impl Tool<ScriptStep> for Scripted {
    fn evaluate_and_select(&mut self, designs: &[ScriptStep]) -> Result<ToolVerdict, SelectError> {
        self.tool_calls += 1;
        let s = &designs[0];
        Ok(ToolVerdict { choice: s.t_choice.clone(), score: s.t_score, feasible: s.t_feasible, reports: vec![] })
    }
}

impl Judge<ScriptStep> for Scripted {
    fn select(&mut self, designs: &[ScriptStep]) -> (String, f64) {
        (designs[0].l_choice.clone(), designs[0].l_score)
    }

    fn update(&mut self, _: &[ScriptStep], _: &ToolVerdict) {
        self.updates += 1;
    }
}

pub fn run_script(script: &SelectionScript) -> Result<Vec<TraceRecord>, SelectError> {
    if script.steps.is_empty() {
        return Err(SelectError::InsufficientSets { got: 0, want: 1 });
    }
    let sets: Vec<Vec<ScriptStep>> = script.steps.iter().map(|s| vec![s.clone()]).collect();
    let mut tool = Scripted::default();
    let mut judge = Scripted::default();
    run_selection(&sets, &script.config, &mut tool, &mut judge, sets.len() as u64)
}

/// One JSON object per line.
pub fn trace_to_jsonl(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(l: f64, t: f64) -> ScriptStep {
        ScriptStep { l_choice: "a".into(), l_score: l, t_choice: "a".into(), t_score: t, t_feasible: true }
    }

    fn cfg(threshold: f64, interval: u64, alpha: f64, sigma: f64) -> SelectionConfig {
        SelectionConfig { conf_threshold: threshold, validation_interval: interval, alpha, sigma: Sigma::Fixed(sigma) }
    }

    #[test]
    fn ema_from_agreement() {
        let c = cfg(1.0, 5, 0.3, 1.0);
        let mut st = SelectionState { conf: 0.5, iteration: 0, trace: vec![] };
        let mut s = Scripted::default();
        let mut j = Scripted::default();
        select_step(&[step(2.0, 2.0)], &mut st, &c, &mut s, &mut j).unwrap();
        assert!((st.conf - 0.65).abs() < 1e-12);
        let r = select_step(&[step(4.0, 2.0)], &mut st, &c, &mut s, &mut j).unwrap().record;
        assert!((r.similarity.unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        assert!((st.conf - 0.49560058).abs() < 1e-8);
    }

    #[test]
    fn confident_judge_skips_tool() {
        let c = cfg(0.8, 5, 0.3, 1.0);
        let mut st = SelectionState { conf: 0.9, iteration: 6, trace: vec![] };
        let mut s = Scripted::default();
        let mut j = Scripted::default();
        let r = select_step(&[step(1.0, 9.0)], &mut st, &c, &mut s, &mut j).unwrap().record;
        assert_eq!((r.iteration, r.mode, r.conf), (7, Mode::Llm, 0.9));
        assert_eq!(s.tool_calls, 0);
    }

    #[test]
    fn tool_choice_wins_in_tool_mode() {
        let c = cfg(1.0, 5, 0.3, 1.0);
        let mut st = SelectionState::default();
        let row = ScriptStep { l_choice: "x".into(), l_score: 1.0, t_choice: "y".into(), t_score: 1.0, t_feasible: true };
        let r = select_step(&[row], &mut st, &c, &mut Scripted::default(), &mut Scripted::default()).unwrap();
        assert_eq!(r.record.final_choice, "y");
    }

    #[test]
    fn empty_set_leaves_state_alone() {
        let mut st = SelectionState::default();
        let e = select_step::<ScriptStep, _, _>(&[], &mut st, &SelectionConfig::default(), &mut Scripted::default(), &mut Scripted::default());
        assert_eq!(e.unwrap_err().code(), "EMPTY_CANDIDATE_SET");
        assert_eq!(st.iteration, 0);
    }

    #[test]
    fn sigma_forms_parse() {
        let c: SelectionConfig = serde_json::from_str(r#"{"sigma": 1.0}"#).unwrap();
        assert_eq!(c.sigma, Sigma::Fixed(1.0));
        let c: SelectionConfig = serde_json::from_str(r#"{"sigma": {"relative": 0.5}}"#).unwrap();
        assert_eq!(c.sigma.at(-4.0), 2.0);
        assert_eq!(SelectionConfig::default().sigma.at(0.0), 1e-6);
    }
}
