//! History log: one JSON object per line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::{EntryOutcome, HistoryEntry, Lesson, Stage2Error};
use crate::arch::DesignPoint;
use crate::costs::EvalReport;
use crate::select::{Mode, TraceRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub schema_version: u32,
    pub seq: u64,
    pub iteration: u64,
    #[serde(flatten)]
    pub event: Event,
    /// Wall-clock data. Not part of the replayable content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RunStart {
        config: Value,
    },
    Proposal {
        design: DesignPoint,
        from_llm: bool,
    },
    /// Stage 2 failure before repair.
    Violation {
        design_id: String,
        error: Stage2Error,
    },
    Fix {
        design_id: String,
        repaired: bool,
        rounds: u32,
        design: DesignPoint,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<Stage2Error>,
    },
    MapResult {
        design_id: String,
        ii: u32,
        schedule_len: u32,
        repaired: bool,
    },
    Coarse {
        survivors: Vec<String>,
    },
    Selection {
        record: TraceRecord,
    },
    Lesson {
        lesson: Lesson,
    },
    Eval {
        design_id: String,
        ii: u32,
        report: EvalReport,
    },
    IterationEnd {
        summary: IterationSummary,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IterationStatus {
    Ok,
    IterationEmpty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: u64,
    pub status: IterationStatus,
    pub proposed: usize,
    pub mapped_pre: usize,
    pub mapped_post: usize,
    pub sr1: f64,
    pub sr2: f64,
    pub survivors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_choice: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Best feasible score over the whole history so far.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_power_efficiency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_id: Option<String>,
}

pub fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("IO_ERROR: {0}")]
    Io(String),
    #[error("MALFORMED_HISTORY: line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("SCHEMA_MISMATCH: line {line} has schema_version {found}, expected {SCHEMA_VERSION}")]
    Schema { line: usize, found: u64 },
    #[error("EMPTY_HISTORY: no events")]
    Empty,
}

impl LogError {
    pub fn code(&self) -> &'static str {
        match self {
            LogError::Io(_) => "IO_ERROR",
            LogError::Malformed { .. } => "MALFORMED_HISTORY",
            LogError::Schema { .. } => "SCHEMA_MISMATCH",
            LogError::Empty => "EMPTY_HISTORY",
        }
    }
}

/// Parses a history log, keeping each record's original line.
pub fn read_log(path: &Path) -> Result<Vec<(EventRecord, String)>, LogError> {
    let text = fs::read_to_string(path).map_err(|e| LogError::Io(format!("{}: {e}", path.display())))?;
    parse_log(&text)
}

pub fn parse_log(text: &str) -> Result<Vec<(EventRecord, String)>, LogError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: Value =
            serde_json::from_str(line).map_err(|e| LogError::Malformed { line: i + 1, detail: e.to_string() })?;
        match raw.get("schema_version").and_then(Value::as_u64) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(LogError::Schema { line: i + 1, found: v }),
            None => return Err(LogError::Malformed { line: i + 1, detail: "missing schema_version".into() }),
        }
        let rec: EventRecord =
            serde_json::from_value(raw).map_err(|e| LogError::Malformed { line: i + 1, detail: e.to_string() })?;
        out.push((rec, line.to_string()));
    }
    Ok(out)
}

/// Drops trailing events of an iteration that never reached `iteration_end`.
pub fn complete_prefix(records: &[(EventRecord, String)]) -> usize {
    let mut keep = 0;
    for (i, (r, _)) in records.iter().enumerate() {
        match r.event {
            Event::RunStart { .. } if i == 0 => keep = 1,
            Event::IterationEnd { .. } => keep = i + 1,
            _ => {}
        }
    }
    keep
}

/// History entries of one iteration rebuilt from its events.
pub fn entries_of(events: &[&EventRecord]) -> Vec<HistoryEntry> {
    let mut designs: BTreeMap<String, DesignPoint> = BTreeMap::new();
    let mut outcomes: BTreeMap<String, EntryOutcome> = BTreeMap::new();
    let mut iteration = 0;
    for r in events {
        iteration = r.iteration;
        match &r.event {
            Event::Proposal { design, .. } => {
                designs.insert(design.id.clone(), design.clone());
            }
            Event::Fix { design_id, design, error, .. } => {
                designs.insert(design_id.clone(), design.clone());
                if let Some(e) = error {
                    outcomes.insert(design_id.clone(), EntryOutcome::Failed { code: e.code(), detail: e.to_string() });
                }
            }
            Event::Eval { design_id, ii, report } => {
                outcomes.insert(design_id.clone(), EntryOutcome::Evaluated { ii: *ii, report: report.clone() });
            }
            _ => {}
        }
    }
    designs
        .into_iter()
        .filter_map(|(id, design)| outcomes.remove(&id).map(|outcome| HistoryEntry { iteration, design, outcome }))
        .collect()
}

/// `(proposed, mapped before repair, mapped after repair)` per iteration,
/// counted from the raw events.
pub fn recount(records: &[EventRecord]) -> BTreeMap<u64, (usize, usize, usize)> {
    let mut out: BTreeMap<u64, (usize, usize, usize)> = BTreeMap::new();
    for r in records {
        let c = match &r.event {
            Event::Proposal { .. } | Event::Violation { .. } | Event::Fix { .. } => out.entry(r.iteration).or_default(),
            _ => continue,
        };
        match &r.event {
            Event::Proposal { .. } => {
                c.0 += 1;
                c.1 += 1;
                c.2 += 1;
            }
            Event::Violation { .. } => {
                c.1 -= 1;
                c.2 -= 1;
            }
            Event::Fix { repaired: true, .. } => c.2 += 1,
            _ => {}
        }
    }
    out
}
