//! CGRA fabric design space: functional-unit kinds, interconnect topologies,
//! fabric/software parameters and the architecture file format.
//!
//! Tiles are homogeneous: every tile carries the same set of functional units.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

pub const MAX_GRID_DIM: u32 = 16;
pub const MAX_UNROLL: u32 = 8;
pub const MAX_VECTORIZE: u32 = 4;

/// Operation kinds a tile functional unit can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FuKind {
    Add,
    Sub,
    Mul,
    Mac,
    Div,
    Shift,
    Logic,
    Cmp,
    Phi,
    Load,
    Store,
    Ret,
}

impl FuKind {
    pub const ALL: [FuKind; 12] = [
        FuKind::Add,
        FuKind::Sub,
        FuKind::Mul,
        FuKind::Mac,
        FuKind::Div,
        FuKind::Shift,
        FuKind::Logic,
        FuKind::Cmp,
        FuKind::Phi,
        FuKind::Load,
        FuKind::Store,
        FuKind::Ret,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FuKind::Add => "ADD",
            FuKind::Sub => "SUB",
            FuKind::Mul => "MUL",
            FuKind::Mac => "MAC",
            FuKind::Div => "DIV",
            FuKind::Shift => "SHIFT",
            FuKind::Logic => "LOGIC",
            FuKind::Cmp => "CMP",
            FuKind::Phi => "PHI",
            FuKind::Load => "LOAD",
            FuKind::Store => "STORE",
            FuKind::Ret => "RET",
        }
    }
}

impl fmt::Display for FuKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {what} token `{token}`")]
pub struct UnknownToken {
    pub what: &'static str,
    pub token: String,
}

impl FromStr for FuKind {
    type Err = UnknownToken;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FuKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownToken { what: "FU kind", token: s.to_string() })
    }
}

/// Tile interconnect pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Topology {
    Mesh,
    KingMesh,
    Crossbar,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Topology::Mesh, Topology::KingMesh, Topology::Crossbar];

    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Mesh => "MESH",
            Topology::KingMesh => "KINGMESH",
            Topology::Crossbar => "CROSSBAR",
        }
    }

    /// Next richer interconnect, `None` past CROSSBAR.
    pub fn step_up(self) -> Option<Topology> {
        match self {
            Topology::Mesh => Some(Topology::KingMesh),
            Topology::KingMesh => Some(Topology::Crossbar),
            Topology::Crossbar => None,
        }
    }

    pub fn step_down(self) -> Option<Topology> {
        match self {
            Topology::Mesh => None,
            Topology::KingMesh => Some(Topology::Mesh),
            Topology::Crossbar => Some(Topology::KingMesh),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Topology {
    type Err = UnknownToken;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topology::ALL
            .iter()
            .copied()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownToken { what: "topology", token: s.to_string() })
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(FuKind);
string_serde!(Topology);

/// Tile position, serialized as `[row, col]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Coord {
    pub row: u32,
    pub col: u32,
}

impl Coord {
    pub fn new(row: u32, col: u32) -> Self {
        Coord { row, col }
    }
}

impl From<[u32; 2]> for Coord {
    fn from(v: [u32; 2]) -> Self {
        Coord::new(v[0], v[1])
    }
}

impl From<Coord> for [u32; 2] {
    fn from(c: Coord) -> Self {
        [c.row, c.col]
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FabricSpec {
    pub rows: u32,
    pub cols: u32,
    pub fu_kinds: BTreeSet<FuKind>,
    /// Configuration contexts per tile.
    pub config_mem_depth: u32,
    /// Local data memory per tile, KiB.
    pub data_mem_kb: u32,
    pub topology: Topology,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("OUT_OF_GRID: {coord} outside {rows}x{cols} fabric")]
pub struct OutOfGrid {
    pub coord: Coord,
    pub rows: u32,
    pub cols: u32,
}

impl FabricSpec {
    pub fn tile_count(&self) -> u32 {
        self.rows * self.cols
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.row < self.rows && c.col < self.cols
    }

    /// All tiles in row-major order.
    pub fn tiles(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| Coord::new(r, c)))
    }

    pub fn supports(&self, kind: FuKind) -> bool {
        self.fu_kinds.contains(&kind)
    }

    /// Adjacency of `tile` under the fabric topology.
    pub fn neighbors(&self, tile: Coord) -> Result<BTreeSet<Coord>, OutOfGrid> {
        if !self.contains(tile) {
            return Err(OutOfGrid { coord: tile, rows: self.rows, cols: self.cols });
        }
        let mut out = BTreeSet::new();
        match self.topology {
            Topology::Crossbar => {
                out.extend(self.tiles().filter(|&t| t != tile));
            }
            Topology::Mesh | Topology::KingMesh => {
                let diag = self.topology == Topology::KingMesh;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        if (dr == 0 && dc == 0) || (!diag && dr != 0 && dc != 0) {
                            continue;
                        }
                        let r = tile.row as i64 + dr;
                        let c = tile.col as i64 + dc;
                        if r >= 0 && c >= 0 && (r as u32) < self.rows && (c as u32) < self.cols {
                            out.insert(Coord::new(r as u32, c as u32));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Breadth-first shortest path from `from` to `to` inclusive of both ends.
    /// Neighbors are expanded in coordinate order, so ties resolve to the
    /// lexicographically smallest predecessor.
    pub fn route(&self, from: Coord, to: Coord) -> Result<Vec<Coord>, OutOfGrid> {
        if !self.contains(to) {
            return Err(OutOfGrid { coord: to, rows: self.rows, cols: self.cols });
        }
        if from == to {
            self.neighbors(from)?;
            return Ok(vec![from]);
        }
        let mut parent: BTreeMap<Coord, Coord> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        parent.insert(from, from);
        while let Some(cur) = queue.pop_front() {
            for n in self.neighbors(cur)? {
                if parent.contains_key(&n) {
                    continue;
                }
                parent.insert(n, cur);
                if n == to {
                    let mut path = vec![to];
                    let mut at = to;
                    while at != from {
                        at = parent[&at];
                        path.push(at);
                    }
                    path.reverse();
                    return Ok(path);
                }
                queue.push_back(n);
            }
        }
        unreachable!("fabric grids are connected under every topology")
    }

    /// Hop count of the shortest route; closed form of `route(..).len() - 1`.
    pub fn hops(&self, a: Coord, b: Coord) -> u32 {
        if a == b {
            return 0;
        }
        let dr = a.row.abs_diff(b.row);
        let dc = a.col.abs_diff(b.col);
        match self.topology {
            Topology::Mesh => dr + dc,
            Topology::KingMesh => dr.max(dc),
            Topology::Crossbar => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SwParams {
    pub unroll_factor: u32,
    pub vectorize_factor: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    #[default]
    Proposed,
    Repaired,
}

/// One joint hardware/software candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub id: String,
    pub fabric: FabricSpec,
    pub sw: SwParams,
    pub provenance: Provenance,
    #[serde(default)]
    pub note: String,
}

impl DesignPoint {
    /// Identity-free key of the design's parameters.
    pub fn signature(&self) -> String {
        let f = &self.fabric;
        let kinds: Vec<&str> = f.fu_kinds.iter().map(|k| k.as_str()).collect();
        format!(
            "{}x{}|{}|{}|{}|{}|u{}|v{}",
            f.rows,
            f.cols,
            kinds.join(","),
            f.config_mem_depth,
            f.data_mem_kb,
            f.topology,
            self.sw.unroll_factor,
            self.sw.vectorize_factor
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    RowsRange,
    ColsRange,
    FuKindsEmpty,
    ConfigDepthRange,
    MissingLoadstore,
    UnrollRange,
    VectorizeRange,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::RowsRange => "ROWS_RANGE",
            ViolationCode::ColsRange => "COLS_RANGE",
            ViolationCode::FuKindsEmpty => "FU_KINDS_EMPTY",
            ViolationCode::ConfigDepthRange => "CONFIG_DEPTH_RANGE",
            ViolationCode::MissingLoadstore => "MISSING_LOADSTORE",
            ViolationCode::UnrollRange => "UNROLL_RANGE",
            ViolationCode::VectorizeRange => "VECTORIZE_RANGE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralViolation {
    pub code: ViolationCode,
    pub field: String,
    pub message: String,
}

/// Every violated invariant of `d`, sorted by field name.
pub fn validate_design(d: &DesignPoint) -> Vec<StructuralViolation> {
    let f = &d.fabric;
    let mut out = Vec::new();
    let mut push = |code, field: &str, message: String| {
        out.push(StructuralViolation { code, field: field.to_string(), message })
    };
    if !(1..=MAX_GRID_DIM).contains(&f.rows) {
        push(ViolationCode::RowsRange, "rows", format!("rows = {} outside [1, {MAX_GRID_DIM}]", f.rows));
    }
    if !(1..=MAX_GRID_DIM).contains(&f.cols) {
        push(ViolationCode::ColsRange, "cols", format!("cols = {} outside [1, {MAX_GRID_DIM}]", f.cols));
    }
    if f.fu_kinds.is_empty() {
        push(ViolationCode::FuKindsEmpty, "fu_kinds", "no functional unit kinds".to_string());
    }
    if f.config_mem_depth < 1 {
        push(ViolationCode::ConfigDepthRange, "config_mem_depth", "config_mem_depth must be >= 1".to_string());
    }
    if f.data_mem_kb > 0 && !(f.supports(FuKind::Load) && f.supports(FuKind::Store)) {
        push(
            ViolationCode::MissingLoadstore,
            "data_mem_kb",
            format!("data_mem_kb = {} but tiles lack LOAD and STORE", f.data_mem_kb),
        );
    }
    if !(1..=MAX_UNROLL).contains(&d.sw.unroll_factor) {
        push(
            ViolationCode::UnrollRange,
            "unroll_factor",
            format!("unroll_factor = {} outside [1, {MAX_UNROLL}]", d.sw.unroll_factor),
        );
    }
    if !(1..=MAX_VECTORIZE).contains(&d.sw.vectorize_factor) {
        push(
            ViolationCode::VectorizeRange,
            "vectorize_factor",
            format!("vectorize_factor = {} outside [1, {MAX_VECTORIZE}]", d.sw.vectorize_factor),
        );
    }
    out.sort_by(|a, b| a.field.cmp(&b.field).then(a.code.cmp(&b.code)));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("SYNTAX_ERROR at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("UNKNOWN_FIELD: `{0}`")]
    UnknownField(String),
    #[error("MISSING_FIELD: `{0}`")]
    MissingField(String),
    #[error("INVALID_VALUE for `{field}`: {message}")]
    InvalidValue { field: String, message: String },
    #[error("UNKNOWN_ENUM for `{field}`: {source}")]
    UnknownEnum { field: String, source: UnknownToken },
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::Syntax { .. } => "SYNTAX_ERROR",
            ParseError::UnknownField(_) => "UNKNOWN_FIELD",
            ParseError::MissingField(_) => "MISSING_FIELD",
            ParseError::InvalidValue { .. } => "INVALID_VALUE",
            ParseError::UnknownEnum { .. } => "UNKNOWN_ENUM",
        }
    }

    pub(crate) fn from_json(e: serde_json::Error) -> Self {
        ParseError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

const DESIGN_KEYS: [&str; 11] = [
    "cols",
    "config_mem_depth",
    "data_mem_kb",
    "fu_kinds",
    "id",
    "note",
    "provenance",
    "rows",
    "topology",
    "unroll_factor",
    "vectorize_factor",
];

pub const DEFAULT_DESIGN_ID: &str = "design";

fn get_u32(obj: &serde_json::Map<String, Value>, key: &str, default: Option<u32>) -> Result<u32, ParseError> {
    match obj.get(key) {
        None => default.ok_or_else(|| ParseError::MissingField(key.to_string())),
        Some(v) => v
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .ok_or_else(|| ParseError::InvalidValue {
                field: key.to_string(),
                message: format!("expected non-negative integer, got {v}"),
            }),
    }
}

fn get_str<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<Option<&'a str>, ParseError> {
    match obj.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(v) => Err(ParseError::InvalidValue { field: key.to_string(), message: format!("expected string, got {v}") }),
    }
}

/// Parses an architecture file. Field ranges are not checked here; see
/// [`validate_design`].
pub fn parse_design(text: &str) -> Result<DesignPoint, ParseError> {
    let value: Value = serde_json::from_str(text).map_err(ParseError::from_json)?;
    let obj = value.as_object().ok_or_else(|| ParseError::InvalidValue {
        field: "<root>".to_string(),
        message: "architecture file must be a JSON object".to_string(),
    })?;
    if let Some(k) = obj.keys().find(|k| !DESIGN_KEYS.contains(&k.as_str())) {
        return Err(ParseError::UnknownField(k.clone()));
    }

    let kinds_raw = obj.get("fu_kinds").ok_or_else(|| ParseError::MissingField("fu_kinds".to_string()))?;
    let kinds_arr = kinds_raw.as_array().ok_or_else(|| ParseError::InvalidValue {
        field: "fu_kinds".to_string(),
        message: "expected array of strings".to_string(),
    })?;
    let mut fu_kinds = BTreeSet::new();
    for k in kinds_arr {
        let s = k.as_str().ok_or_else(|| ParseError::InvalidValue {
            field: "fu_kinds".to_string(),
            message: format!("expected string, got {k}"),
        })?;
        let kind = s
            .parse::<FuKind>()
            .map_err(|source| ParseError::UnknownEnum { field: "fu_kinds".to_string(), source })?;
        fu_kinds.insert(kind);
    }

    let topo = get_str(obj, "topology")?.ok_or_else(|| ParseError::MissingField("topology".to_string()))?;
    let topology = topo
        .parse::<Topology>()
        .map_err(|source| ParseError::UnknownEnum { field: "topology".to_string(), source })?;

    let provenance = match get_str(obj, "provenance")? {
        None => Provenance::Proposed,
        Some(s) if s.eq_ignore_ascii_case("PROPOSED") => Provenance::Proposed,
        Some(s) if s.eq_ignore_ascii_case("REPAIRED") => Provenance::Repaired,
        Some(s) => {
            return Err(ParseError::UnknownEnum {
                field: "provenance".to_string(),
                source: UnknownToken { what: "provenance", token: s.to_string() },
            })
        }
    };

    Ok(DesignPoint {
        id: get_str(obj, "id")?.unwrap_or(DEFAULT_DESIGN_ID).to_string(),
        fabric: FabricSpec {
            rows: get_u32(obj, "rows", None)?,
            cols: get_u32(obj, "cols", None)?,
            fu_kinds,
            config_mem_depth: get_u32(obj, "config_mem_depth", None)?,
            data_mem_kb: get_u32(obj, "data_mem_kb", Some(0))?,
            topology,
        },
        sw: SwParams {
            unroll_factor: get_u32(obj, "unroll_factor", None)?,
            vectorize_factor: get_u32(obj, "vectorize_factor", None)?,
        },
        provenance,
        note: get_str(obj, "note")?.unwrap_or_default().to_string(),
    })
}

/// Canonical JSON value of a design (keys sorted, defaults elided).
pub fn design_to_value(d: &DesignPoint) -> Value {
    let f = &d.fabric;
    let mut v = json!({
        "rows": f.rows,
        "cols": f.cols,
        "fu_kinds": f.fu_kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
        "config_mem_depth": f.config_mem_depth,
        "data_mem_kb": f.data_mem_kb,
        "topology": f.topology.as_str(),
        "unroll_factor": d.sw.unroll_factor,
        "vectorize_factor": d.sw.vectorize_factor,
    });
    let obj = v.as_object_mut().expect("object literal");
    if d.id != DEFAULT_DESIGN_ID {
        obj.insert("id".to_string(), json!(d.id));
    }
    if d.provenance != Provenance::Proposed {
        obj.insert("provenance".to_string(), json!("REPAIRED"));
    }
    if !d.note.is_empty() {
        obj.insert("note".to_string(), json!(d.note));
    }
    v
}

/// Canonical architecture file text.
pub fn serialize_design(d: &DesignPoint) -> String {
    let mut s = serde_json::to_string_pretty(&design_to_value(d)).expect("JSON values always serialize");
    s.push('\n');
    s
}
