//! Case files: the JSON case format, the MATPOWER importer and the bundled
//! test networks.
//!
//! A JSON case looks like
//!
//! ```json
//! {
//!   "schema": 1,
//!   "name": "two-bus",
//!   "base_mva": 100.0,
//!   "units": "pu",
//!   "buses": [
//!     { "id": 1, "generation": 1.0, "gen_max": 2.0 },
//!     { "id": 2, "demand": 1.0 }
//!   ],
//!   "lines": [ { "from": 1, "to": 2, "susceptance": 1.0, "limit": 2.0 } ]
//! }
//! ```
//!
//! With `"units": "mw"` the power fields (demand, generation, generator
//! bounds, line limits) are given in MW and divided by `base_mva` on load.
//! Omitted dynamics fields take the network defaults and are listed in
//! [`LoadedCase::defaulted`].

mod fixtures;
mod matpower;

pub use fixtures::{bundled, bundled_names, ieee39, IEEE39_AREA_B};
pub use matpower::{import_matpower, import_matpower_str, UNLIMITED_RATING};

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::network::{
    Bus, GridCase, Line, NetworkError, DEFAULT_ALPHA, DEFAULT_DAMPING, DEFAULT_INERTIA,
    DEFAULT_LOAD_GAIN_RATIO,
};
use crate::partition::{Partition, PartitionFile};

pub const SCHEMA_VERSION: u32 = 1;

/// JSON schema of the case format, shipped with the crate.
pub const CASE_SCHEMA: &str = include_str!("../../fixtures/case.schema.json");

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("invalid value for {field}: {reason}")]
    Value { field: String, reason: String },
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unsupported case feature: {0}")]
    Unsupported(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How unknown fields are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Unknown fields are errors.
    Strict,
    /// Unknown fields are reported as warnings and ignored.
    #[default]
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Pu,
    Mw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: u32,
    #[serde(default)]
    pub demand: f64,
    #[serde(default)]
    pub generation: f64,
    #[serde(default)]
    pub gen_min: f64,
    #[serde(default)]
    pub gen_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_load: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(default)]
    pub area: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub from: u32,
    pub to: u32,
    pub susceptance: f64,
    pub limit: f64,
    #[serde(default = "yes")]
    pub in_service: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDocument {
    pub schema: u32,
    pub name: String,
    pub base_mva: f64,
    #[serde(default)]
    pub units: Units,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionFile>,
    /// Free-form provenance and import notes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

const TOP_KEYS: &[&str] = &["schema", "name", "base_mva", "units", "buses", "lines", "partition", "notes"];
const BUS_KEYS: &[&str] = &[
    "id", "demand", "generation", "gen_min", "gen_max", "damping", "inertia", "alpha", "alpha_load", "cost", "area",
];
const LINE_KEYS: &[&str] = &["from", "to", "susceptance", "limit", "in_service"];
const PARTITION_KEYS: &[&str] = &["area_of", "switched_off"];

/// A parsed case with everything the document carried besides the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCase {
    pub grid: GridCase,
    pub partition: Option<Partition>,
    /// Fields filled from defaults, as `bus <id>: <field>` entries.
    pub defaulted: Vec<String>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

fn unknown_keys(value: &Value, path: &str, known: &[&str], out: &mut Vec<String>) {
    if let Value::Object(map) = value {
        for key in map.keys() {
            if !known.contains(&key.as_str()) {
                out.push(format!("{path}.{key}"));
            }
        }
    }
}

/// Parses and validates a JSON case document.
pub fn parse_case(bytes: &[u8], mode: ParseMode) -> Result<LoadedCase, CaseError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| CaseError::Parse {
        line: e.line(),
        reason: e.to_string(),
    })?;
    let mut unknown = Vec::new();
    unknown_keys(&value, "$", TOP_KEYS, &mut unknown);
    if let Some(Value::Array(buses)) = value.get("buses") {
        for (k, b) in buses.iter().enumerate() {
            unknown_keys(b, &format!("$.buses[{k}]"), BUS_KEYS, &mut unknown);
        }
    }
    if let Some(Value::Array(lines)) = value.get("lines") {
        for (k, l) in lines.iter().enumerate() {
            unknown_keys(l, &format!("$.lines[{k}]"), LINE_KEYS, &mut unknown);
        }
    }
    if let Some(p) = value.get("partition") {
        unknown_keys(p, "$.partition", PARTITION_KEYS, &mut unknown);
    }
    if mode == ParseMode::Strict {
        if let Some(path) = unknown.first() {
            return Err(CaseError::Schema {
                path: path.clone(),
                reason: "unknown field".into(),
            });
        }
    }
    let warnings: Vec<String> = unknown.iter().map(|p| format!("ignored unknown field {p}")).collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    let doc: CaseDocument = serde_json::from_value(value).map_err(|e| CaseError::Schema {
        path: "$".into(),
        reason: e.to_string(),
    })?;
    let mut loaded = doc.to_grid()?;
    loaded.warnings = warnings;
    Ok(loaded)
}

/// Reads a JSON case from disk.
pub fn load_case(path: &Path, mode: ParseMode) -> Result<LoadedCase, CaseError> {
    let bytes = std::fs::read(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case(&bytes, mode)
}

/// Loads `.json` cases with [`parse_case`] and `.m` files through the
/// MATPOWER importer.
pub fn load_any(path: &Path, mode: ParseMode) -> Result<LoadedCase, CaseError> {
    if path.extension().is_some_and(|e| e == "m") {
        let doc = import_matpower(path)?;
        let mut loaded = doc.to_grid()?;
        loaded.warnings.extend(doc.notes.iter().cloned());
        Ok(loaded)
    } else {
        load_case(path, mode)
    }
}

fn network_to_case_error(e: NetworkError) -> CaseError {
    match e {
        NetworkError::InvalidBus { bus, reason } => CaseError::Value {
            field: format!("bus {bus}"),
            reason,
        },
        NetworkError::InvalidLine { line, reason } => CaseError::Value {
            field: format!("lines[{line}]"),
            reason,
        },
        other => CaseError::Value {
            field: "case".into(),
            reason: other.to_string(),
        },
    }
}

impl CaseDocument {
    /// Per-unit document describing `grid`. Every field is written out.
    pub fn from_grid(grid: &GridCase) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            name: grid.name.clone(),
            base_mva: grid.base_mva,
            units: Units::Pu,
            buses: grid
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id,
                    demand: b.demand,
                    generation: b.generation,
                    gen_min: b.gen_min,
                    gen_max: b.gen_max,
                    damping: Some(b.damping),
                    inertia: Some(b.inertia),
                    alpha: Some(b.alpha),
                    alpha_load: Some(b.alpha_load),
                    cost: Some(b.cost),
                    area: b.area,
                })
                .collect(),
            lines: grid
                .lines
                .iter()
                .map(|l| LineRecord {
                    from: grid.buses[l.from].id,
                    to: grid.buses[l.to].id,
                    susceptance: l.susceptance,
                    limit: l.limit,
                    in_service: l.in_service,
                })
                .collect(),
            partition: None,
            notes: Vec::new(),
        }
    }

    pub fn with_partition(mut self, grid: &GridCase, partition: &Partition) -> Self {
        self.partition = Some(partition.to_file(grid));
        self
    }

    /// Validates the document and builds the grid.
    pub fn to_grid(&self) -> Result<LoadedCase, CaseError> {
        if self.schema != SCHEMA_VERSION {
            return Err(CaseError::Schema {
                path: "$.schema".into(),
                reason: format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema),
            });
        }
        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            return Err(CaseError::Value {
                field: "base_mva".into(),
                reason: "must be positive".into(),
            });
        }
        let scale = match self.units {
            Units::Pu => 1.0,
            Units::Mw => 1.0 / self.base_mva,
        };
        let mut defaulted = Vec::new();
        let mut take = |id: u32, field: &str, v: Option<f64>, default: f64| {
            v.unwrap_or_else(|| {
                defaulted.push(format!("bus {id}: {field}"));
                default
            })
        };
        let buses: Vec<Bus> = self
            .buses
            .iter()
            .map(|r| {
                let alpha = take(r.id, "alpha", r.alpha, DEFAULT_ALPHA);
                Bus {
                    id: r.id,
                    demand: r.demand * scale,
                    generation: r.generation * scale,
                    gen_min: r.gen_min * scale,
                    gen_max: r.gen_max * scale,
                    damping: take(r.id, "damping", r.damping, DEFAULT_DAMPING),
                    inertia: take(r.id, "inertia", r.inertia, DEFAULT_INERTIA),
                    alpha,
                    alpha_load: take(r.id, "alpha_load", r.alpha_load, DEFAULT_LOAD_GAIN_RATIO * alpha),
                    cost: r.cost.unwrap_or(1.0),
                    area: r.area,
                }
            })
            .collect();
        let index = |id: u32, k: usize, end: &str| {
            buses.iter().position(|b| b.id == id).ok_or_else(|| CaseError::Value {
                field: format!("lines[{k}].{end}"),
                reason: format!("unknown bus {id}"),
            })
        };
        let mut lines = Vec::with_capacity(self.lines.len());
        for (k, r) in self.lines.iter().enumerate() {
            lines.push(Line {
                from: index(r.from, k, "from")?,
                to: index(r.to, k, "to")?,
                susceptance: r.susceptance,
                limit: r.limit * scale,
                in_service: r.in_service,
            });
        }
        let grid = GridCase::new(self.name.clone(), self.base_mva, buses, lines).map_err(network_to_case_error)?;
        let partition = match &self.partition {
            Some(p) => Some(p.resolve(&grid).map_err(|e| CaseError::Value {
                field: "partition".into(),
                reason: e.to_string(),
            })?),
            None => None,
        };
        Ok(LoadedCase {
            grid,
            partition,
            defaulted,
            warnings: Vec::new(),
            notes: self.notes.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case documents always serialize")
    }
}

/// Pretty JSON for `grid`, optionally with a partition block.
pub fn serialize_case(grid: &GridCase, partition: Option<&Partition>) -> String {
    let mut doc = CaseDocument::from_grid(grid);
    if let Some(p) = partition {
        doc = doc.with_partition(grid, p);
    }
    doc.to_json()
}
