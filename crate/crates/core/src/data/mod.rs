//! Tabular optimization datasets: feature/objective specs, rows, partial
//! configurations and the nearest-neighbour labelling oracle.
//!
//! A dataset is an enumerated pool of configurations whose objective values
//! were measured ahead of time. Every strategy in this crate labels the
//! configurations it proposes by looking up the closest pool row, so the
//! pool is the only source of ground truth.

mod load;
mod ops;

pub use load::{load_dataset, load_manifest, parse_dataset, ManifestEntry};
pub use ops::{
    dimensional_tier, feature_metadata_summary, nearest_row, nearest_row_among, normalize_objective,
    project_rows, FeatureSummary, Neighbor,
};

pub(crate) use ops::median as ops_median;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing header row")]
    MissingHeader,
    #[error("no objective columns (a header ending in `+` or `-` is required)")]
    NoObjectiveColumns,
    #[error("no feature columns")]
    NoFeatureColumns,
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },
    #[error("column `{column}` must be numeric but row {row} holds `{value}`")]
    NonNumericInNumericColumn { column: String, row: usize, value: String },
    #[error("column `{0}` has no values")]
    EmptyColumn(String),
    #[error("dataset needs at least 2 rows, found {0}")]
    TooFewRows(usize),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature subset is empty")]
    EmptySubset,
    #[error("configuration assigns no features")]
    EmptyConfiguration,
    #[error("value for `{feature}` rejected: {reason}")]
    InadmissibleValue { feature: String, reason: String },
}

/// A single cell value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Sym(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Sym(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Sym(s) => Some(s),
            Value::Num(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => write!(f, "{x}"),
            Value::Sym(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Symbolic,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Numeric => "numeric",
            FeatureKind::Symbolic => "symbolic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureDomain {
    /// Observed range of a numeric column.
    Numeric { lo: f64, hi: f64 },
    /// Categories in order of first appearance.
    Symbolic { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub domain: FeatureDomain,
    /// Median for numeric columns, mode for symbolic ones.
    pub median_or_mode: Value,
}

impl FeatureSpec {
    pub fn kind(&self) -> FeatureKind {
        match self.domain {
            FeatureDomain::Numeric { .. } => FeatureKind::Numeric,
            FeatureDomain::Symbolic { .. } => FeatureKind::Symbolic,
        }
    }

    /// `(lo, hi)` for numeric features.
    pub fn range(&self) -> Option<(f64, f64)> {
        match self.domain {
            FeatureDomain::Numeric { lo, hi } => Some((lo, hi)),
            FeatureDomain::Symbolic { .. } => None,
        }
    }

    pub fn categories(&self) -> Option<&[String]> {
        match &self.domain {
            FeatureDomain::Symbolic { categories } => Some(categories),
            FeatureDomain::Numeric { .. } => None,
        }
    }

    /// Brings a proposed value into the feature's domain: numeric values are
    /// clamped, symbolic values must name a known category (exact match,
    /// falling back to a case-insensitive one). The flag reports a repair.
    pub fn admit(&self, value: &Value) -> Result<(Value, bool), DataError> {
        match (&self.domain, value) {
            (FeatureDomain::Numeric { lo, hi }, v) => {
                let x = match v {
                    Value::Num(x) => *x,
                    Value::Sym(s) => s.trim().parse::<f64>().map_err(|_| self.reject(format!("`{s}` is not numeric")))?,
                };
                if !x.is_finite() {
                    return Err(self.reject("non-finite number".into()));
                }
                let clamped = x.clamp(*lo, *hi);
                Ok((Value::Num(clamped), clamped != x))
            }
            (FeatureDomain::Symbolic { categories }, v) => {
                let text = match v {
                    Value::Sym(s) => s.clone(),
                    Value::Num(x) => x.to_string(),
                };
                if categories.iter().any(|c| *c == text) {
                    return Ok((Value::Sym(text), false));
                }
                let lowered = text.trim().to_lowercase();
                categories
                    .iter()
                    .find(|c| c.to_lowercase() == lowered)
                    .map(|c| (Value::Sym(c.clone()), true))
                    .ok_or_else(|| self.reject(format!("unknown category `{text}`")))
            }
        }
    }

    fn reject(&self, reason: String) -> DataError {
        DataError::InadmissibleValue { feature: self.name.clone(), reason }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub name: String,
    pub direction: Direction,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub features: Vec<Value>,
    pub objectives: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Low,
    Medium,
    High,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Low => "low",
            Tier::Medium => "medium",
            Tier::High => "high",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub features: Vec<FeatureSpec>,
    pub objectives: Vec<ObjectiveSpec>,
    pub rows: Vec<Row>,
    pub tier: Tier,
    /// Imputations and degenerate ranges noticed while loading.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn objective_names(&self) -> Vec<&str> {
        self.objectives.iter().map(|o| o.name.as_str()).collect()
    }

    /// Full configuration holding the features of row `idx`.
    pub fn row_config(&self, idx: usize) -> Configuration {
        let row = &self.rows[idx];
        Configuration {
            assignments: self
                .features
                .iter()
                .zip(&row.features)
                .map(|(spec, v)| (spec.name.clone(), v.clone()))
                .collect(),
        }
    }

    /// Writes the dataset back out in the same CSV convention it loads from.
    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            let mut header: Vec<String> = self.features.iter().map(|f| f.name.clone()).collect();
            header.extend(self.objectives.iter().map(|o| {
                let suffix = match o.direction {
                    Direction::Minimize => '-',
                    Direction::Maximize => '+',
                };
                format!("{}{}", o.name, suffix)
            }));
            w.write_record(&header).expect("in-memory write");
            for row in &self.rows {
                let mut rec: Vec<String> = row.features.iter().map(|v| v.to_string()).collect();
                rec.extend(row.objectives.iter().map(|x| x.to_string()));
                w.write_record(&rec).expect("in-memory write");
            }
            w.flush().expect("in-memory flush");
        }
        String::from_utf8(out).expect("csv output is utf-8")
    }
}

/// A possibly partial assignment of values to features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub assignments: BTreeMap<String, Value>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.assignments.get(name)
    }

    /// Assigns `value` after admission against the dataset's feature spec.
    /// Returns whether the value had to be repaired (clamped or re-cased).
    pub fn assign(&mut self, dataset: &Dataset, name: &str, value: &Value) -> Result<bool, DataError> {
        let spec = dataset.feature(name).ok_or_else(|| DataError::UnknownFeature(name.to_string()))?;
        let (admitted, repaired) = spec.admit(value)?;
        self.assignments.insert(spec.name.clone(), admitted);
        Ok(repaired)
    }

    /// Whether every dataset feature is assigned.
    pub fn is_complete(&self, dataset: &Dataset) -> bool {
        dataset.features.iter().all(|f| self.assignments.contains_key(&f.name))
    }

    /// Renders the assignment as a JSON object in dataset feature order.
    pub fn to_json_ordered(&self, dataset: &Dataset) -> String {
        let parts: Vec<String> = dataset
            .features
            .iter()
            .filter_map(|f| {
                self.assignments.get(&f.name).map(|v| {
                    format!("{}: {}", serde_json::to_string(&f.name).unwrap(), serde_json::to_string(v).unwrap())
                })
            })
            .collect();
        format!("{{{}}}", parts.join(", "))
    }
}
