//! The JSONL result store. Every line is one kind-tagged record; a run
//! writes them in canonical job order so reruns are byte-identical.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dapr::DaprRound;
use crate::data::Tier;
use crate::hdkp::{BeliefState, IterationRecord, SessionStatus};
use crate::metrics::{CostEntry, TrialResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub tier: Tier,
    pub features: usize,
    pub objectives: usize,
    pub rows: usize,
}

/// Provenance header: everything a report needs besides the trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub master_seed: u64,
    pub trials: usize,
    pub n: usize,
    pub methods: Vec<String>,
    pub datasets: Vec<DatasetInfo>,
    pub provider: String,
    pub model: Option<String>,
    pub base_url: Option<String>,
    /// The resolved experiment configuration, echoed verbatim.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub method: String,
    pub dataset: String,
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub dataset: String,
    pub t: usize,
    pub rounds: usize,
    pub excluded: bool,
    pub status: SessionStatus,
    pub belief: BeliefState,
    pub history: Vec<IterationRecord>,
}

impl SessionRecord {
    /// Best candidate distance of the first iteration that produced any.
    pub fn initial_min_chebyshev(&self) -> Option<f64> {
        self.history.iter().find(|r| !r.candidates.is_empty()).map(|r| r.min_chebyshev)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaprTraceRecord {
    pub dataset: String,
    pub trial: usize,
    pub round: DaprRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoreRecord {
    Meta(RunMeta),
    Trial(TrialResult),
    Cost(CostEntry),
    Error(ErrorRecord),
    Session(SessionRecord),
    DaprTrace(DaprTraceRecord),
}

impl StoreRecord {
    pub fn kind(&self) -> &'static str {
        match self {
            StoreRecord::Meta(_) => "meta",
            StoreRecord::Trial(_) => "trial",
            StoreRecord::Cost(_) => "cost",
            StoreRecord::Error(_) => "error",
            StoreRecord::Session(_) => "session",
            StoreRecord::DaprTrace(_) => "dapr_trace",
        }
    }
}

pub fn write_record(out: &mut impl Write, record: &StoreRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Parse { path: String, line: usize, source: serde_json::Error },
}

pub fn read_store(path: impl AsRef<Path>) -> Result<Vec<StoreRecord>, StoreError> {
    let path = path.as_ref();
    let io = |source| StoreError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| StoreError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}
