//! Hybrid scouting + retrieval: a short TPE run over the pool yields
//! empirical priors, a documentation index explains them, and one prompt
//! asks for configurations consistent with both.

mod priors;
mod rag;
mod tpe;

pub use priors::{extract_priors, EmpiricalPrior, PriorKind, CATEGORY_SHIFT};
pub use rag::{build_index, merge_hits, tokenize, window_offsets, Chunk, DocIndex, EmbeddingProvider, ScoredChunk, OVERLAP_WORDS, WINDOW_WORDS};
pub use tpe::{good_count, quantile_split, random_scout, tpe_scout, ScoutEval, ScoutResult, STARTUP_EVALUATIONS};

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amp::draw_scored_examples;
use crate::baselines::{render_examples, BaselineError};
use crate::data::{Configuration, DataError, Dataset};
use crate::llm::prompt::{format_block, metadata_block, objectives_line};
use crate::llm::{generate_configurations, Arity, ChatRequest, Gateway, LlmError, TemplateSet, GENERATION_TEMPERATURE};

pub const TAG_GENERATE: &str = "hkma.generate";
/// Words of each retrieved chunk quoted in the prompt.
pub const EXCERPT_WORDS: usize = 120;

#[derive(Debug, Error)]
pub enum HkmaError {
    #[error("invalid HKMA configuration: {0}")]
    InvalidConfig(String),
    #[error("pool has {available} rows but scouting needs {needed}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HkmaMode {
    ScoutOnly,
    RagOnly,
    Both,
}

impl HkmaMode {
    pub fn scouts(self) -> bool {
        self != HkmaMode::RagOnly
    }

    pub fn retrieves(self) -> bool {
        self != HkmaMode::ScoutOnly
    }
}

impl std::str::FromStr for HkmaMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "scout_only" | "scout" => Ok(Self::ScoutOnly),
            "rag_only" | "rag" => Ok(Self::RagOnly),
            "both" => Ok(Self::Both),
            _ => Err(format!("unknown HKMA mode `{s}` (scout_only, rag_only, both)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HkmaConfig {
    pub b_scout: usize,
    pub gamma: f64,
    pub top_k: usize,
    pub mode: HkmaMode,
    /// Candidates drawn from the good-set model per scouting step.
    pub candidates: usize,
    /// Scored pool rows shown as few-shot examples.
    pub examples: usize,
}

impl Default for HkmaConfig {
    fn default() -> Self {
        Self { b_scout: 10, gamma: 0.25, top_k: 3, mode: HkmaMode::Both, candidates: 24, examples: 4 }
    }
}

impl HkmaConfig {
    pub fn validate(&self) -> Result<(), HkmaError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) || self.b_scout < 2 || self.candidates == 0 {
            return Err(HkmaError::InvalidConfig(format!("need 0 < gamma < 1, b_scout >= 2, candidates >= 1 (got {self:?})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HkmaOutcome {
    pub configs: Vec<Configuration>,
    pub scout: Option<ScoutResult>,
    pub priors: Vec<EmpiricalPrior>,
    pub retrieved: Vec<ScoredChunk>,
    /// Pool labels consumed by scouting (few-shot rows excluded).
    pub label_evaluations: usize,
    pub retrieval_calls: usize,
}

fn excerpt(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= EXCERPT_WORDS {
        words.join(" ")
    } else {
        format!("{} ...", words[..EXCERPT_WORDS].join(" "))
    }
}

pub fn evidence_section(priors: &[EmpiricalPrior]) -> String {
    if priors.is_empty() {
        return String::new();
    }
    let mut s = String::from("\nEmpirical evidence from scouting:\n");
    for p in priors {
        let _ = writeln!(s, "- {}", p.statement);
    }
    s
}

pub fn explanation_section(hits: &[ScoredChunk]) -> String {
    if hits.is_empty() {
        return String::new();
    }
    let mut s = String::from("\nSemantic explanations from documentation:\n");
    for h in hits {
        let _ = writeln!(s, "[{} @{}] {}", h.doc, h.offset, excerpt(&h.text));
    }
    s
}

/// Retrieval question used when there are no priors to template.
pub fn names_query(dataset: &Dataset) -> String {
    format!("How do {} affect {}?", dataset.feature_names().join(", "), dataset.objective_names().join(" and "))
}

pub fn run_hkma<R: Rng + ?Sized>(
    dataset: &Dataset,
    cfg: &HkmaConfig,
    corpus: Option<&DocIndex>,
    rng: &mut R,
    gateway: &mut Gateway,
    templates: &TemplateSet,
    n: usize,
) -> Result<HkmaOutcome, HkmaError> {
    cfg.validate()?;
    let (scout, priors) = if cfg.mode.scouts() {
        let s = tpe_scout(dataset, cfg, rng)?;
        let p = extract_priors(&s, dataset);
        (Some(s), p)
    } else {
        (None, Vec::new())
    };
    let label_evaluations = scout.as_ref().map_or(0, |s| s.evaluated.len());

    let (retrieved, retrieval_calls) = match (cfg.mode.retrieves(), corpus) {
        (true, Some(index)) => {
            let queries: Vec<String> = if cfg.mode.scouts() && !priors.is_empty() {
                priors.iter().map(EmpiricalPrior::as_question).collect()
            } else {
                vec![names_query(dataset)]
            };
            let lists = queries.iter().map(|q| index.retrieve(q, cfg.top_k)).collect();
            (merge_hits(lists, cfg.top_k), queries.len())
        }
        (true, None) => {
            log::warn!("{}: no documentation corpus; prompting without explanations", dataset.name);
            (Vec::new(), 0)
        }
        (false, _) => (Vec::new(), 0),
    };

    let examples = draw_scored_examples(dataset, cfg.examples, rng)?;
    let names = dataset.feature_names();
    let prompt = templates.render(
        "hkma",
        &[
            ("dataset", &dataset.name),
            ("objectives", &objectives_line(dataset)),
            ("metadata", &metadata_block(dataset)),
            ("examples", &render_examples(dataset, &examples)),
            ("evidence", &evidence_section(&priors)),
            ("explanations", &explanation_section(&retrieved)),
            ("n", &n.to_string()),
            ("format", &format_block(n, &names)),
        ],
    )?;
    let request = ChatRequest::new(TAG_GENERATE, templates.system(), prompt, GENERATION_TEMPERATURE);
    let configs = generate_configurations(gateway, &request, dataset, &Arity::Full)?.configs;
    Ok(HkmaOutcome { configs, scout, priors, retrieved, label_evaluations, retrieval_calls })
}
