//! Progressive subspace refinement: rank features by an importance
//! ensemble, optimize over the top-k, widen by s features per round while
//! anchoring new features to the best configuration so far, then generate
//! full-space warm starts around that best.

mod forest;
mod importance;

pub use forest::{impurity_importance, ForestConfig};
pub use importance::{bin_count, ensemble, importance_scores, mutual_information, unit_normalize, ImportanceScores, RELIABLE_SAMPLES};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amp::draw_scored_examples;
use crate::baselines::{sample_rows, BaselineError, LabeledExample};
use crate::data::{nearest_row, project_rows, Configuration, DataError, Dataset, Value};
use crate::llm::prompt::{format_block, metadata_block, objectives_line};
use crate::llm::{parse_configurations, Arity, ChatRequest, Gateway, LlmError, TemplateSet, GENERATION_TEMPERATURE};
use crate::metrics::row_chebyshev;

pub const TAG_ITER: &str = "dapr.iter";
pub const TAG_FINAL: &str = "dapr.final";

#[derive(Debug, Error)]
pub enum DaprError {
    #[error("invalid DAPR configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaprConfig {
    pub k: usize,
    pub s: usize,
    pub n_importance: usize,
    /// Rows shown as examples in every round.
    pub examples: usize,
}

impl Default for DaprConfig {
    fn default() -> Self {
        Self { k: 3, s: 2, n_importance: 4, examples: 4 }
    }
}

impl DaprConfig {
    pub fn validate(&self, n_features: usize) -> Result<(), DaprError> {
        if self.k == 0 || self.k > n_features || self.s == 0 || self.n_importance < 2 || self.examples == 0 {
            return Err(DaprError::InvalidConfig(format!(
                "need 1 <= k <= {n_features}, s >= 1, n_importance >= 2, examples >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// One prompt round, as written to the experiment store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaprRound {
    pub round: usize,
    pub subspace: Vec<String>,
    pub anchors: BTreeMap<String, Value>,
    pub proposals: usize,
    pub round_best: Option<f64>,
    pub best_so_far: Option<f64>,
    #[serde(rename = "final")]
    pub is_final: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaprTrace {
    pub importance: ImportanceScores,
    pub rounds: Vec<DaprRound>,
}

impl DaprTrace {
    pub fn subspace_sizes(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.subspace.len()).collect()
    }

    /// Best-so-far never increases from one round to the next.
    pub fn is_monotone(&self) -> bool {
        let seq: Vec<f64> = self.rounds.iter().filter_map(|r| r.best_so_far).collect();
        seq.windows(2).all(|w| w[1] <= w[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub config: Configuration,
    pub row: usize,
    pub chebyshev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaprOutcome {
    pub configs: Vec<Configuration>,
    pub trace: DaprTrace,
    pub best: Option<Incumbent>,
}

fn projected_examples(dataset: &Dataset, examples: &[LabeledExample], subspace: &[&str]) -> Result<String, DataError> {
    let rows: Vec<_> = examples.iter().map(|e| &dataset.rows[e.row]).collect();
    let projected = project_rows(dataset, &rows, subspace)?;
    Ok(projected
        .iter()
        .zip(examples)
        .enumerate()
        .map(|(i, (c, e))| format!("Example {} [{}]: {}\n", i + 1, e.label, c.to_json_ordered(dataset)))
        .collect())
}

fn anchor_text(dataset: &Dataset, anchors: &BTreeMap<String, Value>) -> String {
    let mut parts: Vec<(usize, String)> = anchors
        .iter()
        .map(|(f, v)| (dataset.feature_index(f).unwrap_or(usize::MAX), format!("{f} = {v}")))
        .collect();
    parts.sort();
    parts.into_iter().map(|(_, s)| s).collect::<Vec<_>>().join(", ")
}

/// Labels each configuration and returns the best `(config, row, distance)`
/// among them; ties keep the earlier one.
fn best_of(dataset: &Dataset, configs: &[Configuration]) -> Result<Option<Incumbent>, DataError> {
    let mut best: Option<Incumbent> = None;
    for c in configs {
        let n = nearest_row(c, dataset)?;
        let d = row_chebyshev(&dataset.rows[n.index], dataset);
        if best.as_ref().is_none_or(|b| d < b.chebyshev) {
            best = Some(Incumbent { config: c.clone(), row: n.index, chebyshev: d });
        }
    }
    Ok(best)
}

/// Value a newly added feature starts from: the incumbent's own value,
/// else its matched pool row's value, else the feature median/mode.
fn anchor_value(dataset: &Dataset, best: Option<&Incumbent>, feature: &str) -> Value {
    let fi = dataset.feature_index(feature).expect("ranked features come from the dataset");
    match best {
        Some(b) => b.config.get(feature).cloned().unwrap_or_else(|| dataset.rows[b.row].features[fi].clone()),
        None => dataset.features[fi].median_or_mode.clone(),
    }
}

pub fn run_dapr<R: Rng + ?Sized>(
    dataset: &Dataset,
    cfg: &DaprConfig,
    rng: &mut R,
    gateway: &mut Gateway,
    templates: &TemplateSet,
    n: usize,
) -> Result<DaprOutcome, DaprError> {
    let d = dataset.features.len();
    cfg.validate(d)?;
    let sampled = sample_rows(dataset, cfg.n_importance, rng)?;
    let importance = importance_scores(&sampled, dataset, rng);
    for w in &importance.warnings {
        log::warn!("{}: {w}", dataset.name);
    }
    let order = importance.ranking.clone();

    let mut subspace: Vec<String> = order[..cfg.k].to_vec();
    let mut anchors: BTreeMap<String, Value> = BTreeMap::new();
    let mut best: Option<Incumbent> = None;
    let mut rounds = Vec::new();

    while subspace.len() < d {
        let keys: Vec<&str> = subspace.iter().map(String::as_str).collect();
        let examples = draw_scored_examples(dataset, cfg.examples, rng)?;
        let anchor_line = if anchors.is_empty() {
            String::new()
        } else {
            format!("Start the newly added features from these values: {}\n", anchor_text(dataset, &anchors))
        };
        let prompt = templates.render(
            "dapr_subspace",
            &[
                ("dataset", &dataset.name),
                ("objectives", &objectives_line(dataset)),
                ("metadata", &metadata_block(dataset)),
                ("subspace", &keys.join(", ")),
                ("anchors", &anchor_line),
                ("examples", &projected_examples(dataset, &examples, &keys)?),
                ("n", &n.to_string()),
                ("format", &format_block(n, &keys)),
            ],
        )?;
        let reply = gateway.complete(&ChatRequest::new(TAG_ITER, templates.system(), prompt, GENERATION_TEMPERATURE))?;
        let (proposals, round_best) = match parse_configurations(&reply.text, dataset, &Arity::Subset(subspace.clone())) {
            Ok(batch) => (batch.configs.len(), best_of(dataset, &batch.configs)?),
            Err(e) => {
                log::warn!("{}: round {} produced no usable configurations: {e}", dataset.name, rounds.len() + 1);
                (0, None)
            }
        };
        let round_score = round_best.as_ref().map(|b| b.chebyshev);
        if let Some(rb) = round_best {
            if best.as_ref().is_none_or(|b| rb.chebyshev < b.chebyshev) {
                best = Some(rb);
            }
        }
        rounds.push(DaprRound {
            round: rounds.len() + 1,
            subspace: subspace.clone(),
            anchors: anchors.clone(),
            proposals,
            round_best: round_score,
            best_so_far: best.as_ref().map(|b| b.chebyshev),
            is_final: false,
        });

        let grow_to = (subspace.len() + cfg.s).min(d);
        anchors.clear();
        for f in &order[subspace.len()..grow_to] {
            anchors.insert(f.clone(), anchor_value(dataset, best.as_ref(), f));
        }
        subspace.extend_from_slice(&order[subspace.len()..grow_to]);
    }

    // final full-space round, every feature the incumbent assigns is pinned
    let pinned: BTreeMap<String, Value> = best.as_ref().map(|b| b.config.assignments.clone()).unwrap_or_default();
    let names = dataset.feature_names();
    let examples = draw_scored_examples(dataset, cfg.examples, rng)?;
    let (best_text, best_score) = match &best {
        Some(b) => (b.config.to_json_ordered(dataset), format!("{:.4}", b.chebyshev)),
        None => ("(none yet)".to_string(), "n/a".to_string()),
    };
    let anchors_text = if pinned.is_empty() { "(none)".to_string() } else { anchor_text(dataset, &pinned) };
    let prompt = templates.render(
        "dapr_final",
        &[
            ("dataset", &dataset.name),
            ("objectives", &objectives_line(dataset)),
            ("metadata", &metadata_block(dataset)),
            ("best", &best_text),
            ("best_score", &best_score),
            ("anchors", &anchors_text),
            ("examples", &projected_examples(dataset, &examples, &names)?),
            ("n", &n.to_string()),
            ("format", &format_block(n, &names)),
        ],
    )?;
    let reply = gateway.complete(&ChatRequest::new(TAG_FINAL, templates.system(), prompt, GENERATION_TEMPERATURE))?;
    let mut configs = parse_configurations(&reply.text, dataset, &Arity::Full)?.configs;
    for c in configs.iter_mut() {
        for (f, v) in &pinned {
            c.assign(dataset, f, v)?;
        }
    }
    let final_best = best_of(dataset, &configs)?;
    let best_so_far = match (&best, &final_best) {
        (Some(b), Some(f)) => Some(b.chebyshev.min(f.chebyshev)),
        (b, f) => b.as_ref().or(f.as_ref()).map(|x| x.chebyshev),
    };
    rounds.push(DaprRound {
        round: rounds.len() + 1,
        subspace: order.clone(),
        anchors: pinned,
        proposals: configs.len(),
        round_best: final_best.map(|b| b.chebyshev),
        best_so_far,
        is_final: true,
    });

    Ok(DaprOutcome { configs, trace: DaprTrace { importance, rounds }, best })
}
