//! Multi-stage prompting: landscape analysis, constraint discovery,
//! constrained generation and self-validation.

mod constraints;

pub use constraints::{match_feature, parse_rule, ConstraintSet, Op, Predicate, RuleRejection};

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::baselines::{render_examples, sample_rows, BaselineError, LabeledExample};
use crate::data::{Configuration, Dataset};
use crate::llm::prompt::{format_block, metadata_block, objectives_line};
use crate::llm::{
    first_fenced_json, generate_configurations, parse_configurations, Arity, ChatRequest, Gateway, LlmError, TemplateSet,
    ANALYSIS_TEMPERATURE, GENERATION_TEMPERATURE,
};
use crate::metrics::row_chebyshev;

pub const TAG_ANALYSIS: &str = "amp.stage1";
pub const TAG_CONSTRAINTS: &str = "amp.stage2";
pub const TAG_GENERATE: &str = "amp.stage3";
pub const TAG_VALIDATE: &str = "amp.stage4";
pub const TAG_REPAIR: &str = "amp.stage4.repair";

#[derive(Debug, Error)]
pub enum AmpError {
    #[error("analysis stage produced fewer than 3 known features after a retry")]
    UnparsableAnalysis,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmpCondition {
    #[serde(rename = "amp2")]
    Amp2,
    #[serde(rename = "amp3")]
    Amp3,
    #[serde(rename = "amp4")]
    Amp4,
}

impl AmpCondition {
    pub fn from_stages(n: u8) -> Option<Self> {
        match n {
            2 => Some(Self::Amp2),
            3 => Some(Self::Amp3),
            4 => Some(Self::Amp4),
            _ => None,
        }
    }
}

impl fmt::Display for AmpCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Amp2 => "AMP2",
            Self::Amp3 => "AMP3",
            Self::Amp4 => "AMP4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Increase,
    Decrease,
    Nonmonotone,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub ranked_features: Vec<String>,
    pub tradeoffs: Vec<String>,
    pub directionality: BTreeMap<String, Trend>,
}

pub const MAX_RANKED: usize = 5;
pub const MIN_RANKED: usize = 3;

/// Reads an analysis object from `text`, keeping only known features
/// (first mention wins) and at most five of them.
pub fn parse_analysis(text: &str, dataset: &Dataset) -> Option<AnalysisReport> {
    let obj = first_fenced_json(text, |j| j.get("ranked_features").is_some_and(Json::is_array))?;
    let mut ranked: Vec<String> = Vec::new();
    for name in obj["ranked_features"].as_array()?.iter().filter_map(Json::as_str) {
        if let Some(f) = match_feature(dataset, name) {
            if !ranked.iter().any(|r| r == f) {
                ranked.push(f.to_string());
            }
        }
    }
    ranked.truncate(MAX_RANKED);
    if ranked.len() < MIN_RANKED {
        return None;
    }
    let tradeoffs = obj
        .get("tradeoffs")
        .and_then(Json::as_array)
        .map(|a| a.iter().filter_map(|t| t.as_str().map(str::to_string)).collect())
        .unwrap_or_default();
    let mut directionality = BTreeMap::new();
    if let Some(map) = obj.get("directionality").and_then(Json::as_object) {
        for (k, v) in map {
            if let (Some(f), Some(t)) = (match_feature(dataset, k), v.as_str()) {
                let trend = match t.trim().to_lowercase().as_str() {
                    "increase" => Trend::Increase,
                    "decrease" => Trend::Decrease,
                    "nonmonotone" | "non-monotone" => Trend::Nonmonotone,
                    _ => Trend::Unknown,
                };
                directionality.insert(f.to_string(), trend);
            }
        }
    }
    Some(AnalysisReport { ranked_features: ranked, tradeoffs, directionality })
}

/// Few-shot rows labeled with their Chebyshev distance.
pub fn draw_scored_examples<R: Rng + ?Sized>(dataset: &Dataset, n: usize, rng: &mut R) -> Result<Vec<LabeledExample>, BaselineError> {
    Ok(sample_rows(dataset, n, rng)?
        .into_iter()
        .map(|row| {
            let d = row_chebyshev(&dataset.rows[row], dataset);
            LabeledExample { row, chebyshev: d, label: format!("chebyshev {d:.4}") }
        })
        .collect())
}

pub fn stage_analysis(
    dataset: &Dataset,
    few_shot: &[LabeledExample],
    gateway: &mut Gateway,
    templates: &TemplateSet,
) -> Result<AnalysisReport, AmpError> {
    let prompt = templates.render(
        "amp_stage1",
        &[
            ("dataset", &dataset.name),
            ("objectives", &objectives_line(dataset)),
            ("metadata", &metadata_block(dataset)),
            ("examples", &render_examples(dataset, few_shot)),
        ],
    )?;
    let request = ChatRequest::new(TAG_ANALYSIS, templates.system(), prompt, ANALYSIS_TEMPERATURE);
    for _ in 0..2 {
        let reply = gateway.complete(&request)?;
        if let Some(report) = parse_analysis(&reply.text, dataset) {
            return Ok(report);
        }
    }
    Err(AmpError::UnparsableAnalysis)
}

fn string_list(obj: &Json, key: &str) -> Vec<String> {
    obj.get(key)
        .and_then(Json::as_array)
        .map(|a| {
            a.iter()
                .filter_map(|r| match r {
                    Json::String(s) => Some(s.clone()),
                    Json::Object(o) => o.get("rule").and_then(Json::as_str).map(str::to_string),
                    _ => None,
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Never fails on content: an unreadable reply yields an empty set.
pub fn stage_constraints(
    report: &AnalysisReport,
    dataset: &Dataset,
    gateway: &mut Gateway,
    templates: &TemplateSet,
) -> Result<ConstraintSet, AmpError> {
    let analysis = serde_json::to_string_pretty(report).expect("report serializes");
    let prompt = templates.render(
        "amp_stage2",
        &[("dataset", &dataset.name), ("metadata", &metadata_block(dataset)), ("analysis", &analysis)],
    )?;
    let reply = gateway.complete(&ChatRequest::new(TAG_CONSTRAINTS, templates.system(), prompt, ANALYSIS_TEMPERATURE))?;
    let Some(obj) = first_fenced_json(&reply.text, |j| j.get("hard").is_some() || j.get("soft").is_some()) else {
        log::warn!("constraint stage reply had no readable block");
        return Ok(ConstraintSet::default());
    };
    Ok(ConstraintSet::build(dataset, &string_list(&obj, "hard"), &string_list(&obj, "soft")))
}

fn constraint_section(constraints: Option<&ConstraintSet>) -> String {
    let Some(c) = constraints else {
        return String::new();
    };
    let mut s = String::new();
    if !c.hard.is_empty() {
        s.push_str("\nHard constraints (strict rules; every configuration must satisfy all of them):\n");
        s.push_str(&c.rulebook());
    }
    if !c.soft.is_empty() {
        s.push_str("\nSoft constraints (preferences):\n");
        for r in &c.soft {
            s.push_str(&format!("- {r}\n"));
        }
    }
    s
}

pub fn generation_prompt(
    dataset: &Dataset,
    few_shot: &[LabeledExample],
    report: &AnalysisReport,
    constraints: Option<&ConstraintSet>,
    n: usize,
    templates: &TemplateSet,
) -> Result<String, LlmError> {
    templates.render(
        "amp_stage3",
        &[
            ("dataset", &dataset.name),
            ("objectives", &objectives_line(dataset)),
            ("metadata", &metadata_block(dataset)),
            ("examples", &render_examples(dataset, few_shot)),
            ("ranked", &report.ranked_features.join(", ")),
            ("constraints", &constraint_section(constraints)),
            ("n", &n.to_string()),
            ("format", &format_block(n, &dataset.feature_names())),
        ],
    )
}

#[allow(clippy::too_many_arguments)]
pub fn stage_generate(
    dataset: &Dataset,
    few_shot: &[LabeledExample],
    report: &AnalysisReport,
    constraints: Option<&ConstraintSet>,
    gateway: &mut Gateway,
    templates: &TemplateSet,
    n: usize,
) -> Result<Vec<Configuration>, AmpError> {
    let prompt = generation_prompt(dataset, few_shot, report, constraints, n, templates)?;
    let request = ChatRequest::new(TAG_GENERATE, templates.system(), prompt, GENERATION_TEMPERATURE);
    Ok(generate_configurations(gateway, &request, dataset, &Arity::Full)?.configs)
}

/// What the validation stage did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationLog {
    /// Configurations the mechanical check found in violation.
    pub violating: usize,
    /// Configurations the critic flagged as inconsistent.
    pub critic_flagged: usize,
    /// Configurations fixed by the repair reply.
    pub repaired: usize,
    /// Configurations that needed mechanical projection afterwards.
    pub projected: usize,
}

/// Critic pass, one repair round for mechanically violating
/// configurations, then projection of whatever still violates.
pub fn stage_validate(
    dataset: &Dataset,
    configs: Vec<Configuration>,
    constraints: &ConstraintSet,
    gateway: &mut Gateway,
    templates: &TemplateSet,
) -> Result<(Vec<Configuration>, ValidationLog), AmpError> {
    let mut log = ValidationLog::default();
    let listing: String =
        configs.iter().enumerate().map(|(i, c)| format!("{}. {}\n", i + 1, c.to_json_ordered(dataset))).collect();
    let rules = if constraints.hard.is_empty() { "(none)\n".to_string() } else { constraints.rulebook() };
    let prompt = templates.render("amp_stage4", &[("configs", &listing), ("rules", &rules)])?;
    let critic = gateway.complete(&ChatRequest::new(TAG_VALIDATE, templates.system(), prompt, ANALYSIS_TEMPERATURE))?;
    if let Some(verdicts) = first_fenced_json(&critic.text, Json::is_array) {
        log.critic_flagged = verdicts
            .as_array()
            .expect("accepted arrays only")
            .iter()
            .filter(|v| v.get("consistent").and_then(Json::as_bool) == Some(false))
            .count();
    }

    let mut out = configs;
    let bad: Vec<usize> = (0..out.len()).filter(|&i| !constraints.satisfied_by(&out[i])).collect();
    log.violating = bad.len();
    if !bad.is_empty() {
        let mut listing = String::new();
        for (k, &i) in bad.iter().enumerate() {
            let named: Vec<String> = constraints.violations(&out[i]).iter().map(|p| p.to_string()).collect();
            listing.push_str(&format!("{}. {} violates: {}\n", k + 1, out[i].to_json_ordered(dataset), named.join("; ")));
        }
        let prompt = templates.render(
            "amp_stage4_repair",
            &[("rules", &rules), ("violations", &listing), ("format", &format_block(bad.len(), &dataset.feature_names()))],
        )?;
        let reply = gateway.complete(&ChatRequest::new(TAG_REPAIR, templates.system(), prompt, ANALYSIS_TEMPERATURE))?;
        match parse_configurations(&reply.text, dataset, &Arity::Full) {
            Ok(batch) => {
                for (&i, revised) in bad.iter().zip(batch.configs) {
                    if constraints.satisfied_by(&revised) {
                        log.repaired += 1;
                    }
                    out[i] = revised;
                }
            }
            Err(e) => log::warn!("repair reply unusable: {e}"),
        }
    }
    for c in out.iter_mut() {
        if !constraints.satisfied_by(c) {
            *c = constraints.project(dataset, c);
            log.projected += 1;
        }
    }
    Ok((out, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpOutcome {
    pub configs: Vec<Configuration>,
    pub report: AnalysisReport,
    pub constraints: Option<ConstraintSet>,
    pub validation: Option<ValidationLog>,
}

pub fn run_amp<R: Rng + ?Sized>(
    dataset: &Dataset,
    condition: AmpCondition,
    rng: &mut R,
    gateway: &mut Gateway,
    templates: &TemplateSet,
    n: usize,
) -> Result<AmpOutcome, AmpError> {
    let few_shot = draw_scored_examples(dataset, 4, rng)?;
    let report = stage_analysis(dataset, &few_shot, gateway, templates)?;
    let constraints = match condition {
        AmpCondition::Amp2 => None,
        _ => Some(stage_constraints(&report, dataset, gateway, templates)?),
    };
    let configs = stage_generate(dataset, &few_shot, &report, constraints.as_ref(), gateway, templates, n)?;
    let (configs, validation) = match (condition, &constraints) {
        (AmpCondition::Amp4, Some(c)) => {
            let (configs, log) = stage_validate(dataset, configs, c, gateway, templates)?;
            (configs, Some(log))
        }
        // AMP3 has no critic, but its output still honours the hard rules
        (AmpCondition::Amp3, Some(c)) => (configs.iter().map(|x| c.project(dataset, x)).collect(), None),
        _ => (configs, None),
    };
    Ok(AmpOutcome { configs, report, constraints, validation })
}
