//! Human-in-the-loop knowledge prompting: an LLM proposes domain rules, an
//! expert reviews them, then each iteration generates candidates, shows
//! the expert the most confidently wrong one and appends the expert's
//! answer to the rule set. The frozen rule set drives the final prompts.

mod feedback;

pub use feedback::{
    parse_review, simulated_expert_reply, Feedback, FeedbackKind, FeedbackSource, InteractiveSource, Mailbox, PostError, ScriptedSource,
    SimulatedSource, Verdict,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::amp::draw_scored_examples;
use crate::baselines::{render_examples, BaselineError};
use crate::data::{nearest_row, Configuration, DataError, Dataset, Value};
use crate::hkma::DocIndex;
use crate::llm::prompt::{format_block, metadata_block, objectives_line};
use crate::llm::{first_fenced_json, parse_configurations, Arity, ChatRequest, Gateway, LlmError, TemplateSet, GENERATION_TEMPERATURE};
use crate::metrics::row_chebyshev;

pub const TAG_BOOTSTRAP: &str = "hdkp.bootstrap";
pub const TAG_GENERATE: &str = "hdkp.generate";
pub const TAG_FINAL: &str = "hdkp.final";
pub const QUESTION: &str = "What domain rule is the model missing?";
pub const REVIEW_QUESTION: &str = "Is each hypothesized rule valid (reply per rule with Valid, Invalid or Modify: <corrected rule>)?";
/// Corpus words quoted in the bootstrap prompt.
const DOC_WORDS: usize = 400;

#[derive(Debug, Error)]
pub enum HdkpError {
    #[error("invalid H-DKP configuration: {0}")]
    InvalidConfig(String),
    #[error("session {0} is already finalized")]
    Finalized(String),
    #[error("session {id} has used all {t_max} iterations")]
    Exhausted { id: String, t_max: usize },
    #[error("session {0} has no query awaiting feedback")]
    NothingPending(String),
    #[error("session file: {0}")]
    Io(#[from] std::io::Error),
    #[error("session file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdkpConfig {
    pub t_max: usize,
    pub t_min: usize,
    pub n_candidates: usize,
    pub final_generations: usize,
    /// Scored pool rows shown in every generation prompt.
    pub examples: usize,
    /// Consecutive feedback timeouts tolerated before finalizing early.
    pub max_timeouts: usize,
}

impl Default for HdkpConfig {
    fn default() -> Self {
        Self { t_max: 10, t_min: 5, n_candidates: 4, final_generations: 20, examples: 4, max_timeouts: 1 }
    }
}

impl HdkpConfig {
    pub fn validate(&self) -> Result<(), HdkpError> {
        if !(self.t_max >= self.t_min && self.t_min >= 1) || self.n_candidates == 0 || self.final_generations == 0 || self.examples == 0 {
            return Err(HdkpError::InvalidConfig(format!(
                "need t_max >= t_min >= 1 and positive candidate, generation and example counts (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Llm,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub provenance: Provenance,
    pub iteration: usize,
}

/// Append-only rule set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefState {
    statements: Vec<Statement>,
}

impl BeliefState {
    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    /// Appends a trimmed statement; blank text is ignored.
    pub fn push(&mut self, text: &str, provenance: Provenance, iteration: usize) -> bool {
        let text = text.trim();
        if text.is_empty() {
            return false;
        }
        self.statements.push(Statement { text: text.to_string(), provenance, iteration });
        true
    }

    pub fn texts(&self) -> Vec<String> {
        self.statements.iter().map(|s| s.text.clone()).collect()
    }

    /// `earlier` is a prefix of this state.
    pub fn extends(&self, earlier: &BeliefState) -> bool {
        self.statements.starts_with(&earlier.statements)
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.statements.iter().filter(|s| s.provenance == provenance).count()
    }

    pub fn rulebook(&self) -> String {
        if self.statements.is_empty() {
            return "(no rules yet)\n".into();
        }
        self.statements.iter().enumerate().map(|(i, s)| format!("{}. {}\n", i + 1, s.text)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    AwaitingFeedback,
    Finalized,
    Excluded,
}

impl SessionStatus {
    pub fn is_closed(self) -> bool {
        matches!(self, Self::Finalized | Self::Excluded)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Review,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCase {
    pub features: BTreeMap<String, Value>,
    pub chebyshev: f64,
    pub predicted_score: f64,
}

/// One question put to the expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub iteration: usize,
    pub kind: QueryKind,
    pub rules: Vec<String>,
    pub failure: Option<FailureCase>,
    pub question: String,
    /// Full message as the expert reads it.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub config: Configuration,
    pub self_score: Option<f64>,
    pub chebyshev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub candidates: Vec<ScoredCandidate>,
    pub e_fail: usize,
    pub query: String,
    pub reply: String,
    pub min_chebyshev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Draft {
    candidates: Vec<ScoredCandidate>,
    e_fail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub dataset: String,
    pub t: usize,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub dataset: String,
    /// Completed iterations; the Day-1 review is iteration 1.
    pub t: usize,
    pub t_max: usize,
    pub t_min: usize,
    pub belief: BeliefState,
    pub history: Vec<IterationRecord>,
    pub status: SessionStatus,
    pub pending: Option<PendingQuery>,
    #[serde(default)]
    draft: Option<Draft>,
}

impl Session {
    pub fn new(id: impl Into<String>, dataset: &Dataset, cfg: &HdkpConfig) -> Self {
        Self {
            id: id.into(),
            dataset: dataset.name.clone(),
            t: 0,
            t_max: cfg.t_max,
            t_min: cfg.t_min,
            belief: BeliefState::default(),
            history: Vec::new(),
            status: SessionStatus::Running,
            pending: None,
            draft: None,
        }
    }

    /// Completed failure-feedback rounds.
    pub fn feedback_rounds(&self) -> usize {
        self.history.len()
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary { id: self.id.clone(), dataset: self.dataset.clone(), t: self.t, status: self.status }
    }

    /// Writes via a temporary file so a crash never leaves half a session.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HdkpError> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HdkpError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn corpus_excerpt(corpus: Option<&DocIndex>) -> String {
    let words: Vec<&str> = corpus.map(|c| c.chunks.iter().flat_map(|ch| ch.text.split_whitespace()).take(DOC_WORDS).collect()).unwrap_or_default();
    if words.is_empty() {
        "(no documentation available)".into()
    } else {
        words.join(" ")
    }
}

/// Statements from a bootstrap reply: a fenced JSON array of strings, else
/// bulleted or numbered lines.
pub fn parse_statements(text: &str) -> Vec<String> {
    if let Some(arr) = first_fenced_json(text, Json::is_array) {
        return arr.as_array().expect("accepted arrays only").iter().filter_map(Json::as_str).map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    }
    text.lines()
        .map(str::trim)
        .filter_map(|l| {
            l.strip_prefix("- ")
                .or_else(|| l.strip_prefix("* "))
                .or_else(|| l.split_once(". ").filter(|(n, _)| n.parse::<usize>().is_ok()).map(|(_, r)| r))
        })
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// One completion proposing hypothesized rules from documentation and
/// feature/objective names.
pub fn propose_statements(dataset: &Dataset, corpus: Option<&DocIndex>, gateway: &mut Gateway, templates: &TemplateSet) -> Result<Vec<String>, HdkpError> {
    let prompt = templates.render(
        "hdkp_bootstrap",
        &[
            ("dataset", &dataset.name),
            ("features", &dataset.feature_names().join(", ")),
            ("objectives", &objectives_line(dataset)),
            ("docs", &corpus_excerpt(corpus)),
        ],
    )?;
    let reply = gateway.complete(&ChatRequest::new(TAG_BOOTSTRAP, templates.system(), prompt, GENERATION_TEMPERATURE))?;
    Ok(parse_statements(&reply.text))
}

pub fn review_query(statements: &[String]) -> PendingQuery {
    let mut text = String::from("Hypothesized rules:\n");
    for (i, s) in statements.iter().enumerate() {
        let _ = writeln!(text, "{}. {s}", i + 1);
    }
    let _ = write!(text, "\n{REVIEW_QUESTION}");
    PendingQuery { iteration: 1, kind: QueryKind::Review, rules: statements.to_vec(), failure: None, question: REVIEW_QUESTION.into(), text }
}

/// Applies review verdicts: invalid statements are dropped, modified ones
/// are replaced by the expert's wording.
pub fn apply_review(statements: &[String], feedback: &Feedback) -> BeliefState {
    let verdicts = match feedback {
        Feedback::Reply(r) => parse_review(r, statements.len()),
        Feedback::Timeout => vec![Verdict::Valid; statements.len()],
    };
    let mut belief = BeliefState::default();
    for (s, v) in statements.iter().zip(&verdicts) {
        if *v == Verdict::Valid {
            belief.push(s, Provenance::Llm, 1);
        }
    }
    for v in &verdicts {
        if let Verdict::Modify(text) = v {
            belief.push(text, Provenance::Expert, 1);
        }
    }
    belief
}

/// Proposal, Day-1 review and the initial belief state.
pub fn bootstrap_beliefs(
    dataset: &Dataset,
    corpus: Option<&DocIndex>,
    gateway: &mut Gateway,
    templates: &TemplateSet,
    source: &mut dyn FeedbackSource,
) -> Result<BeliefState, HdkpError> {
    let proposed = propose_statements(dataset, corpus, gateway, templates)?;
    let reply = source.request(&review_query(&proposed));
    Ok(apply_review(&proposed, &reply))
}

/// Index of the candidate maximizing `self_score x chebyshev`; when any
/// self-score is missing all count as equal. Ties go to the earlier one.
pub fn select_confusing_failure(candidates: &[ScoredCandidate]) -> usize {
    let uniform = candidates.iter().any(|c| c.self_score.is_none());
    let weight = |c: &ScoredCandidate| if uniform { 1.0 } else { c.self_score.unwrap_or(1.0).clamp(0.0, 1.0) };
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if weight(c) * c.chebyshev > weight(&candidates[best]) * candidates[best].chebyshev {
            best = i;
        }
    }
    best
}

pub fn failure_query(iteration: usize, belief: &BeliefState, failure: &FailureCase, dataset: &Dataset) -> PendingQuery {
    let mut text = String::from("Current rules:\n");
    text.push_str(&belief.rulebook());
    let _ = writeln!(
        text,
        "\nFailure case (self-assessed score {:.2}, Chebyshev distance {:.4}):",
        failure.predicted_score, failure.chebyshev
    );
    for f in &dataset.features {
        if let Some(v) = failure.features.get(&f.name) {
            let _ = writeln!(text, "- {} = {v}", f.name);
        }
    }
    let _ = write!(text, "\n{QUESTION}");
    PendingQuery {
        iteration,
        kind: QueryKind::Failure,
        rules: belief.texts(),
        failure: Some(failure.clone()),
        question: QUESTION.into(),
        text,
    }
}

fn generation_prompt<R: Rng + ?Sized>(
    belief: &BeliefState,
    dataset: &Dataset,
    cfg: &HdkpConfig,
    n: usize,
    rng: &mut R,
    templates: &TemplateSet,
) -> Result<String, HdkpError> {
    let examples = draw_scored_examples(dataset, cfg.examples, rng)?;
    Ok(templates.render(
        "hdkp_generate",
        &[
            ("dataset", &dataset.name),
            ("objectives", &objectives_line(dataset)),
            ("metadata", &metadata_block(dataset)),
            ("rules", &belief.rulebook()),
            ("examples", &render_examples(dataset, &examples)),
            ("n", &n.to_string()),
            ("format", &format_block(n, &dataset.feature_names())),
        ],
    )?)
}

fn score(dataset: &Dataset, configs: Vec<Configuration>, self_scores: Vec<Option<f64>>) -> Result<Vec<ScoredCandidate>, HdkpError> {
    configs
        .into_iter()
        .zip(self_scores)
        .map(|(config, self_score)| {
            let row = nearest_row(&config, dataset)?.index;
            Ok(ScoredCandidate { config, self_score, chebyshev: row_chebyshev(&dataset.rows[row], dataset) })
        })
        .collect()
}

/// Starts a fresh session: proposals, Day-1 review, `t = 1`.
pub fn start_session(
    session: &mut Session,
    dataset: &Dataset,
    corpus: Option<&DocIndex>,
    gateway: &mut Gateway,
    templates: &TemplateSet,
    source: &mut dyn FeedbackSource,
) -> Result<(), HdkpError> {
    if session.status.is_closed() {
        return Err(HdkpError::Finalized(session.id.clone()));
    }
    let proposed = propose_statements(dataset, corpus, gateway, templates)?;
    let query = review_query(&proposed);
    session.pending = Some(query.clone());
    session.status = SessionStatus::AwaitingFeedback;
    let reply = source.request(&query);
    session.belief = apply_review(&proposed, &reply);
    session.pending = None;
    session.status = SessionStatus::Running;
    session.t = 1;
    Ok(())
}

/// Generates candidates, picks the failure and opens the query for
/// iteration `t + 1`. Calling it again while a query is open returns the
/// same query.
pub fn prepare_iteration<R: Rng + ?Sized>(
    session: &mut Session,
    dataset: &Dataset,
    cfg: &HdkpConfig,
    gateway: &mut Gateway,
    templates: &TemplateSet,
    rng: &mut R,
) -> Result<PendingQuery, HdkpError> {
    if session.status.is_closed() {
        return Err(HdkpError::Finalized(session.id.clone()));
    }
    if let (Some(q), Some(_)) = (&session.pending, &session.draft) {
        return Ok(q.clone());
    }
    if session.t >= session.t_max {
        return Err(HdkpError::Exhausted { id: session.id.clone(), t_max: session.t_max });
    }
    let prompt = generation_prompt(&session.belief, dataset, cfg, cfg.n_candidates, rng, templates)?;
    let reply = gateway.complete(&ChatRequest::new(TAG_GENERATE, templates.system(), prompt, GENERATION_TEMPERATURE))?;
    let batch = parse_configurations(&reply.text, dataset, &Arity::Full)?;
    let candidates = score(dataset, batch.configs, batch.self_scores)?;
    let e_fail = select_confusing_failure(&candidates);
    let uniform = candidates.iter().any(|c| c.self_score.is_none());
    let chosen = &candidates[e_fail];
    let failure = FailureCase {
        features: chosen.config.assignments.clone(),
        chebyshev: chosen.chebyshev,
        predicted_score: if uniform { 1.0 } else { chosen.self_score.unwrap_or(1.0).clamp(0.0, 1.0) },
    };
    let query = failure_query(session.t + 1, &session.belief, &failure, dataset);
    session.pending = Some(query.clone());
    session.draft = Some(Draft { candidates, e_fail });
    session.status = SessionStatus::AwaitingFeedback;
    Ok(query)
}

/// Records the expert's answer to the open query. A timeout leaves the
/// session frozen: still awaiting feedback, belief untouched. Returns
/// whether the round completed.
pub fn apply_feedback(session: &mut Session, feedback: Feedback) -> Result<bool, HdkpError> {
    let (Some(query), Some(draft)) = (session.pending.clone(), session.draft.clone()) else {
        return Err(HdkpError::NothingPending(session.id.clone()));
    };
    let Feedback::Reply(reply) = feedback else {
        return Ok(false);
    };
    session.belief.push(&reply, Provenance::Expert, query.iteration);
    let min_chebyshev = draft.candidates.iter().map(|c| c.chebyshev).fold(f64::INFINITY, f64::min);
    session.history.push(IterationRecord {
        iteration: query.iteration,
        candidates: draft.candidates,
        e_fail: draft.e_fail,
        query: query.text,
        reply,
        min_chebyshev,
    });
    session.t = query.iteration;
    session.pending = None;
    session.draft = None;
    session.status = SessionStatus::Running;
    Ok(true)
}

pub fn run_iteration<R: Rng + ?Sized>(
    session: &mut Session,
    dataset: &Dataset,
    cfg: &HdkpConfig,
    gateway: &mut Gateway,
    templates: &TemplateSet,
    rng: &mut R,
    source: &mut dyn FeedbackSource,
) -> Result<bool, HdkpError> {
    let query = prepare_iteration(session, dataset, cfg, gateway, templates, rng)?;
    let reply = source.request(&query);
    apply_feedback(session, reply)
}

/// One execution of the frozen final prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalGeneration {
    pub configs: Vec<Configuration>,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finalized {
    pub generations: Vec<FinalGeneration>,
    pub excluded: bool,
    pub rounds: usize,
}

/// Freezes the belief and runs the final prompt `final_generations` times,
/// each with freshly drawn examples.
pub fn finalize<R: Rng + ?Sized>(
    session: &mut Session,
    dataset: &Dataset,
    cfg: &HdkpConfig,
    gateway: &mut Gateway,
    templates: &TemplateSet,
    rng: &mut R,
    n: usize,
) -> Result<Finalized, HdkpError> {
    if session.status.is_closed() {
        return Err(HdkpError::Finalized(session.id.clone()));
    }
    session.pending = None;
    session.draft = None;
    session.t = session.t.max(1);
    let mut generations = Vec::with_capacity(cfg.final_generations);
    for _ in 0..cfg.final_generations {
        let prompt = generation_prompt(&session.belief, dataset, cfg, n, rng, templates)?;
        let reply = gateway.complete(&ChatRequest::new(TAG_FINAL, templates.system(), prompt, GENERATION_TEMPERATURE))?;
        let configs = match parse_configurations(&reply.text, dataset, &Arity::Full) {
            Ok(b) => b.configs,
            Err(e) => {
                log::warn!("{}: final generation unusable: {e}", session.id);
                Vec::new()
            }
        };
        generations.push(FinalGeneration { configs, tokens_in: reply.tokens_in, tokens_out: reply.tokens_out });
    }
    let rounds = session.feedback_rounds();
    let excluded = rounds < session.t_min;
    session.status = if excluded { SessionStatus::Excluded } else { SessionStatus::Finalized };
    Ok(Finalized { generations, excluded, rounds })
}

/// Full session: bootstrap, up to `t_max - 1` feedback rounds, finalize.
/// `observe` sees the session after every state transition.
#[allow(clippy::too_many_arguments)]
pub fn run_session<R: Rng + ?Sized>(
    session: &mut Session,
    dataset: &Dataset,
    corpus: Option<&DocIndex>,
    cfg: &HdkpConfig,
    gateway: &mut Gateway,
    templates: &TemplateSet,
    rng: &mut R,
    source: &mut dyn FeedbackSource,
    n: usize,
    observe: &mut dyn FnMut(&Session),
) -> Result<Finalized, HdkpError> {
    cfg.validate()?;
    if session.t == 0 {
        start_session(session, dataset, corpus, gateway, templates, source)?;
        observe(session);
    }
    let mut timeouts = 0;
    while session.t < session.t_max {
        let query = prepare_iteration(session, dataset, cfg, gateway, templates, rng)?;
        observe(session);
        if apply_feedback(session, source.request(&query))? {
            timeouts = 0;
            observe(session);
        } else {
            timeouts += 1;
            log::info!("{}: no feedback for iteration {}", session.id, query.iteration);
            if timeouts >= cfg.max_timeouts {
                break;
            }
        }
    }
    let out = finalize(session, dataset, cfg, gateway, templates, rng, n)?;
    observe(session);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(score: Option<f64>, d: f64) -> ScoredCandidate {
        ScoredCandidate { config: Configuration::new(), self_score: score, chebyshev: d }
    }

    #[test]
    fn confident_failure_beats_unconfident_worse_one() {
        assert_eq!(select_confusing_failure(&[cand(Some(0.9), 0.8), cand(Some(0.2), 0.9)]), 0);
        assert_eq!(select_confusing_failure(&[cand(None, 0.3), cand(Some(0.1), 0.9), cand(Some(1.0), 0.5)]), 1);
        assert_eq!(select_confusing_failure(&[cand(Some(0.5), 0.4)]), 0);
        assert_eq!(select_confusing_failure(&[cand(Some(0.5), 0.4), cand(Some(0.5), 0.4)]), 0);
    }

    #[test]
    fn belief_is_append_only_and_skips_blank() {
        let mut b = BeliefState::default();
        b.push("a", Provenance::Llm, 1);
        let before = b.clone();
        assert!(!b.push("   ", Provenance::Expert, 2));
        b.push(" b ", Provenance::Expert, 2);
        assert!(b.extends(&before) && !before.extends(&b));
        assert_eq!(b.texts(), vec!["a", "b"]);
    }

    #[test]
    fn statements_from_json_or_bullets() {
        assert_eq!(parse_statements("```json\n[\"x <= 3\", \" \", \"y\"]\n```"), vec!["x <= 3", "y"]);
        assert_eq!(parse_statements("Ideas:\n- keep x low\n2. y high\nnot a rule"), vec!["keep x low", "y high"]);
    }
}
