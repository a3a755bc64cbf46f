//! Uniform chat-completion access with token accounting.
//!
//! Every pipeline talks to a [`Gateway`], which forwards requests to a
//! [`ChatProvider`] and records one [`CostEntry`](crate::metrics::CostEntry)
//! per call. The [`mock`] provider replays scripted responses so whole
//! experiments run offline and deterministically.

pub mod mock;
mod parse;
pub mod prompt;
pub mod synthetic;

#[cfg(feature = "http")]
pub mod http;

pub use mock::{MockCall, MockEntry, MockProvider, MockReply, MockScript};
pub use parse::{first_fenced_json, fenced_blocks, parse_configurations, Arity, ParsedBatch};
pub use prompt::{render_prompt, PromptTemplate, TemplateSet};
pub use synthetic::SyntheticModel;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::CostLedger;

/// Sampling temperature for generation stages.
pub const GENERATION_TEMPERATURE: f64 = 0.7;
/// Sampling temperature for analysis and validation stages.
pub const ANALYSIS_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("rate limited after {0} attempts")]
    RateLimited(usize),
    #[error("empty response for call `{0}`")]
    EmptyResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("template `{template}` references missing slot `{slot}`")]
    MissingSlot { template: String, slot: String },
    #[error("no fenced JSON array of configurations in response")]
    NoParsableBlock,
    #[error("all {0} candidate configurations were invalid")]
    AllCandidatesInvalid(usize),
    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Call-site label, e.g. `amp.stage1`.
    pub tag: String,
}

impl ChatRequest {
    pub fn new(tag: &str, system_text: impl Into<String>, user_text: impl Into<String>, temperature: f64) -> Self {
        Self {
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature,
            max_output_tokens: 2048,
            tag: tag.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.user_text.trim().is_empty() {
            return Err(LlmError::InvalidRequest("user text is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub provider: String,
    pub latency_ms: u64,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

/// Rough token count used when a provider reports none: four characters
/// per token.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Which experiment cell a gateway's calls are billed to.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallScope {
    pub method: String,
    pub dataset: String,
    pub trial: usize,
}

/// Provider front-end for one pipeline run. Not shared between threads:
/// each trial owns its gateway and ledger.
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    scope: CallScope,
    ledger: CostLedger,
    latency_ms: u64,
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>, scope: CallScope) -> Self {
        Self { provider, scope, ledger: CostLedger::new(), latency_ms: 0 }
    }

    pub fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let response = self.provider.complete(request)?;
        self.ledger
            .record(
                &self.scope.method,
                &self.scope.dataset,
                self.scope.trial,
                &request.tag,
                response.tokens_in as i64,
                response.tokens_out as i64,
            )
            .expect("provider token counts are unsigned");
        self.latency_ms += response.latency_ms;
        if response.text.trim().is_empty() {
            return Err(LlmError::EmptyResponse(request.tag.clone()));
        }
        Ok(response)
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> CostLedger {
        self.ledger
    }

    pub fn calls(&self) -> usize {
        self.ledger.len()
    }

    /// Sum of provider-reported latencies.
    pub fn latency_ms(&self) -> u64 {
        self.latency_ms
    }

    pub fn scope(&self) -> &CallScope {
        &self.scope
    }
}

/// One completion whose reply is parsed into configurations.
pub fn generate_configurations(
    gateway: &mut Gateway,
    request: &ChatRequest,
    dataset: &crate::data::Dataset,
    arity: &Arity,
) -> Result<ParsedBatch, LlmError> {
    let response = gateway.complete(request)?;
    parse_configurations(&response.text, dataset, arity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Http,
}

/// Provider configuration file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider: ProviderKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Mock script path (mock provider only).
    #[serde(default)]
    pub script: Option<String>,
}

fn default_timeout_ms() -> u64 {
    60_000
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self { provider: ProviderKind::Mock, base_url: None, model: None, timeout_ms: default_timeout_ms(), script: None }
    }
}

/// Environment variable holding the API key of the HTTP provider.
pub const API_KEY_ENV: &str = "WSLAB_LLM_API_KEY";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gateway_records_one_entry_per_call() {
        let script = MockScript::from_entries(vec![
            MockEntry::tagged("a", "first").with_tokens(10, 3),
            MockEntry::tagged("b", "second").with_tokens(20, 7),
        ]);
        let mock = Arc::new(MockProvider::new(script, 0));
        let mut gw = Gateway::new(mock.clone(), CallScope { method: "m".into(), dataset: "d".into(), trial: 2 });
        assert_eq!(gw.complete(&ChatRequest::new("a", "", "hi", 0.0)).unwrap().text, "first");
        assert_eq!(gw.complete(&ChatRequest::new("b", "", "hi", 0.0)).unwrap().text, "second");
        assert_eq!(gw.ledger().len(), 2);
        assert_eq!(gw.ledger().totals(), (30, 10));
        let log_total = mock.calls().iter().fold((0, 0), |(i, o), c| (i + c.tokens_in, o + c.tokens_out));
        assert_eq!(gw.ledger().totals(), log_total);
        assert_eq!(gw.ledger().entries()[0].trial, 2);
    }

    #[test]
    fn unmatched_request_is_empty_response() {
        let mock = Arc::new(MockProvider::new(MockScript::default(), 0));
        let mut gw = Gateway::new(mock, CallScope::default());
        assert!(matches!(gw.complete(&ChatRequest::new("x", "", "hi", 0.0)), Err(LlmError::EmptyResponse(_))));
    }

    #[test]
    fn invalid_requests_rejected() {
        let mock = Arc::new(MockProvider::new(MockScript::default(), 0));
        let mut gw = Gateway::new(mock, CallScope::default());
        assert!(matches!(gw.complete(&ChatRequest::new("x", "", "  ", 0.0)), Err(LlmError::InvalidRequest(_))));
        assert!(matches!(gw.complete(&ChatRequest::new("x", "", "q", 2.5)), Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn provider_config_parses() {
        let cfg: ProviderConfig = serde_json::from_str(r#"{"provider":"http","base_url":"http://x","model":"m","timeout_ms":5}"#).unwrap();
        assert_eq!(cfg.provider, ProviderKind::Http);
        assert_eq!(cfg.timeout_ms, 5);
        let mock: ProviderConfig = serde_json::from_str(r#"{"provider":"mock"}"#).unwrap();
        assert_eq!(mock.timeout_ms, 60_000);
    }
}
