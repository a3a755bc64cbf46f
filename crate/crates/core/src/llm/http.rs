//! OpenAI-compatible chat-completion provider over HTTPS.

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{estimate_tokens, ChatProvider, ChatRequest, ChatResponse, LlmError, ProviderConfig, API_KEY_ENV};

const MAX_ATTEMPTS: usize = 3;

pub struct HttpProvider {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    backoff: Duration,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

enum Attempt {
    Done(ChatResponse),
    Retry(LlmError),
    Fatal(LlmError),
}

impl HttpProvider {
    pub fn new(cfg: &ProviderConfig) -> Result<Self, LlmError> {
        let base = cfg
            .base_url
            .clone()
            .ok_or_else(|| LlmError::InvalidRequest("http provider needs base_url".into()))?;
        let model = cfg.model.clone().ok_or_else(|| LlmError::InvalidRequest("http provider needs model".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: format!("{}/chat/completions", base.trim_end_matches('/')),
            model,
            api_key: std::env::var(API_KEY_ENV).ok(),
            backoff: Duration::from_millis(500),
        })
    }

    fn attempt(&self, request: &ChatRequest) -> Attempt {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let started = Instant::now();
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match call.send_json(&body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(LlmError::ProviderUnreachable(e.to_string())),
        };
        let status = response.status().as_u16();
        if status == 429 {
            return Attempt::Retry(LlmError::RateLimited(MAX_ATTEMPTS));
        }
        if status >= 500 {
            return Attempt::Retry(LlmError::ProviderUnreachable(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Attempt::Fatal(LlmError::InvalidRequest(format!("HTTP {status}")));
        }
        let parsed: Completion = match response.body_mut().read_json() {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(LlmError::Malformed { what: "completion".into(), detail: e.to_string() }),
        };
        let text = parsed.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default();
        if text.trim().is_empty() {
            return Attempt::Fatal(LlmError::EmptyResponse(request.tag.clone()));
        }
        let (tokens_in, tokens_out) = parsed.usage.map(|u| (u.prompt_tokens, u.completion_tokens)).unwrap_or_else(|| {
            (estimate_tokens(&request.system_text) + estimate_tokens(&request.user_text), estimate_tokens(&text))
        });
        Attempt::Done(ChatResponse {
            text,
            tokens_in,
            tokens_out,
            provider: format!("http:{}", self.model),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

impl ChatProvider for HttpProvider {
    /// Up to three attempts with exponential backoff on connection errors,
    /// 429 and 5xx responses.
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut last = LlmError::ProviderUnreachable("no attempt made".into());
        for attempt in 0..MAX_ATTEMPTS {
            match self.attempt(request) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    last = e;
                    if attempt + 1 < MAX_ATTEMPTS {
                        std::thread::sleep(self.backoff * 2u32.pow(attempt as u32));
                    }
                }
            }
        }
        Err(last)
    }
}
