//! Deterministic scripted provider.
//!
//! A [`MockScript`] is an ordered list of entries; the first entry whose tag
//! and substring matchers accept a request answers it. Entries with several
//! texts rotate through them, starting at an offset derived from the seed
//! the provider was built with. Programmatic responders can be chained
//! after the script for tests that need to react to prompt contents.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, ChatProvider, ChatRequest, ChatResponse, LlmError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    /// Exact call tag, or a prefix ending in `*`.
    #[serde(default)]
    pub tag: Option<String>,
    /// Substring required somewhere in the system or user text.
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub texts: Vec<String>,
    #[serde(default)]
    pub tokens_in: Option<u64>,
    #[serde(default)]
    pub tokens_out: Option<u64>,
    #[serde(default)]
    pub latency_ms: u64,
}

impl MockEntry {
    pub fn tagged(tag: &str, text: impl Into<String>) -> Self {
        Self { tag: Some(tag.to_string()), text: Some(text.into()), ..Self::default() }
    }

    pub fn containing(needle: &str, text: impl Into<String>) -> Self {
        Self { contains: Some(needle.to_string()), text: Some(text.into()), ..Self::default() }
    }

    pub fn with_tokens(mut self, tokens_in: u64, tokens_out: u64) -> Self {
        self.tokens_in = Some(tokens_in);
        self.tokens_out = Some(tokens_out);
        self
    }

    fn matches(&self, req: &ChatRequest) -> bool {
        let tag_ok = match &self.tag {
            None => true,
            Some(t) => match t.strip_suffix('*') {
                Some(prefix) => req.tag.starts_with(prefix),
                None => *t == req.tag,
            },
        };
        let text_ok = match &self.contains {
            None => true,
            Some(needle) => req.user_text.contains(needle.as_str()) || req.system_text.contains(needle.as_str()),
        };
        tag_ok && text_ok
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub entries: Vec<MockEntry>,
}

impl MockScript {
    pub fn from_entries(entries: Vec<MockEntry>) -> Self {
        Self { entries }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Malformed {
            what: "mock script".into(),
            detail: format!("{}: {e}", path.display()),
        })?;
        serde_json::from_str(&text).map_err(|e| LlmError::Malformed { what: "mock script".into(), detail: e.to_string() })
    }
}

/// What a programmatic responder returns.
#[derive(Debug, Clone, PartialEq)]
pub struct MockReply {
    pub text: String,
    pub tokens_in: Option<u64>,
    pub tokens_out: Option<u64>,
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), tokens_in: None, tokens_out: None }
    }
}

/// One answered call, as recorded by the mock.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub tag: String,
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

type Responder = Box<dyn Fn(&ChatRequest) -> Option<MockReply> + Send + Sync>;

struct State {
    counters: Vec<usize>,
    log: Vec<MockCall>,
}

pub struct MockProvider {
    script: MockScript,
    responders: Vec<Responder>,
    seed: u64,
    state: Mutex<State>,
}

impl MockProvider {
    pub fn new(script: MockScript, seed: u64) -> Self {
        let n = script.entries.len();
        Self { script, responders: Vec::new(), seed, state: Mutex::new(State { counters: vec![0; n], log: Vec::new() }) }
    }

    /// A provider answering only through `responder`.
    pub fn from_fn(responder: impl Fn(&ChatRequest) -> Option<MockReply> + Send + Sync + 'static) -> Self {
        Self::new(MockScript::default(), 0).with_responder(responder)
    }

    /// Adds a responder consulted when no script entry matches.
    pub fn with_responder(mut self, responder: impl Fn(&ChatRequest) -> Option<MockReply> + Send + Sync + 'static) -> Self {
        self.responders.push(Box::new(responder));
        self
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.state.lock().expect("mock state poisoned").log.clone()
    }

    pub fn token_totals(&self) -> (u64, u64) {
        self.calls().iter().fold((0, 0), |(i, o), c| (i + c.tokens_in, o + c.tokens_out))
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut state = self.state.lock().expect("mock state poisoned");
        let estimated_in = estimate_tokens(&request.system_text) + estimate_tokens(&request.user_text);

        let (text, tokens_in, tokens_out, latency_ms) =
            if let Some((i, entry)) = self.script.entries.iter().enumerate().find(|(_, e)| e.matches(request)) {
                let text = if entry.texts.is_empty() {
                    entry.text.clone().unwrap_or_default()
                } else {
                    let n = entry.texts.len();
                    let k = (self.seed as usize % n + state.counters[i]) % n;
                    entry.texts[k].clone()
                };
                state.counters[i] += 1;
                let out = entry.tokens_out.unwrap_or_else(|| estimate_tokens(&text));
                (text, entry.tokens_in.unwrap_or(estimated_in), out, entry.latency_ms)
            } else if let Some(reply) = self.responders.iter().find_map(|r| r(request)) {
                let out = reply.tokens_out.unwrap_or_else(|| estimate_tokens(&reply.text));
                (reply.text, reply.tokens_in.unwrap_or(estimated_in), out, 0)
            } else {
                return Err(LlmError::EmptyResponse(request.tag.clone()));
            };

        state.log.push(MockCall { tag: request.tag.clone(), text: text.clone(), tokens_in, tokens_out });
        Ok(ChatResponse { text, tokens_in, tokens_out, provider: "mock".into(), latency_ms })
    }
}

/// Feature keys a prompt asks for, read from its `Keys: [...]` line.
pub fn requested_keys(prompt: &str) -> Option<Vec<String>> {
    let line = prompt.lines().rev().find_map(|l| l.trim().strip_prefix("Keys:"))?;
    serde_json::from_str(line.trim()).ok()
}

/// Number of configurations a prompt asks for, read from its `Count:` line.
pub fn requested_count(prompt: &str) -> Option<usize> {
    prompt.lines().rev().find_map(|l| l.trim().strip_prefix("Count:")).and_then(|c| c.trim().parse().ok())
}
