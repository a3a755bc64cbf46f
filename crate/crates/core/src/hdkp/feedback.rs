//! Where expert replies come from: a scripted file, a simulated oracle
//! with pool access, or a human answering through the session API.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PendingQuery, QueryKind};
use crate::data::{Dataset, FeatureDomain, Value};
use crate::metrics::pool_optimum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    Scripted,
    Simulated,
    Interactive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Feedback {
    Reply(String),
    Timeout,
}

pub trait FeedbackSource: Send {
    fn kind(&self) -> FeedbackKind;
    /// Exactly one reply or a timeout per query.
    fn request(&mut self, query: &PendingQuery) -> Feedback;
}

/// Replies read in order. A leading `review:` line answers the Day-1 review;
/// without one the review is accepted as proposed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedSource {
    review: Option<String>,
    replies: VecDeque<String>,
}

impl ScriptedSource {
    pub fn new(review: Option<String>, replies: impl IntoIterator<Item = String>) -> Self {
        Self { review, replies: replies.into_iter().collect() }
    }

    /// One reply per non-blank line.
    pub fn parse(text: &str) -> Self {
        let mut lines: VecDeque<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        let review = match lines.front() {
            Some(l) if l.to_ascii_lowercase().starts_with("review:") => lines.pop_front().map(|l| l["review:".len()..].trim().to_string()),
            _ => None,
        };
        Self { review, replies: lines }
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn remaining(&self) -> usize {
        self.replies.len()
    }
}

impl FeedbackSource for ScriptedSource {
    fn kind(&self) -> FeedbackKind {
        FeedbackKind::Scripted
    }

    fn request(&mut self, query: &PendingQuery) -> Feedback {
        match query.kind {
            QueryKind::Review => Feedback::Reply(self.review.take().unwrap_or_else(|| "all valid".into())),
            QueryKind::Failure => self.replies.pop_front().map_or(Feedback::Timeout, Feedback::Reply),
        }
    }
}

/// Oracle reply naming the failure's most deviating feature relative to
/// the pool optimum. Ties go to the earlier feature.
pub fn simulated_expert_reply(failure: &[(String, Value)], dataset: &Dataset) -> String {
    let (best, _) = pool_optimum(dataset);
    let target = &dataset.rows[best].features;
    let mut worst: Option<(f64, usize, &Value)> = None;
    for (name, v) in failure {
        let Some(fi) = dataset.feature_index(name) else { continue };
        let dev = match (&dataset.features[fi].domain, v, &target[fi]) {
            (FeatureDomain::Numeric { lo, hi }, Value::Num(a), Value::Num(b)) => {
                if hi > lo {
                    (a - b).abs() / (hi - lo)
                } else {
                    0.0
                }
            }
            (_, a, b) => f64::from(u8::from(a != b)),
        };
        let better = match worst {
            None => true,
            Some((d, i, _)) => dev > d || (dev == d && fi < i),
        };
        if better {
            worst = Some((dev, fi, v));
        }
    }
    match worst {
        Some((dev, fi, v)) if dev > 1e-12 => {
            let name = &dataset.features[fi].name;
            match (v, &target[fi]) {
                (Value::Num(a), Value::Num(b)) if b > a => format!("Rule: {name} should be higher than {a}"),
                (Value::Num(a), Value::Num(_)) => format!("Rule: {name} should be lower than {a}"),
                (_, b) => format!("Rule: {name} should be equal to {b}"),
            }
        }
        _ => "Rule: configuration is near-optimal; no correction".into(),
    }
}

/// Simulated expert: accepts the review, then answers every failure with
/// [`simulated_expert_reply`].
#[derive(Debug, Clone)]
pub struct SimulatedSource {
    dataset: Dataset,
}

impl SimulatedSource {
    pub fn new(dataset: Dataset) -> Self {
        Self { dataset }
    }
}

impl FeedbackSource for SimulatedSource {
    fn kind(&self) -> FeedbackKind {
        FeedbackKind::Simulated
    }

    fn request(&mut self, query: &PendingQuery) -> Feedback {
        match (&query.kind, &query.failure) {
            (QueryKind::Failure, Some(f)) => {
                let pairs: Vec<(String, Value)> = f.features.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                Feedback::Reply(simulated_expert_reply(&pairs, &self.dataset))
            }
            _ => Feedback::Reply("all valid".into()),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PostError {
    #[error("reply text is empty")]
    EmptyReply,
    #[error("iteration {got} is not awaiting feedback (pending: {pending:?})")]
    IterationMismatch { got: usize, pending: Option<usize> },
}

#[derive(Debug, Default)]
struct Slot {
    pending: Option<PendingQuery>,
    reply: Option<(usize, String)>,
    answered: BTreeSet<usize>,
}

/// Single-producer (API) / single-consumer (session) reply box.
#[derive(Debug, Default)]
pub struct Mailbox {
    slot: Mutex<Slot>,
    ready: Condvar,
}

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// The query currently waiting for a reply, if any.
    pub fn pending(&self) -> Option<PendingQuery> {
        self.slot.lock().expect("mailbox poisoned").pending.clone()
    }

    /// Delivers a reply; the first post for an iteration wins.
    pub fn post(&self, iteration: usize, text: &str) -> Result<(), PostError> {
        if text.trim().is_empty() {
            return Err(PostError::EmptyReply);
        }
        let mut slot = self.slot.lock().expect("mailbox poisoned");
        let pending = slot.pending.as_ref().map(|p| p.iteration);
        if pending != Some(iteration) || slot.answered.contains(&iteration) {
            return Err(PostError::IterationMismatch { got: iteration, pending });
        }
        slot.answered.insert(iteration);
        slot.reply = Some((iteration, text.trim().to_string()));
        self.ready.notify_all();
        Ok(())
    }

    fn open(&self, query: &PendingQuery) {
        let mut slot = self.slot.lock().expect("mailbox poisoned");
        slot.pending = Some(query.clone());
        if slot.reply.as_ref().is_some_and(|(i, _)| *i != query.iteration) {
            slot.reply = None;
        }
    }

    fn wait(&self, iteration: usize, timeout: Duration) -> Option<String> {
        let slot = self.slot.lock().expect("mailbox poisoned");
        let (mut slot, _) = self
            .ready
            .wait_timeout_while(slot, timeout, |s| !s.reply.as_ref().is_some_and(|(i, _)| *i == iteration))
            .expect("mailbox poisoned");
        let reply = slot.reply.take().map(|(_, t)| t);
        if reply.is_some() {
            slot.pending = None;
        }
        reply
    }
}

/// A human answering through the API; blocks until a reply or `timeout`.
#[derive(Debug, Clone)]
pub struct InteractiveSource {
    pub mailbox: std::sync::Arc<Mailbox>,
    pub timeout: Duration,
}

impl FeedbackSource for InteractiveSource {
    fn kind(&self) -> FeedbackKind {
        FeedbackKind::Interactive
    }

    fn request(&mut self, query: &PendingQuery) -> Feedback {
        self.mailbox.open(query);
        self.mailbox.wait(query.iteration, self.timeout).map_or(Feedback::Timeout, Feedback::Reply)
    }
}

/// Verdict on one proposed statement during the Day-1 review.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid,
    Modify(String),
}

/// Parses a review reply: one verdict per statement, separated by `;` or
/// newlines, optionally numbered (`2. invalid`). `all valid` accepts
/// everything; missing verdicts default to valid.
pub fn parse_review(reply: &str, statements: usize) -> Vec<Verdict> {
    let mut out = vec![Verdict::Valid; statements];
    if reply.trim().eq_ignore_ascii_case("all valid") {
        return out;
    }
    let parts = reply.split([';', '\n']).map(str::trim).filter(|p| !p.is_empty());
    for (k, part) in parts.enumerate() {
        let (idx, body) = match part.split_once(['.', ':']) {
            Some((n, rest)) if n.trim().parse::<usize>().is_ok() => (n.trim().parse::<usize>().unwrap().wrapping_sub(1), rest.trim()),
            _ => (k, part),
        };
        if idx >= statements {
            continue;
        }
        let lower = body.to_ascii_lowercase();
        out[idx] = if lower.starts_with("invalid") {
            Verdict::Invalid
        } else if lower.starts_with("modify") {
            let text = body["modify".len()..].trim_start_matches([':', ' ']).trim();
            if text.is_empty() {
                Verdict::Valid
            } else {
                Verdict::Modify(text.to_string())
            }
        } else {
            Verdict::Valid
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn review_grammar() {
        assert_eq!(parse_review("all valid", 2), vec![Verdict::Valid, Verdict::Valid]);
        assert_eq!(
            parse_review("valid; invalid; Modify: threads should be <= 8", 3),
            vec![Verdict::Valid, Verdict::Invalid, Verdict::Modify("threads should be <= 8".into())]
        );
        assert_eq!(parse_review("2. invalid", 3), vec![Verdict::Valid, Verdict::Invalid, Verdict::Valid]);
        assert_eq!(parse_review("9: invalid", 2), vec![Verdict::Valid, Verdict::Valid]);
    }

    #[test]
    fn scripted_file_splits_review_line() {
        let s = ScriptedSource::parse("review: valid; invalid\n\nfirst\nsecond\n");
        assert_eq!(s.review.as_deref(), Some("valid; invalid"));
        assert_eq!(s.remaining(), 2);
        assert_eq!(ScriptedSource::parse("a\nb\n").review, None);
    }
}
