//! A prompt-driven stand-in for a real model, used when no script entry
//! matches. It reads the feature metadata and any `Rule:` lines out of the
//! prompt, samples configurations inside the ranges those rules leave open,
//! and answers the analysis, constraint and critic stages with plausible
//! JSON. Replies are a pure function of (seed, tag, prompt).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};

use super::mock::{requested_count, requested_keys, MockReply};
use super::ChatRequest;

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Numeric { lo: f64, hi: f64 },
    Symbolic(Vec<String>),
}

/// Reads `- name (numeric, range [lo, hi]), ...` and
/// `- name (symbolic, one of a | b), ...` lines.
pub fn parse_metadata(prompt: &str) -> BTreeMap<String, Domain> {
    let mut out = BTreeMap::new();
    for line in prompt.lines() {
        let Some(rest) = line.trim().strip_prefix("- ") else { continue };
        let Some((name, spec)) = rest.split_once(" (") else { continue };
        if let Some(range) = spec.strip_prefix("numeric, range [") {
            let Some((lo, hi)) = range.split_once(']').and_then(|(r, _)| r.split_once(", ")) else { continue };
            if let (Ok(lo), Ok(hi)) = (lo.trim().parse(), hi.trim().parse()) {
                out.insert(name.to_string(), Domain::Numeric { lo, hi });
            }
        } else if let Some(cats) = spec.strip_prefix("symbolic, one of ") {
            let Some((cats, _)) = cats.split_once(')') else { continue };
            out.insert(name.to_string(), Domain::Symbolic(cats.split(" | ").map(str::to_string).collect()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleHint {
    Above(f64),
    Below(f64),
    Equal(String),
}

/// `Rule: <feature> should be higher than v | lower than v | equal to v`,
/// also `<= v` / `>= v`, anywhere in the prompt.
pub fn parse_rule_hints(prompt: &str) -> Vec<(String, RuleHint)> {
    let mut out = Vec::new();
    for line in prompt.lines() {
        let Some((_, rule)) = line.split_once("Rule: ") else { continue };
        let Some((feature, claim)) = rule.split_once(" should be ") else { continue };
        let claim = claim.trim().trim_end_matches('.');
        let num = |s: &str| s.trim().parse::<f64>().ok();
        let hint = if let Some(v) = claim.strip_prefix("higher than ").and_then(num) {
            RuleHint::Above(v)
        } else if let Some(v) = claim.strip_prefix("lower than ").and_then(num) {
            RuleHint::Below(v)
        } else if let Some(v) = claim.strip_prefix(">=").or(claim.strip_prefix("≥")).and_then(num) {
            RuleHint::Above(v)
        } else if let Some(v) = claim.strip_prefix("<=").or(claim.strip_prefix("≤")).and_then(num) {
            RuleHint::Below(v)
        } else if let Some(v) = claim.strip_prefix("equal to ") {
            RuleHint::Equal(v.trim().to_string())
        } else {
            continue;
        };
        out.push((feature.trim().to_string(), hint));
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticModel {
    pub seed: u64,
}

impl SyntheticModel {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng_for(&self, req: &ChatRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(req.tag.as_bytes());
        h.update([0]);
        h.update(req.user_text.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    pub fn respond(&self, req: &ChatRequest) -> Option<MockReply> {
        let mut rng = self.rng_for(req);
        let meta = parse_metadata(&req.user_text);
        let names: Vec<&String> = meta.keys().collect();
        let fenced = |j: Json| MockReply::text(format!("```json\n{j}\n```"));
        match req.tag.as_str() {
            "amp.stage1" if !names.is_empty() => {
                let mut ranked = names.clone();
                ranked.shuffle(&mut rng);
                ranked.truncate(ranked.len().clamp(1, 5));
                Some(fenced(json!({"ranked_features": ranked, "tradeoffs": ["the objectives conflict near the range edges"]})))
            }
            "amp.stage2" => {
                let hard: Vec<String> = meta
                    .iter()
                    .filter_map(|(n, d)| match d {
                        Domain::Numeric { lo, hi } if hi > lo => Some(format!("{n} <= {}", round3(lo + 0.9 * (hi - lo)))),
                        _ => None,
                    })
                    .take(2)
                    .collect();
                Some(fenced(json!({"hard": hard, "soft": ["prefer values near the median"]})))
            }
            "amp.stage4" => Some(fenced(json!([]))),
            "hdkp.bootstrap" => {
                let features = req.user_text.lines().find_map(|l| l.strip_prefix("Features: ")).unwrap_or_default();
                let statements: Vec<String> = features
                    .split(", ")
                    .filter(|f| !f.is_empty())
                    .take(3)
                    .map(|f| format!("Keep {f} within its documented range."))
                    .collect();
                Some(fenced(json!(statements)))
            }
            _ => self.configurations(req, &meta, &mut rng),
        }
    }

    fn configurations(&self, req: &ChatRequest, meta: &BTreeMap<String, Domain>, rng: &mut ChaCha8Rng) -> Option<MockReply> {
        let keys = requested_keys(&req.user_text)?;
        let n = requested_count(&req.user_text).unwrap_or(1);
        if meta.is_empty() {
            // repair prompts carry no metadata: hand the listed configurations back
            let echoed: Vec<Json> = req
                .user_text
                .lines()
                .filter_map(|l| l.split_once(". {").map(|(_, rest)| format!("{{{rest}")))
                .filter_map(|s| s.split(" violates:").next().and_then(|j| serde_json::from_str(j).ok()))
                .take(n)
                .collect();
            return Some(MockReply::text(format!("```json\n{}\n```", Json::Array(echoed))));
        }

        let mut bounds: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        let mut fixed: BTreeMap<&str, String> = BTreeMap::new();
        for (name, d) in meta {
            if let Domain::Numeric { lo, hi } = d {
                bounds.insert(name, (*lo, *hi));
            }
        }
        for (feature, hint) in parse_rule_hints(&req.user_text) {
            let Some((name, _)) = meta.get_key_value(&feature) else { continue };
            match hint {
                RuleHint::Above(v) => {
                    if let Some(b) = bounds.get_mut(name.as_str()) {
                        b.0 = b.0.max(v.min(b.1));
                    }
                }
                RuleHint::Below(v) => {
                    if let Some(b) = bounds.get_mut(name.as_str()) {
                        b.1 = b.1.min(v.max(b.0));
                    }
                }
                RuleHint::Equal(v) => {
                    fixed.insert(name, v);
                }
            }
        }

        let wants_score = req.user_text.contains("self_score");
        let objects: Vec<Json> = (0..n)
            .map(|_| {
                let mut o = serde_json::Map::new();
                for k in &keys {
                    let v = match (meta.get(k), fixed.get(k.as_str())) {
                        (Some(Domain::Numeric { .. }), Some(f)) => f.parse::<f64>().map(|x| json!(x)).unwrap_or(json!(f)),
                        (Some(Domain::Symbolic(_)), Some(f)) => json!(f),
                        (Some(Domain::Numeric { .. }), None) => {
                            let (lo, hi) = bounds[k.as_str()];
                            json!(round3(if hi > lo { rng.random_range(lo..=hi) } else { lo }))
                        }
                        (Some(Domain::Symbolic(cats)), None) => json!(cats[rng.random_range(0..cats.len())]),
                        (None, _) => continue,
                    };
                    o.insert(k.clone(), v);
                }
                if wants_score {
                    o.insert("self_score".into(), json!(round3(rng.random_range(0.0..=1.0))));
                }
                Json::Object(o)
            })
            .collect();
        Some(MockReply::text(format!("Here are the configurations.\n```json\n{}\n```", Json::Array(objects))))
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}
