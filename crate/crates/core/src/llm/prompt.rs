//! Prompt templates with `{slot}` substitution, and the shared fragments
//! (feature metadata, labeled examples, response format) every strategy
//! renders into them.
//!
//! `{{` and `}}` produce literal braces. Any other `{name}` with an
//! identifier inside must be supplied at render time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::LlmError;
use crate::data::{Configuration, Dataset, FeatureDomain};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Self { name: name.into(), body: body.into() }
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn render_prompt(template: &PromptTemplate, slots: &[(&str, &str)]) -> Result<String, LlmError> {
    let body = &template.body;
    let mut out = String::with_capacity(body.len() * 2);
    let mut i = 0;
    while i < body.len() {
        let rest = &body[i..];
        if rest.starts_with("{{") {
            out.push('{');
            i += 2;
        } else if rest.starts_with("}}") {
            out.push('}');
            i += 2;
        } else if rest.starts_with('{') {
            match rest[1..].find('}').map(|end| &rest[1..1 + end]) {
                Some(name) if is_ident(name) => {
                    let value = slots.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).ok_or_else(|| LlmError::MissingSlot {
                        template: template.name.clone(),
                        slot: name.to_string(),
                    })?;
                    out.push_str(value);
                    i += name.len() + 2;
                }
                _ => {
                    out.push('{');
                    i += 1;
                }
            }
        } else {
            let ch = rest.chars().next().expect("non-empty");
            out.push(ch);
            i += ch.len_utf8();
        }
    }
    Ok(out)
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        [$(($name, include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/data/prompts/", $name, ".txt")))),*]
    };
}

const BUILTIN: [(&str, &str); 12] = builtin!(
    "system",
    "bs_llm",
    "amp_stage1",
    "amp_stage2",
    "amp_stage3",
    "amp_stage4",
    "amp_stage4_repair",
    "dapr_subspace",
    "dapr_final",
    "hkma",
    "hdkp_bootstrap",
    "hdkp_generate",
);

/// Named templates: the bundled defaults, optionally overridden by
/// `<name>.txt` files from a directory.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN.iter().map(|(n, b)| (n.to_string(), PromptTemplate::new(*n, *b))).collect(),
        }
    }

    pub fn with_overrides(dir: impl AsRef<Path>) -> Result<Self, LlmError> {
        let mut set = Self::builtin();
        for name in BUILTIN.iter().map(|(n, _)| *n) {
            let path = dir.as_ref().join(format!("{name}.txt"));
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|e| LlmError::Malformed {
                    what: "prompt template".into(),
                    detail: format!("{}: {e}", path.display()),
                })?;
                set.templates.insert(name.to_string(), PromptTemplate::new(name, body));
            }
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> &PromptTemplate {
        self.templates.get(name).unwrap_or_else(|| panic!("no template named `{name}`"))
    }

    pub fn render(&self, name: &str, slots: &[(&str, &str)]) -> Result<String, LlmError> {
        render_prompt(self.get(name), slots)
    }

    pub fn system(&self) -> &str {
        self.get("system").body.trim()
    }
}

/// `name (type, range), median m` lines in dataset order.
pub fn metadata_block(dataset: &Dataset) -> String {
    let mut s = String::new();
    for f in &dataset.features {
        match &f.domain {
            FeatureDomain::Numeric { lo, hi } => {
                let _ = writeln!(s, "- {} (numeric, range [{lo}, {hi}]), median {}", f.name, f.median_or_mode);
            }
            FeatureDomain::Symbolic { categories } => {
                let _ = writeln!(s, "- {} (symbolic, one of {}), mode {}", f.name, categories.join(" | "), f.median_or_mode);
            }
        }
    }
    s
}

pub fn objectives_line(dataset: &Dataset) -> String {
    dataset
        .objectives
        .iter()
        .map(|o| format!("{} ({})", o.name, if o.direction == crate::data::Direction::Minimize { "minimize" } else { "maximize" }))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Numbered example lines, each tagged with `label`.
pub fn examples_block(dataset: &Dataset, examples: &[(Configuration, String)]) -> String {
    let mut s = String::new();
    for (i, (c, label)) in examples.iter().enumerate() {
        let _ = writeln!(s, "Example {} [{label}]: {}", i + 1, c.to_json_ordered(dataset));
    }
    s
}

/// Response-format instructions, ending with machine-readable `Count:` and
/// `Keys:` lines.
pub fn format_block(n: usize, keys: &[&str]) -> String {
    format!(
        "Respond with a ```json fenced block containing a JSON array of exactly {n} objects. Each object maps every key listed below to a value inside that feature's range or category set.\nCount: {n}\nKeys: {}\n",
        serde_json::to_string(keys).expect("string list serializes")
    )
}
