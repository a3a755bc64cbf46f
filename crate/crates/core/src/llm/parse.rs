use serde_json::Value as Json;

use super::LlmError;
use crate::data::{Configuration, Dataset, Value};

/// Contents of every ``` fenced block, in order of appearance.
pub fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // skip the info string (e.g. `json`) up to the end of the line
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    blocks
}

/// First fenced block that parses as JSON and satisfies `accept`.
pub fn first_fenced_json(text: &str, accept: impl Fn(&Json) -> bool) -> Option<Json> {
    fenced_blocks(text)
        .into_iter()
        .filter_map(|b| serde_json::from_str::<Json>(b.trim()).ok())
        .find(|j| accept(j))
}

/// Which features each parsed configuration must carry.
#[derive(Debug, Clone, PartialEq)]
pub enum Arity {
    Full,
    Subset(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedBatch {
    pub configs: Vec<Configuration>,
    /// Optional `self_score` the model attached to each configuration.
    pub self_scores: Vec<Option<f64>>,
    /// Values clamped, re-cased or filled in from the feature median/mode.
    pub repairs: usize,
    /// Objects rejected outright (unknown category, non-numeric value).
    pub dropped: usize,
}

/// Extracts configurations from the first fenced JSON array of objects.
///
/// Keys are feature names; keys outside the requested arity are ignored,
/// missing features are filled with the feature's median or mode, numeric
/// values are clamped into range, and objects holding an unknown category
/// or a non-numeric value for a numeric feature are dropped.
pub fn parse_configurations(text: &str, dataset: &Dataset, arity: &Arity) -> Result<ParsedBatch, LlmError> {
    let array = first_fenced_json(text, |j| j.as_array().is_some_and(|a| a.iter().any(Json::is_object)))
        .ok_or(LlmError::NoParsableBlock)?;
    let objects: Vec<&serde_json::Map<String, Json>> = array.as_array().unwrap().iter().filter_map(Json::as_object).collect();

    let wanted: Vec<&str> = match arity {
        Arity::Full => dataset.feature_names(),
        Arity::Subset(names) => names.iter().map(String::as_str).collect(),
    };
    let mut batch = ParsedBatch::default();
    'objects: for obj in &objects {
        let mut config = Configuration::new();
        let mut repairs = 0;
        for name in &wanted {
            let Some(spec) = dataset.feature(name) else {
                continue 'objects;
            };
            let proposed = obj
                .get(*name)
                .or_else(|| obj.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v))
                .and_then(json_to_value);
            let value = match proposed {
                Some(v) => v,
                None => {
                    repairs += 1;
                    spec.median_or_mode.clone()
                }
            };
            match config.assign(dataset, name, &value) {
                Ok(repaired) => repairs += usize::from(repaired),
                Err(_) => {
                    batch.dropped += 1;
                    continue 'objects;
                }
            }
        }
        batch.repairs += repairs;
        batch.self_scores.push(obj.get("self_score").and_then(Json::as_f64));
        batch.configs.push(config);
    }
    if batch.configs.is_empty() {
        return Err(LlmError::AllCandidatesInvalid(objects.len()));
    }
    Ok(batch)
}

fn json_to_value(j: &Json) -> Option<Value> {
    match j {
        Json::Number(n) => n.as_f64().map(Value::Num),
        Json::String(s) => Some(Value::Sym(s.clone())),
        Json::Bool(b) => Some(Value::Sym(b.to_string())),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_dataset;

    fn ds() -> Dataset {
        parse_dataset("t", "threads,mode,Latency-\n1,fast,5\n8,slow,3\n4,fast,4\n").unwrap()
    }

    #[test]
    fn parses_two_valid_objects() {
        let text = "Here you go:\n```json\n[{\"threads\": 2, \"mode\": \"fast\"}, {\"threads\": 6, \"mode\": \"slow\", \"self_score\": 0.4}]\n```\n";
        let b = parse_configurations(text, &ds(), &Arity::Full).unwrap();
        assert_eq!(b.configs.len(), 2);
        assert_eq!(b.repairs, 0);
        assert_eq!(b.self_scores, vec![None, Some(0.4)]);
        assert_eq!(b.configs[1].get("mode"), Some(&Value::Sym("slow".into())));
    }

    #[test]
    fn prose_without_block_fails() {
        assert!(matches!(parse_configurations("threads should be 4", &ds(), &Arity::Full), Err(LlmError::NoParsableBlock)));
    }

    #[test]
    fn out_of_range_value_is_clamped() {
        let b = parse_configurations("```\n[{\"threads\": 64, \"mode\": \"fast\"}]\n```", &ds(), &Arity::Full).unwrap();
        assert_eq!(b.configs[0].get("threads"), Some(&Value::Num(8.0)));
        assert_eq!(b.repairs, 1);
    }

    #[test]
    fn unknown_category_dropped_and_all_invalid_errors() {
        let text = "```json\n[{\"threads\": 2, \"mode\": \"warp\"}, {\"threads\": 3, \"mode\": \"fast\"}]\n```";
        let b = parse_configurations(text, &ds(), &Arity::Full).unwrap();
        assert_eq!((b.configs.len(), b.dropped), (1, 1));
        let bad = "```json\n[{\"threads\": 2, \"mode\": \"warp\"}]\n```";
        assert!(matches!(parse_configurations(bad, &ds(), &Arity::Full), Err(LlmError::AllCandidatesInvalid(1))));
    }

    #[test]
    fn subset_arity_ignores_extra_keys_and_fills_missing() {
        let text = "```json\n[{\"threads\": 2, \"mode\": \"slow\"}, {}]\n```";
        let b = parse_configurations(text, &ds(), &Arity::Subset(vec!["threads".into()])).unwrap();
        assert_eq!(b.configs.len(), 2);
        assert!(b.configs.iter().all(|c| c.len() == 1));
        assert_eq!(b.configs[1].get("threads"), Some(&Value::Num(4.0)));
        assert_eq!(b.repairs, 1);
    }

    #[test]
    fn skips_non_array_blocks() {
        let text = "```\nnot json\n```\n```json\n{\"a\":1}\n```\n```json\n[{\"threads\": 1, \"mode\": \"fast\"}]\n```";
        assert_eq!(parse_configurations(text, &ds(), &Arity::Full).unwrap().configs.len(), 1);
    }
}
