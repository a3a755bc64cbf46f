#![allow(dead_code)]

use warmstart_core::data::{parse_dataset, Dataset};

pub fn toy(name: &str) -> Dataset {
    warmstart_core::data::load_dataset(format!("{}/data/datasets/{name}.csv", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// `side` x `side` grid over [0,1]^2 with one minimized objective `f(x, y)`.
pub fn grid_pool(side: usize, f: impl Fn(f64, f64) -> f64) -> Dataset {
    let mut csv = String::from("x,y,Loss-\n");
    for i in 0..side {
        for j in 0..side {
            let (x, y) = (i as f64 / (side - 1) as f64, j as f64 / (side - 1) as f64);
            csv.push_str(&format!("{x},{y},{}\n", f(x, y)));
        }
    }
    parse_dataset("grid", &csv).unwrap()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warmstart_core::data::FeatureDomain;
use warmstart_core::llm::{MockProvider, MockReply};

fn random_value(ds: &Dataset, fi: usize, rng: &mut ChaCha8Rng) -> serde_json::Value {
    match &ds.features[fi].domain {
        FeatureDomain::Numeric { lo, hi } => {
            let span = (hi - lo).max(1.0);
            serde_json::json!(rng.random_range(lo - span * 0.5..=hi + span * 0.5))
        }
        FeatureDomain::Symbolic { categories } => serde_json::json!(categories[rng.random_range(0..categories.len())]),
    }
}

fn random_rule(ds: &Dataset, rng: &mut ChaCha8Rng) -> String {
    let numeric: Vec<usize> = (0..ds.features.len()).filter(|&i| ds.features[i].range().is_some()).collect();
    let symbolic: Vec<usize> = (0..ds.features.len()).filter(|&i| ds.features[i].range().is_none()).collect();
    let ops = ["<", "<=", "=", ">=", ">", "≤", "≥"];
    let op = ops[rng.random_range(0..ops.len())];
    match rng.random_range(0..6) {
        0 | 1 if !numeric.is_empty() => {
            let f = numeric[rng.random_range(0..numeric.len())];
            format!("{} {op} {}", ds.features[f].name, random_value(ds, f, rng))
        }
        2 if numeric.len() > 1 => {
            let a = numeric[rng.random_range(0..numeric.len())];
            let b = numeric[rng.random_range(0..numeric.len())];
            format!("{} {op} {}", ds.features[a].name.to_uppercase(), ds.features[b].name)
        }
        3 => {
            let f = rng.random_range(0..ds.features.len());
            let items: Vec<String> = (0..rng.random_range(1..4))
                .map(|_| random_value(ds, f, rng).to_string().trim_matches('"').to_string())
                .collect();
            format!("{} in {{{}}}", ds.features[f].name, items.join(", "))
        }
        4 if !symbolic.is_empty() => {
            let f = symbolic[rng.random_range(0..symbolic.len())];
            format!("{} = {}", ds.features[f].name, random_value(ds, f, rng).as_str().unwrap())
        }
        _ => ["gpu_count <= 4", "keep latency low", "threads !=", "x in ("][rng.random_range(0..4)].to_string(),
    }
}

fn random_configs(ds: &Dataset, n: usize, rng: &mut ChaCha8Rng) -> String {
    let objs: Vec<serde_json::Value> = (0..n)
        .map(|_| {
            let mut o = serde_json::Map::new();
            for fi in 0..ds.features.len() {
                if rng.random_bool(0.95) {
                    o.insert(ds.features[fi].name.clone(), random_value(ds, fi, rng));
                }
            }
            serde_json::Value::Object(o)
        })
        .collect();
    format!("Proposed:\n```json\n{}\n```\n", serde_json::to_string_pretty(&objs).unwrap())
}

/// A provider that answers every pipeline stage with randomized, often
/// rule-breaking content: out-of-range values, contradictory or
/// unparseable rules, unhelpful critics and repairs that do not repair.
pub fn fault_injected_provider(ds: &Dataset, seed: u64) -> MockProvider {
    let ds = ds.clone();
    let rng = Mutex::new(ChaCha8Rng::seed_from_u64(seed));
    MockProvider::from_fn(move |req| {
        let mut rng = rng.lock().unwrap();
        let rng = &mut *rng;
        let text = match req.tag.as_str() {
            "amp.stage1" => {
                let k = rng.random_range(3..=5.min(ds.features.len()));
                let names: Vec<&str> = rand::seq::index::sample(rng, ds.features.len(), k)
                    .into_iter()
                    .map(|i| ds.features[i].name.as_str())
                    .collect();
                format!("```json\n{}\n```", serde_json::json!({"ranked_features": names, "tradeoffs": ["speed vs memory"]}))
            }
            "amp.stage2" => {
                let hard: Vec<String> = (0..rng.random_range(0..8)).map(|_| random_rule(&ds, rng)).collect();
                format!("```json\n{}\n```", serde_json::json!({"hard": hard, "soft": ["prefer defaults"]}))
            }
            "amp.stage4" => "```json\n[{\"index\": 1, \"consistent\": true, \"note\": \"looks fine\"}]\n```".to_string(),
            "amp.stage4.repair" if rng.random_bool(0.3) => "I could not revise these.".to_string(),
            _ => {
                let n = warmstart_core::llm::mock::requested_count(&req.user_text).unwrap_or(4);
                random_configs(&ds, n, rng)
            }
        };
        Some(MockReply::text(text))
    })
}

/// Answers every generation prompt with the pool's best row, restricted to
/// the keys the prompt asks for.
pub fn projected_best_provider(ds: &Dataset) -> MockProvider {
    let ds = ds.clone();
    let (best, _) = warmstart_core::metrics::pool_optimum(&ds);
    MockProvider::from_fn(move |req| {
        let keys = warmstart_core::llm::mock::requested_keys(&req.user_text)?;
        let n = warmstart_core::llm::mock::requested_count(&req.user_text).unwrap_or(1);
        let mut obj = serde_json::Map::new();
        for k in keys {
            let fi = ds.feature_index(&k)?;
            obj.insert(k, serde_json::to_value(&ds.rows[best].features[fi]).unwrap());
        }
        let arr = vec![serde_json::Value::Object(obj); n];
        Some(MockReply::text(format!("```json\n{}\n```", serde_json::to_string(&arr).unwrap())))
    })
}
