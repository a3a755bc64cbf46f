//! Three interactive operations for the browser page. Each takes and
//! returns JSON strings; the `*_json` functions are the plain-Rust cores
//! and the `#[wasm_bindgen]` wrappers turn errors into JS exceptions.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;
use warmstart_core::data::parse_dataset;
use warmstart_core::hkma::{random_scout, tpe_scout, HkmaConfig};
use warmstart_core::metrics::{pool_optimum, row_chebyshev};
use warmstart_core::stats::{scott_knott, ScottKnottConfig, TreatmentSample};

#[derive(Debug, Deserialize)]
struct RankInput {
    treatments: Vec<TreatmentInput>,
    #[serde(default)]
    baseline: Option<String>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct TreatmentInput {
    label: String,
    values: Vec<f64>,
}

/// `{"treatments": [{"label", "values"}], "baseline"?, "seed"?}` to a
/// Scott-Knott rank table.
pub fn rank_json(input: &str) -> Result<String, String> {
    let input: RankInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    if input.treatments.is_empty() {
        return Err("no treatments".into());
    }
    if let Some(t) = input.treatments.iter().find(|t| t.values.is_empty() || t.values.iter().any(|v| !v.is_finite())) {
        return Err(format!("treatment `{}` needs finite values", t.label));
    }
    let samples: Vec<TreatmentSample> = input.treatments.into_iter().map(|t| TreatmentSample::new(t.label, t.values)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
    let table = scott_knott(&samples, ScottKnottConfig::default(), input.baseline.as_deref(), &mut rng);
    serde_json::to_string(&table).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct Duel {
    pub tpe: Vec<f64>,
    pub random: Vec<f64>,
    pub tpe_median: f64,
    pub random_median: f64,
    pub tpe_wins: usize,
    pub ties: usize,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 0 {
        (s[m - 1] + s[m]) / 2.0
    } else {
        s[m]
    }
}

/// A `side x side` grid on the unit square whose single objective is the
/// distance to `(cx, cy)`.
fn cone_csv(side: usize, cx: f64, cy: f64) -> String {
    let mut s = String::from("x,y,Dist-\n");
    for i in 0..side {
        for j in 0..side {
            let (x, y) = (i as f64 / (side - 1) as f64, j as f64 / (side - 1) as f64);
            let _ = writeln!(s, "{x},{y},{}", ((x - cx).powi(2) + (y - cy).powi(2)).sqrt());
        }
    }
    s
}

/// TPE against random scouting on a sharp-optimum grid, paired by seed.
pub fn duel(cx: f64, cy: f64, seeds: u32, b_scout: usize) -> Result<Duel, String> {
    if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
        return Err("the optimum must lie in the unit square".into());
    }
    if seeds == 0 || seeds > 200 {
        return Err("seeds must be between 1 and 200".into());
    }
    let ds = parse_dataset("cone", &cone_csv(30, cx, cy)).map_err(|e| e.to_string())?;
    let cfg = HkmaConfig { b_scout, ..HkmaConfig::default() };
    let (mut tpe, mut random) = (Vec::new(), Vec::new());
    for seed in 0..u64::from(seeds) {
        let a = tpe_scout(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
        let b = random_scout(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
        tpe.push(a.min_chebyshev());
        random.push(b.min_chebyshev());
    }
    let tpe_wins = tpe.iter().zip(&random).filter(|(a, b)| a < b).count();
    let ties = tpe.iter().zip(&random).filter(|(a, b)| a == b).count();
    Ok(Duel { tpe_median: median(&tpe), random_median: median(&random), tpe, random, tpe_wins, ties })
}

pub fn duel_json(cx: f64, cy: f64, seeds: u32, b_scout: usize) -> Result<String, String> {
    serde_json::to_string(&duel(cx, cy, seeds, b_scout)?).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct Landscape {
    rows: Vec<f64>,
    optimum: usize,
    features: Vec<String>,
    objectives: Vec<String>,
    tier: String,
}

/// Chebyshev distance of every row of a pasted CSV pool.
pub fn landscape_json(csv: &str) -> Result<String, String> {
    let ds = parse_dataset("pasted", csv).map_err(|e| e.to_string())?;
    let out = Landscape {
        rows: ds.rows.iter().map(|r| row_chebyshev(r, &ds)).collect(),
        optimum: pool_optimum(&ds).0,
        features: ds.features.iter().map(|f| f.name.clone()).collect(),
        objectives: ds.objectives.iter().map(|o| o.name.clone()).collect(),
        tier: ds.tier.to_string(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn rank(input: &str) -> Result<String, JsValue> {
    rank_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn scout_duel(cx: f64, cy: f64, seeds: u32, b_scout: usize) -> Result<String, JsValue> {
    duel_json(cx, cy, seeds, b_scout).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn landscape(csv: &str) -> Result<String, JsValue> {
    landscape_json(csv).map_err(|e| JsValue::from_str(&e))
}
