//! Univariate tree-structured Parzen scouting over the labeled pool.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{HkmaConfig, HkmaError};
use crate::baselines::sample_rows;
use crate::data::{nearest_row_among, Configuration, Dataset, FeatureDomain, Value};
use crate::metrics::row_chebyshev;

/// Random evaluations before the Parzen models take over.
pub const STARTUP_EVALUATIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoutEval {
    pub row: usize,
    pub config: Configuration,
    pub chebyshev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoutResult {
    /// In evaluation order.
    pub evaluated: Vec<ScoutEval>,
    /// Indices into `evaluated`.
    pub best: Vec<usize>,
    pub rest: Vec<usize>,
}

impl ScoutResult {
    pub fn min_chebyshev(&self) -> f64 {
        self.evaluated.iter().map(|e| e.chebyshev).fold(f64::INFINITY, f64::min)
    }
}

/// `max(1, floor(gamma * m))`.
pub fn good_count(gamma: f64, m: usize) -> usize {
    ((gamma * m as f64).floor() as usize).max(1)
}

/// Splits evaluation indices into the top `good_count` by Chebyshev (ties
/// to the earlier evaluation) and the rest, both in evaluation order.
pub fn quantile_split(scores: &[f64], gamma: f64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let k = good_count(gamma, scores.len()).min(scores.len());
    let mut good: Vec<usize> = order[..k].to_vec();
    let mut bad: Vec<usize> = order[k..].to_vec();
    good.sort_unstable();
    bad.sort_unstable();
    (good, bad)
}

#[derive(Debug, Clone)]
enum Parzen {
    Numeric { centers: Vec<f64>, bandwidth: f64, lo: f64, hi: f64 },
    Symbolic { probs: Vec<f64>, categories: Vec<String> },
}

impl Parzen {
    fn fit(dataset: &Dataset, fi: usize, values: &[&Value]) -> Self {
        match &dataset.features[fi].domain {
            FeatureDomain::Numeric { lo, hi } => {
                let xs: Vec<f64> = values.iter().filter_map(|v| v.as_f64()).collect();
                let n = xs.len().max(1) as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                let bandwidth = (1.06 * sd * n.powf(-0.2)).max(0.01 * (hi - lo)).max(1e-12);
                Parzen::Numeric { centers: xs, bandwidth, lo: *lo, hi: *hi }
            }
            FeatureDomain::Symbolic { categories } => {
                let k = categories.len() as f64;
                let probs = categories
                    .iter()
                    .map(|c| (values.iter().filter(|v| v.as_str() == Some(c)).count() as f64 + 1.0) / (values.len() as f64 + k))
                    .collect();
                Parzen::Symbolic { probs, categories: categories.clone() }
            }
        }
    }

    fn log_density(&self, v: &Value) -> f64 {
        match self {
            Parzen::Numeric { centers, bandwidth, .. } => {
                let x = v.as_f64().unwrap_or(0.0);
                let h = *bandwidth;
                let dens = centers
                    .iter()
                    .map(|c| (-(x - c).powi(2) / (2.0 * h * h)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt()))
                    .sum::<f64>()
                    / centers.len().max(1) as f64;
                dens.max(1e-300).ln()
            }
            Parzen::Symbolic { probs, categories } => {
                let i = categories.iter().position(|c| Some(c.as_str()) == v.as_str());
                i.map_or(f64::MIN_POSITIVE.ln(), |i| probs[i].ln())
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match self {
            Parzen::Numeric { centers, bandwidth, lo, hi } => {
                if centers.is_empty() {
                    return Value::Num(rng.random_range(*lo..=*hi));
                }
                let c = centers[rng.random_range(0..centers.len())];
                let x = Normal::new(c, *bandwidth).expect("positive bandwidth").sample(rng);
                Value::Num(x.clamp(*lo, *hi))
            }
            Parzen::Symbolic { probs, categories } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (p, c) in probs.iter().zip(categories) {
                    acc += p;
                    if u < acc {
                        return Value::Sym(c.clone());
                    }
                }
                Value::Sym(categories.last().expect("non-empty categories").clone())
            }
        }
    }
}

fn evaluate(dataset: &Dataset, row: usize) -> ScoutEval {
    ScoutEval { row, config: dataset.row_config(row), chebyshev: row_chebyshev(&dataset.rows[row], dataset) }
}

fn finish(evaluated: Vec<ScoutEval>, gamma: f64) -> ScoutResult {
    let scores: Vec<f64> = evaluated.iter().map(|e| e.chebyshev).collect();
    let (best, rest) = quantile_split(&scores, gamma);
    ScoutResult { evaluated, best, rest }
}

/// Spends exactly `cfg.b_scout` pool label lookups.
pub fn tpe_scout<R: Rng + ?Sized>(dataset: &Dataset, cfg: &HkmaConfig, rng: &mut R) -> Result<ScoutResult, HkmaError> {
    cfg.validate()?;
    if dataset.rows.len() < cfg.b_scout {
        return Err(HkmaError::PoolTooSmall { needed: cfg.b_scout, available: dataset.rows.len() });
    }
    let startup = STARTUP_EVALUATIONS.min(cfg.b_scout);
    let mut evaluated: Vec<ScoutEval> = sample_rows(dataset, startup, rng)?.into_iter().map(|r| evaluate(dataset, r)).collect();
    let mut taken = vec![false; dataset.rows.len()];
    for e in &evaluated {
        taken[e.row] = true;
    }

    while evaluated.len() < cfg.b_scout {
        let scores: Vec<f64> = evaluated.iter().map(|e| e.chebyshev).collect();
        let (good, bad) = quantile_split(&scores, cfg.gamma);
        let models: Vec<(Parzen, Parzen)> = (0..dataset.features.len())
            .map(|fi| {
                let pick = |idx: &[usize]| idx.iter().map(|&i| &dataset.rows[evaluated[i].row].features[fi]).collect::<Vec<_>>();
                (Parzen::fit(dataset, fi, &pick(&good)), Parzen::fit(dataset, fi, &pick(&bad)))
            })
            .collect();

        let mut best: Option<(f64, Configuration)> = None;
        for _ in 0..cfg.candidates {
            let mut cand = Configuration::new();
            let mut score = 0.0;
            for (fi, (l, g)) in models.iter().enumerate() {
                let v = l.sample(rng);
                score += l.log_density(&v) - g.log_density(&v);
                cand.assignments.insert(dataset.features[fi].name.clone(), v);
            }
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, cand));
            }
        }
        let (_, cand) = best.expect("at least one candidate");
        let next = nearest_row_among(&cand, dataset, |i| !taken[i])?.index;
        taken[next] = true;
        evaluated.push(evaluate(dataset, next));
    }
    Ok(finish(evaluated, cfg.gamma))
}

/// Same budget, uniformly random rows: the comparison point for scouting.
/// Draws its first rows exactly as [`tpe_scout`] does, so equal seeds
/// give paired runs that differ only after the startup phase.
pub fn random_scout<R: Rng + ?Sized>(dataset: &Dataset, cfg: &HkmaConfig, rng: &mut R) -> Result<ScoutResult, HkmaError> {
    cfg.validate()?;
    if dataset.rows.len() < cfg.b_scout {
        return Err(HkmaError::PoolTooSmall { needed: cfg.b_scout, available: dataset.rows.len() });
    }
    let mut rows = sample_rows(dataset, STARTUP_EVALUATIONS.min(cfg.b_scout), rng)?;
    let mut rest: Vec<usize> = (0..dataset.rows.len()).filter(|r| !rows.contains(r)).collect();
    while rows.len() < cfg.b_scout {
        rows.push(rest.swap_remove(rng.random_range(0..rest.len())));
    }
    Ok(finish(rows.into_iter().map(|r| evaluate(dataset, r)).collect(), cfg.gamma))
}
