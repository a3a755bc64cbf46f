use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_rows, BaselineError};
use crate::data::{Configuration, Dataset, FeatureDomain, Value};
use crate::metrics::row_chebyshev;

/// Min-max scaled numeric coordinates followed by one-of-K indicators for
/// symbolic features, in dataset feature order.
pub fn encode_row(dataset: &Dataset, values: &[Value]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for (spec, v) in dataset.features.iter().zip(values) {
        match &spec.domain {
            FeatureDomain::Numeric { lo, hi } => {
                let x = v.as_f64().unwrap_or(*lo);
                out.push(if hi > lo { (x - lo) / (hi - lo) } else { 0.0 });
            }
            FeatureDomain::Symbolic { categories } => {
                out.extend(categories.iter().map(|c| if v.as_str() == Some(c.as_str()) { 1.0 } else { 0.0 }));
            }
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median Euclidean distance over all point pairs; 1 when that is zero or
/// there are fewer than two points.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    let m = crate::data::ops_median(&d);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-8, 1e-7, 1e-6, 1e-5];

/// Exact GP regression with a squared-exponential kernel and a constant
/// mean equal to the training-target average.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// Diagonal jitter that was needed on top of the noise.
    pub jitter: f64,
    inputs: Vec<Vec<f64>>,
    mean: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GpModel {
    pub fn fit(
        inputs: Vec<Vec<f64>>,
        targets: &[f64],
        length_scale: f64,
        signal_variance: f64,
        noise_variance: f64,
    ) -> Result<Self, BaselineError> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(BaselineError::InvalidConfig("GP needs matching, non-empty inputs and targets".into()));
        }
        if !(length_scale > 0.0 && signal_variance > 0.0 && noise_variance >= 0.0) {
            return Err(BaselineError::InvalidConfig("GP hyperparameters out of range".into()));
        }
        let n = inputs.len();
        let mean = targets.iter().sum::<f64>() / n as f64;
        let kernel = DMatrix::from_fn(n, n, |i, j| se(&inputs[i], &inputs[j], length_scale, signal_variance));
        let y = DVector::from_iterator(n, targets.iter().map(|t| t - mean));
        for jitter in JITTER_LADDER {
            let mut k = kernel.clone();
            for i in 0..n {
                k[(i, i)] += noise_variance + jitter;
            }
            if let Some(chol) = Cholesky::new(k) {
                let alpha = chol.solve(&y);
                return Ok(Self { length_scale, signal_variance, noise_variance, jitter, inputs, mean, chol, alpha });
            }
        }
        Err(BaselineError::SingularKernel)
    }

    /// Posterior mean and (non-negative) variance at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|xi| se(xi, x, self.length_scale, self.signal_variance)),
        );
        let mu = self.mean + k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let var = (self.signal_variance - k.dot(&v)).max(0.0);
        (mu, var)
    }
}

fn se(a: &[f64], b: &[f64], length_scale: f64, signal_variance: f64) -> f64 {
    signal_variance * (-sq_dist(a, b) / (2.0 * length_scale * length_scale)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UcbConfig {
    pub kappa: f64,
    pub seed_size: usize,
    pub budget: usize,
    pub noise_variance: f64,
}

impl Default for UcbConfig {
    fn default() -> Self {
        Self { kappa: 2.0, seed_size: 4, budget: 4, noise_variance: 1e-6 }
    }
}

impl UcbConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.seed_size == 0 || self.budget < self.seed_size || self.kappa < 0.0 || self.noise_variance < 0.0 {
            return Err(BaselineError::InvalidConfig(format!(
                "need budget >= seed_size >= 1 and kappa, noise >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Candidate maximizing `mu + kappa * sigma`; ties go to the earliest
/// candidate.
pub fn ucb_argmax<'a>(model: &GpModel, candidates: impl IntoIterator<Item = (usize, &'a [f64])>, kappa: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, x) in candidates {
        let (mu, var) = model.predict(x);
        let score = mu + kappa * var.sqrt();
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((idx, score));
        }
    }
    best.map(|(i, _)| i)
}

/// Row indices labeled by GP-UCB, in acquisition order.
pub fn gp_ucb_select<R: Rng + ?Sized>(dataset: &Dataset, cfg: &UcbConfig, rng: &mut R) -> Result<Vec<usize>, BaselineError> {
    cfg.validate()?;
    if dataset.rows.len() < cfg.budget {
        return Err(BaselineError::PoolTooSmall { needed: cfg.budget, available: dataset.rows.len() });
    }
    let encoded: Vec<Vec<f64>> = dataset.rows.iter().map(|r| encode_row(dataset, &r.features)).collect();
    let length_scale = median_pairwise_distance(&encoded);
    // the GP maximizes, so it models the negated distance
    let target = |i: usize| -row_chebyshev(&dataset.rows[i], dataset);

    let mut labeled = sample_rows(dataset, cfg.seed_size, rng)?;
    let mut taken = vec![false; dataset.rows.len()];
    for &i in &labeled {
        taken[i] = true;
    }
    while labeled.len() < cfg.budget {
        let ys: Vec<f64> = labeled.iter().map(|&i| target(i)).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let variance = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).max(1e-4);
        let model = GpModel::fit(labeled.iter().map(|&i| encoded[i].clone()).collect(), &ys, length_scale, variance, cfg.noise_variance)?;
        let next = ucb_argmax(
            &model,
            (0..dataset.rows.len()).filter(|&i| !taken[i]).map(|i| (i, encoded[i].as_slice())),
            cfg.kappa,
        )
        .expect("pool larger than budget leaves candidates");
        taken[next] = true;
        labeled.push(next);
    }
    Ok(labeled)
}

pub fn gp_ucb_warm_start<R: Rng + ?Sized>(dataset: &Dataset, cfg: &UcbConfig, rng: &mut R) -> Result<Vec<Configuration>, BaselineError> {
    Ok(gp_ucb_select(dataset, cfg, rng)?.into_iter().map(|i| dataset.row_config(i)).collect())
}
