//! Comparison methods: uniform random rows, GP-UCB over the pool, and the
//! few-shot Best/Rest prompt.

mod gp;

pub use gp::{encode_row, gp_ucb_select, gp_ucb_warm_start, median_pairwise_distance, ucb_argmax, GpModel, UcbConfig};

use rand::Rng;
use thiserror::Error;

use crate::data::{Configuration, DataError, Dataset};
use crate::llm::prompt::{examples_block, format_block, metadata_block, objectives_line};
use crate::llm::{generate_configurations, Arity, ChatRequest, Gateway, LlmError, TemplateSet, GENERATION_TEMPERATURE};
use crate::metrics::row_chebyshev;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("pool has {available} rows, {needed} needed")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("kernel matrix not positive definite even with jitter")]
    SingularKernel,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// `n` distinct row indices drawn uniformly.
pub fn sample_rows<R: Rng + ?Sized>(dataset: &Dataset, n: usize, rng: &mut R) -> Result<Vec<usize>, BaselineError> {
    if n == 0 {
        return Err(BaselineError::InvalidConfig("n must be at least 1".into()));
    }
    if dataset.rows.len() < n {
        return Err(BaselineError::PoolTooSmall { needed: n, available: dataset.rows.len() });
    }
    Ok(rand::seq::index::sample(rng, dataset.rows.len(), n).into_vec())
}

pub fn random_warm_start<R: Rng + ?Sized>(dataset: &Dataset, n: usize, rng: &mut R) -> Result<Vec<Configuration>, BaselineError> {
    Ok(sample_rows(dataset, n, rng)?.into_iter().map(|i| dataset.row_config(i)).collect())
}

/// A pool row shown to the model, with its outcome label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub row: usize,
    pub chebyshev: f64,
    pub label: String,
}

/// Draws `n` rows and labels the better half (by Chebyshev, ties to the
/// lower row index) `Best` and the rest `Rest`. Draw order is kept.
pub fn draw_best_rest<R: Rng + ?Sized>(dataset: &Dataset, n: usize, rng: &mut R) -> Result<Vec<LabeledExample>, BaselineError> {
    let rows = sample_rows(dataset, n, rng)?;
    let scores: Vec<f64> = rows.iter().map(|&i| row_chebyshev(&dataset.rows[i], dataset)).collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(rows[a].cmp(&rows[b])));
    let mut best = vec![false; rows.len()];
    for &k in order.iter().take(n.div_ceil(2)) {
        best[k] = true;
    }
    Ok(rows
        .iter()
        .zip(&scores)
        .zip(best)
        .map(|((&row, &chebyshev), b)| LabeledExample { row, chebyshev, label: if b { "Best" } else { "Rest" }.into() })
        .collect())
}

pub fn render_examples(dataset: &Dataset, examples: &[LabeledExample]) -> String {
    let pairs: Vec<(Configuration, String)> =
        examples.iter().map(|e| (dataset.row_config(e.row), e.label.clone())).collect();
    examples_block(dataset, &pairs)
}

pub const BS_LLM_TAG: &str = "bs_llm.generate";

pub fn bs_llm_prompt(dataset: &Dataset, examples: &[LabeledExample], n: usize, templates: &TemplateSet) -> Result<String, LlmError> {
    let names = dataset.feature_names();
    templates.render(
        "bs_llm",
        &[
            ("dataset", &dataset.name),
            ("objectives", &objectives_line(dataset)),
            ("metadata", &metadata_block(dataset)),
            ("examples", &render_examples(dataset, examples)),
            ("n", &n.to_string()),
            ("format", &format_block(n, &names)),
        ],
    )
}

/// Few-shot baseline: `n_examples` labeled rows, one completion asking for
/// `n` configurations.
pub fn bs_llm_warm_start<R: Rng + ?Sized>(
    dataset: &Dataset,
    n_examples: usize,
    n: usize,
    rng: &mut R,
    gateway: &mut Gateway,
    templates: &TemplateSet,
) -> Result<Vec<Configuration>, BaselineError> {
    let examples = draw_best_rest(dataset, n_examples, rng)?;
    let prompt = bs_llm_prompt(dataset, &examples, n, templates)?;
    let request = ChatRequest::new(BS_LLM_TAG, templates.system(), prompt, GENERATION_TEMPERATURE);
    Ok(generate_configurations(gateway, &request, dataset, &Arity::Full)?.configs)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::load_dataset;
    use crate::llm::{CallScope, MockEntry, MockProvider, MockScript};
    use crate::metrics::{pool_optimum, score_warm_starts};

    fn sphere() -> Dataset {
        load_dataset(concat!(env!("CARGO_MANIFEST_DIR"), "/data/datasets/toy_sphere.csv")).unwrap()
    }

    #[test]
    fn random_exhausts_pool_and_is_seeded() {
        let ds = sphere();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let all = random_warm_start(&ds, ds.rows.len(), &mut rng).unwrap();
        let mut idx: Vec<usize> = all.iter().map(|c| crate::data::nearest_row(c, &ds).unwrap().index).collect();
        idx.sort();
        assert_eq!(idx, (0..ds.rows.len()).collect::<Vec<_>>());
        let a = random_warm_start(&ds, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_warm_start(&ds, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            random_warm_start(&ds, ds.rows.len() + 1, &mut rng),
            Err(BaselineError::PoolTooSmall { .. })
        ));
    }

    #[test]
    fn best_rest_split_is_half_and_half() {
        let ds = sphere();
        let ex = draw_best_rest(&ds, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(ex.iter().filter(|e| e.label == "Best").count(), 2);
        let worst_best = ex.iter().filter(|e| e.label == "Best").map(|e| e.chebyshev).fold(0.0, f64::max);
        let best_rest = ex.iter().filter(|e| e.label == "Rest").map(|e| e.chebyshev).fold(f64::INFINITY, f64::min);
        assert!(worst_best <= best_rest);
    }

    #[test]
    fn bs_llm_prompt_has_two_best_two_rest_and_every_median() {
        let ds = sphere();
        let set = TemplateSet::builtin();
        let ex = draw_best_rest(&ds, 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let p = bs_llm_prompt(&ds, &ex, 4, &set).unwrap();
        assert_eq!(p.matches("[Best]").count(), 2);
        assert_eq!(p.matches("[Rest]").count(), 2);
        for f in &ds.features {
            assert!(p.contains(&f.name));
            assert!(p.contains(&format!("median {}", f.median_or_mode)), "{}", f.name);
        }
    }

    #[test]
    fn bs_llm_plumbs_the_best_row_through() {
        let ds = sphere();
        let (best, opt) = pool_optimum(&ds);
        let reply = format!("```json\n[{}]\n```", ds.row_config(best).to_json_ordered(&ds));
        let mock = Arc::new(MockProvider::new(MockScript::from_entries(vec![MockEntry::tagged(BS_LLM_TAG, reply)]), 0));
        let mut gw = Gateway::new(mock, CallScope::default());
        let configs =
            bs_llm_warm_start(&ds, 4, 4, &mut ChaCha8Rng::seed_from_u64(3), &mut gw, &TemplateSet::builtin()).unwrap();
        assert_eq!(score_warm_starts(&configs, &ds).unwrap().min_chebyshev, opt);
        assert_eq!(gw.calls(), 1);
    }
}
