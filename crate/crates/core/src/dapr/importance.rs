use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forest::{impurity_importance, ForestConfig};
use crate::data::{Dataset, FeatureDomain};
use crate::metrics::row_chebyshev;
use crate::stats::spearman;

/// Below this many samples MI and forest scores are mostly noise.
pub const RELIABLE_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub features: Vec<String>,
    pub spearman: Vec<f64>,
    pub mi: Vec<f64>,
    pub rf: Vec<f64>,
    pub ensemble: Vec<f64>,
    /// Feature names by decreasing ensemble score; ties keep dataset order.
    pub ranking: Vec<String>,
    /// All sampled targets were equal; every score is uniform.
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

/// Min-max scales to [0, 1]; a constant vector maps to zeros.
pub fn unit_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Normalizes the three raw score vectors, averages them and ranks.
pub fn ensemble(features: Vec<String>, spearman: &[f64], mi: &[f64], rf: &[f64]) -> ImportanceScores {
    let (s, m, r) = (unit_normalize(spearman), unit_normalize(mi), unit_normalize(rf));
    let ens: Vec<f64> = (0..features.len()).map(|i| (s[i] + m[i] + r[i]) / 3.0).collect();
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| ens[b].total_cmp(&ens[a]).then(a.cmp(&b)));
    ImportanceScores {
        ranking: order.iter().map(|&i| features[i].clone()).collect(),
        features,
        spearman: s,
        mi: m,
        rf: r,
        ensemble: ens,
        degenerate: false,
        warnings: Vec::new(),
    }
}

/// Numeric encoding of one feature column: raw values for numeric
/// features, the mean target of the row's category for symbolic ones.
fn encode_column(dataset: &Dataset, fi: usize, rows: &[usize], target: &[f64]) -> Vec<f64> {
    match &dataset.features[fi].domain {
        FeatureDomain::Numeric { .. } => rows.iter().map(|&r| dataset.rows[r].features[fi].as_f64().unwrap_or(0.0)).collect(),
        FeatureDomain::Symbolic { .. } => {
            let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for (k, &r) in rows.iter().enumerate() {
                let e = sums.entry(dataset.rows[r].features[fi].to_string()).or_default();
                e.0 += target[k];
                e.1 += 1;
            }
            rows.iter()
                .map(|&r| {
                    let (s, n) = sums[&dataset.rows[r].features[fi].to_string()];
                    s / n as f64
                })
                .collect()
        }
    }
}

fn equal_width_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    values.iter().map(|v| (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)).collect()
}

/// Plug-in mutual information (nats) between two discrete labelings.
pub fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *pa.entry(x).or_default() += 1.0;
        *pb.entry(y).or_default() += 1.0;
    }
    joint.iter().map(|(&(x, y), &c)| (c / n) * (c * n / (pa[&x] * pb[&y])).ln()).sum::<f64>().max(0.0)
}

/// Bin count for `n` samples: `min(4, floor(sqrt(n)))`, at least 1.
pub fn bin_count(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).clamp(1, 4)
}

/// Importance of every feature for the Chebyshev distance of `rows`.
pub fn importance_scores<R: Rng + ?Sized>(rows: &[usize], dataset: &Dataset, rng: &mut R) -> ImportanceScores {
    let features: Vec<String> = dataset.features.iter().map(|f| f.name.clone()).collect();
    let d = features.len();
    let target: Vec<f64> = rows.iter().map(|&r| row_chebyshev(&dataset.rows[r], dataset)).collect();
    let mut warnings = Vec::new();
    if rows.len() < RELIABLE_SAMPLES {
        warnings.push(format!(
            "importance from {} samples: mutual information and forest scores are statistically degenerate below {RELIABLE_SAMPLES}",
            rows.len()
        ));
    }
    let flat = target.iter().all(|t| (t - target[0]).abs() <= 1e-12);
    if rows.len() < 2 || flat {
        warnings.push("all sampled targets are equal; importance is uniform".into());
        let uniform = vec![1.0 / d as f64; d];
        return ImportanceScores {
            ranking: features.clone(),
            features,
            spearman: uniform.clone(),
            mi: uniform.clone(),
            rf: uniform.clone(),
            ensemble: uniform,
            degenerate: true,
            warnings,
        };
    }

    let columns: Vec<Vec<f64>> = (0..d).map(|fi| encode_column(dataset, fi, rows, &target)).collect();
    let rho: Vec<f64> = columns.iter().map(|c| spearman(c, &target).map(f64::abs).unwrap_or(0.0)).collect();

    let bins = bin_count(rows.len());
    let target_bins = equal_width_bins(&target, bins);
    let mi: Vec<f64> = (0..d)
        .map(|fi| {
            let labels = match &dataset.features[fi].domain {
                FeatureDomain::Numeric { .. } => equal_width_bins(&columns[fi], bins),
                FeatureDomain::Symbolic { categories } => rows
                    .iter()
                    .map(|&r| {
                        let v = dataset.rows[r].features[fi].as_str().unwrap_or_default();
                        categories.iter().position(|c| c == v).unwrap_or(0)
                    })
                    .collect(),
            };
            mutual_information(&labels, &target_bins)
        })
        .collect();

    let x: Vec<Vec<f64>> = (0..rows.len()).map(|k| columns.iter().map(|c| c[k]).collect()).collect();
    let rf = impurity_importance(&x, &target, &ForestConfig::default(), rng);

    let mut scores = ensemble(features, &rho, &mi, &rf);
    scores.warnings = warnings;
    scores
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn independent_columns_have_near_zero_mi() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<usize> = (0..5000).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<usize> = (0..5000).map(|_| rng.random_range(0..4)).collect();
        assert!(mutual_information(&a, &b) < 0.05);
        // identical labelings carry their full entropy, ln 4 here
        assert!((mutual_information(&a, &a) - 4f64.ln()).abs() < 0.01);
    }

    #[test]
    fn bins_follow_sample_size() {
        assert_eq!((bin_count(4), bin_count(8), bin_count(9), bin_count(100)), (2, 2, 3, 4));
    }

    proptest! {
        #[test]
        fn ranking_is_a_permutation(raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..10)) {
            let names: Vec<String> = (0..raw.len()).map(|i| format!("f{i}")).collect();
            let s = ensemble(names.clone(), &raw.iter().map(|r| r.0).collect::<Vec<_>>(), &raw.iter().map(|r| r.1).collect::<Vec<_>>(), &raw.iter().map(|r| r.2).collect::<Vec<_>>());
            let mut sorted = s.ranking.clone();
            sorted.sort();
            let mut expect = names;
            expect.sort();
            prop_assert_eq!(sorted, expect);
            prop_assert!(s.ensemble.iter().all(|e| (0.0..=1.0).contains(e)));
        }

        // min-max normalization absorbs positive affine rescaling of one method
        #[test]
        fn ranking_invariant_to_affine_rescaling(
            raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 2..10),
            scale in 0.01f64..100.0,
            shift in -10.0f64..10.0,
        ) {
            let names: Vec<String> = (0..raw.len()).map(|i| format!("f{i}")).collect();
            let (s, m, r): (Vec<f64>, Vec<f64>, Vec<f64>) =
                (raw.iter().map(|x| x.0).collect(), raw.iter().map(|x| x.1).collect(), raw.iter().map(|x| x.2).collect());
            let base = ensemble(names.clone(), &s, &m, &r);
            let scaled: Vec<f64> = m.iter().map(|x| x * scale + shift).collect();
            let moved = ensemble(names, &s, &scaled, &r);
            for (a, b) in base.ensemble.iter().zip(&moved.ensemble) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
