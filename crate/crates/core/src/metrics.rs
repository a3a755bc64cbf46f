//! Warm-start scoring: Chebyshev distance to the ideal point, set
//! diversity, and token/time cost accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{nearest_row, normalize_objective, Configuration, DataError, Dataset, FeatureDomain, ObjectiveSpec, Row, Value};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("expected {expected} objective values, got {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("warm-start set is empty")]
    EmptyWarmStartSet,
    #[error("configuration {0} does not assign every feature")]
    PartialConfiguration(usize),
    #[error("token counts must be non-negative")]
    NegativeCount,
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Largest normalized objective component; 0 is the ideal point.
pub fn chebyshev(objectives: &[f64], specs: &[ObjectiveSpec]) -> Result<f64, MetricError> {
    if objectives.len() != specs.len() || specs.is_empty() {
        return Err(MetricError::ArityMismatch { expected: specs.len(), found: objectives.len() });
    }
    Ok(objectives
        .iter()
        .zip(specs)
        .map(|(y, s)| normalize_objective(*y, s))
        .fold(0.0, f64::max))
}

/// Chebyshev value of a pool row.
pub fn row_chebyshev(row: &Row, dataset: &Dataset) -> f64 {
    chebyshev(&row.objectives, &dataset.objectives).expect("rows match their dataset's arity")
}

/// Index and value of the best (lowest-Chebyshev) pool row.
pub fn pool_optimum(dataset: &Dataset) -> (usize, f64) {
    dataset
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i, row_chebyshev(r, dataset)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// One method x dataset x trial record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: String,
    pub dataset: String,
    pub trial_index: usize,
    pub warm_starts: Vec<Configuration>,
    pub matched_rows: Vec<Row>,
    pub chebyshev_values: Vec<f64>,
    pub min_chebyshev: f64,
    pub diversity: f64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub wall_ms: u64,
    /// Pool label lookups spent before the warm starts were produced
    /// (GP-UCB acquisitions, TPE scouting).
    #[serde(default)]
    pub label_evaluations: usize,
}

/// The scoring half of a trial: what the warm starts are worth.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartScore {
    pub warm_starts: Vec<Configuration>,
    pub matched_rows: Vec<Row>,
    pub matched_indices: Vec<usize>,
    pub chebyshev_values: Vec<f64>,
    pub min_chebyshev: f64,
}

/// Labels each configuration with its nearest pool row and scores it.
pub fn score_warm_starts(configs: &[Configuration], dataset: &Dataset) -> Result<WarmStartScore, MetricError> {
    if configs.is_empty() {
        return Err(MetricError::EmptyWarmStartSet);
    }
    let mut matched_rows = Vec::with_capacity(configs.len());
    let mut matched_indices = Vec::with_capacity(configs.len());
    let mut chebyshev_values = Vec::with_capacity(configs.len());
    for c in configs {
        let n = nearest_row(c, dataset)?;
        let row = &dataset.rows[n.index];
        chebyshev_values.push(row_chebyshev(row, dataset));
        matched_rows.push(row.clone());
        matched_indices.push(n.index);
    }
    let min_chebyshev = chebyshev_values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(WarmStartScore { warm_starts: configs.to_vec(), matched_rows, matched_indices, chebyshev_values, min_chebyshev })
}

/// Mean pairwise Euclidean distance between complete configurations, in
/// min-max normalized feature space. A differing symbolic feature adds 1
/// to the squared sum. A single configuration has diversity 0.
pub fn diversity(configs: &[Configuration], dataset: &Dataset) -> Result<f64, MetricError> {
    if configs.is_empty() {
        return Err(MetricError::EmptyWarmStartSet);
    }
    let points: Vec<Vec<&Value>> = configs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            dataset
                .features
                .iter()
                .map(|f| c.get(&f.name).ok_or(MetricError::PartialConfiguration(i)))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    if points.len() < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let sq: f64 = dataset
                .features
                .iter()
                .enumerate()
                .map(|(k, f)| match (&f.domain, points[i][k], points[j][k]) {
                    (FeatureDomain::Numeric { lo, hi }, Value::Num(a), Value::Num(b)) => {
                        let span = hi - lo;
                        if span > 0.0 {
                            ((a - b) / span).powi(2)
                        } else {
                            0.0
                        }
                    }
                    (_, a, b) => {
                        if a == b {
                            0.0
                        } else {
                            1.0
                        }
                    }
                })
                .sum();
            total += sq.sqrt();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEntry {
    pub method: String,
    pub dataset: String,
    pub trial: usize,
    pub tag: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

/// Append-only token ledger.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    entries: Vec<CostEntry>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[CostEntry] {
        &self.entries
    }

    /// Appends an entry. Counts arrive signed from external sources and
    /// must not be negative.
    pub fn record(
        &mut self,
        method: &str,
        dataset: &str,
        trial: usize,
        tag: &str,
        tokens_in: i64,
        tokens_out: i64,
    ) -> Result<(), MetricError> {
        if tokens_in < 0 || tokens_out < 0 {
            return Err(MetricError::NegativeCount);
        }
        self.entries.push(CostEntry {
            method: method.to_string(),
            dataset: dataset.to_string(),
            trial,
            tag: tag.to_string(),
            tokens_in: tokens_in as u64,
            tokens_out: tokens_out as u64,
        });
        Ok(())
    }

    pub fn extend(&mut self, other: CostLedger) {
        self.entries.extend(other.entries);
    }

    pub fn totals(&self) -> (u64, u64) {
        self.entries.iter().fold((0, 0), |(i, o), e| (i + e.tokens_in, o + e.tokens_out))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_dataset, parse_dataset, Direction};
    use proptest::prelude::*;

    fn sphere() -> Dataset {
        load_dataset(concat!(env!("CARGO_MANIFEST_DIR"), "/data/datasets/toy_sphere.csv")).unwrap()
    }

    fn unit_spec(name: &str) -> ObjectiveSpec {
        ObjectiveSpec { name: name.into(), direction: Direction::Minimize, lo: 0.0, hi: 1.0 }
    }

    #[test]
    fn chebyshev_ideal_and_max() {
        let specs = [unit_spec("a"), unit_spec("b")];
        assert_eq!(chebyshev(&[0.0, 0.0], &specs).unwrap(), 0.0);
        assert_eq!(chebyshev(&[0.2, 0.7], &specs).unwrap(), 0.7);
        assert!(matches!(chebyshev(&[0.2], &specs), Err(MetricError::ArityMismatch { .. })));
    }

    #[test]
    fn pool_best_matches_exhaustive_scan() {
        let ds = sphere();
        let mut oracle = (0, f64::INFINITY);
        for (i, row) in ds.rows.iter().enumerate() {
            let mut d: f64 = 0.0;
            for (y, o) in row.objectives.iter().zip(&ds.objectives) {
                d = d.max((y - o.lo) / (o.hi - o.lo));
            }
            if d < oracle.1 {
                oracle = (i, d);
            }
        }
        assert_eq!(pool_optimum(&ds), oracle);
        let score = score_warm_starts(&[ds.row_config(oracle.0)], &ds).unwrap();
        assert_eq!(score.min_chebyshev, oracle.1);
    }

    #[test]
    fn min_semantics_with_best_row_present() {
        let ds = sphere();
        let (best, value) = pool_optimum(&ds);
        let configs = vec![ds.row_config(3), ds.row_config(best), ds.row_config(10), ds.row_config(20)];
        let s = score_warm_starts(&configs, &ds).unwrap();
        assert_eq!(s.min_chebyshev, value);
        assert_eq!(s.chebyshev_values.len(), 4);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(matches!(score_warm_starts(&[], &sphere()), Err(MetricError::EmptyWarmStartSet)));
    }

    #[test]
    fn diversity_three_four_five() {
        let ds = parse_dataset("t", "a,b,Y-\n0,0,0\n10,10,1\n").unwrap();
        let mut p = Configuration::new();
        p.assign(&ds, "a", &Value::Num(0.0)).unwrap();
        p.assign(&ds, "b", &Value::Num(0.0)).unwrap();
        let mut q = Configuration::new();
        q.assign(&ds, "a", &Value::Num(6.0)).unwrap();
        q.assign(&ds, "b", &Value::Num(8.0)).unwrap();
        assert!((diversity(&[p.clone(), q], &ds).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(diversity(&[p.clone(), p.clone(), p.clone()], &ds).unwrap(), 0.0);
        assert_eq!(diversity(&[p], &ds).unwrap(), 0.0);
    }

    #[test]
    fn diversity_three_configs_brute_force() {
        let ds = parse_dataset("t", "a,m,Y-\n0,x,0\n4,y,1\n").unwrap();
        let mk = |a: f64, m: &str| {
            let mut c = Configuration::new();
            c.assign(&ds, "a", &Value::Num(a)).unwrap();
            c.assign(&ds, "m", &Value::Sym(m.into())).unwrap();
            c
        };
        let cs = [mk(0.0, "x"), mk(2.0, "x"), mk(4.0, "y")];
        // normalized a: 0, 0.5, 1
        let d01 = 0.5f64;
        let d02 = (1.0f64 + 1.0).sqrt();
        let d12 = (0.25f64 + 1.0).sqrt();
        let expected = (d01 + d02 + d12) / 3.0;
        assert!((diversity(&cs, &ds).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn diversity_rejects_partial() {
        let ds = parse_dataset("t", "a,b,Y-\n0,0,0\n10,10,1\n").unwrap();
        let mut p = Configuration::new();
        p.assign(&ds, "a", &Value::Num(0.0)).unwrap();
        assert!(matches!(diversity(&[p], &ds), Err(MetricError::PartialConfiguration(0))));
    }

    #[test]
    fn ledger_totals() {
        let mut l = CostLedger::new();
        assert_eq!(l.totals(), (0, 0));
        l.record("m", "d", 0, "x", 100, 50).unwrap();
        l.record("m", "d", 0, "y", 200, 75).unwrap();
        assert_eq!(l.totals(), (300, 125));
        assert!(matches!(l.record("m", "d", 0, "z", -1, 0), Err(MetricError::NegativeCount)));
        assert_eq!(l.len(), 2);
    }

    proptest! {
        #[test]
        fn chebyshev_permutation_invariant_and_monotone(
            comps in proptest::collection::vec(0.0f64..=1.0, 1..6),
            bump_at in 0usize..6,
            bump in 0.0f64..=1.0,
        ) {
            let specs: Vec<ObjectiveSpec> = (0..comps.len()).map(|i| unit_spec(&i.to_string())).collect();
            let d = chebyshev(&comps, &specs).unwrap();
            let mut rev = comps.clone();
            rev.reverse();
            prop_assert_eq!(chebyshev(&rev, &specs).unwrap(), d);
            let mut worse = comps.clone();
            let k = bump_at % worse.len();
            worse[k] = (worse[k] + bump).min(1.0);
            prop_assert!(chebyshev(&worse, &specs).unwrap() >= d);
        }

        #[test]
        fn diversity_permutation_invariant(picks in proptest::collection::vec(0usize..64, 2..6)) {
            let ds = sphere();
            let configs: Vec<Configuration> = picks.iter().map(|&i| ds.row_config(i)).collect();
            let d = diversity(&configs, &ds).unwrap();
            let mut rev = configs.clone();
            rev.reverse();
            prop_assert!((diversity(&rev, &ds).unwrap() - d).abs() < 1e-12);
            prop_assert!(d >= 0.0);
            let s = score_warm_starts(&configs, &ds).unwrap();
            let mean = s.chebyshev_values.iter().sum::<f64>() / s.chebyshev_values.len() as f64;
            prop_assert!(s.min_chebyshev <= mean + 1e-15);
        }
    }
}
