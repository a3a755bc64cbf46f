use serde::{Deserialize, Serialize};

use super::{Configuration, DataError, Dataset, Direction, FeatureDomain, FeatureKind, ObjectiveSpec, Row, Tier, Value};

/// Maps a feature count to its dimensional tier: fewer than 6 is low,
/// 6 through 11 is medium, anything larger is high.
pub fn dimensional_tier(n_features: usize) -> Tier {
    match n_features {
        0..=5 => Tier::Low,
        6..=11 => Tier::Medium,
        _ => Tier::High,
    }
}

/// Min-max normalizes an objective value so that its ideal endpoint maps to
/// 0 and the worst observed value to 1. Degenerate ranges normalize to 0.
pub fn normalize_objective(raw: f64, spec: &ObjectiveSpec) -> f64 {
    let span = spec.hi - spec.lo;
    if span <= 0.0 {
        return 0.0;
    }
    let unit = ((raw - spec.lo) / span).clamp(0.0, 1.0);
    match spec.direction {
        Direction::Minimize => unit,
        Direction::Maximize => 1.0 - unit,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Mean Gower-style distance between `config` and `row` over the features
/// `config` assigns.
fn gower(dataset: &Dataset, assigned: &[(usize, &Value)], row: &Row) -> f64 {
    let total: f64 = assigned
        .iter()
        .map(|(fi, v)| {
            let spec = &dataset.features[*fi];
            match (&spec.domain, v, &row.features[*fi]) {
                (FeatureDomain::Numeric { lo, hi }, Value::Num(a), Value::Num(b)) => {
                    let span = hi - lo;
                    if span > 0.0 {
                        (a - b).abs() / span
                    } else {
                        0.0
                    }
                }
                (_, a, b) => {
                    if *a == b {
                        0.0
                    } else {
                        1.0
                    }
                }
            }
        })
        .sum();
    total / assigned.len() as f64
}

fn resolve<'c>(config: &'c Configuration, dataset: &Dataset) -> Result<Vec<(usize, &'c Value)>, DataError> {
    if config.is_empty() {
        return Err(DataError::EmptyConfiguration);
    }
    config
        .assignments
        .iter()
        .map(|(name, v)| {
            dataset
                .feature_index(name)
                .map(|i| (i, v))
                .ok_or_else(|| DataError::UnknownFeature(name.clone()))
        })
        .collect()
}

/// The pool row closest to `config` over its assigned features; ties go to
/// the lowest row index.
pub fn nearest_row(config: &Configuration, dataset: &Dataset) -> Result<Neighbor, DataError> {
    nearest_row_among(config, dataset, |_| true)
}

/// [`nearest_row`] restricted to rows accepted by `eligible`.
pub fn nearest_row_among(
    config: &Configuration,
    dataset: &Dataset,
    eligible: impl Fn(usize) -> bool,
) -> Result<Neighbor, DataError> {
    let assigned = resolve(config, dataset)?;
    let mut best: Option<Neighbor> = None;
    for (index, row) in dataset.rows.iter().enumerate() {
        if !eligible(index) {
            continue;
        }
        let distance = gower(dataset, &assigned, row);
        if best.is_none_or(|b| distance < b.distance) {
            best = Some(Neighbor { index, distance });
        }
    }
    best.ok_or(DataError::EmptyConfiguration)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub name: String,
    pub kind: FeatureKind,
    pub median_or_mode: Value,
}

pub fn feature_metadata_summary(dataset: &Dataset) -> Vec<FeatureSummary> {
    dataset
        .features
        .iter()
        .map(|f| FeatureSummary { name: f.name.clone(), kind: f.kind(), median_or_mode: f.median_or_mode.clone() })
        .collect()
}

/// Projects rows onto an ordered feature subset.
pub fn project_rows(dataset: &Dataset, rows: &[&Row], subset: &[&str]) -> Result<Vec<Configuration>, DataError> {
    if subset.is_empty() {
        return Err(DataError::EmptySubset);
    }
    let idx: Vec<usize> = subset
        .iter()
        .map(|name| dataset.feature_index(name).ok_or_else(|| DataError::UnknownFeature(name.to_string())))
        .collect::<Result<_, _>>()?;
    Ok(rows
        .iter()
        .map(|row| Configuration {
            assignments: idx
                .iter()
                .map(|&i| (dataset.features[i].name.clone(), row.features[i].clone()))
                .collect(),
        })
        .collect())
}

/// Median with the mean-of-middle-two convention for even counts.
pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Most frequent value; ties go to the earliest-appearing one.
pub(crate) fn mode<'a>(values: &[&'a str]) -> &'a str {
    let mut counts: Vec<(&str, usize)> = Vec::new();
    for v in values {
        match counts.iter_mut().find(|(k, _)| k == v) {
            Some((_, c)) => *c += 1,
            None => counts.push((v, 1)),
        }
    }
    let mut best: Option<(&str, usize)> = None;
    for (k, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k).unwrap_or("")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_dataset;
    use proptest::prelude::*;

    fn spec(direction: Direction, lo: f64, hi: f64) -> ObjectiveSpec {
        ObjectiveSpec { name: "y".into(), direction, lo, hi }
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        assert_eq!(normalize_objective(10.0, &spec(Direction::Minimize, 10.0, 20.0)), 0.0);
        assert_eq!(normalize_objective(20.0, &spec(Direction::Maximize, 10.0, 20.0)), 0.0);
        assert_eq!(normalize_objective(15.0, &spec(Direction::Minimize, 10.0, 20.0)), 0.5);
        assert_eq!(normalize_objective(7.0, &spec(Direction::Minimize, 7.0, 7.0)), 0.0);
    }

    #[test]
    fn tier_boundaries() {
        assert_eq!(dimensional_tier(5), Tier::Low);
        assert_eq!(dimensional_tier(6), Tier::Medium);
        assert_eq!(dimensional_tier(11), Tier::Medium);
        assert_eq!(dimensional_tier(12), Tier::High);
    }

    fn three_rows() -> Dataset {
        parse_dataset("t", "a,b,mode,Y-\n0,0,x,1\n10,5,y,2\n4,10,x,3\n").unwrap()
    }

    #[test]
    fn nearest_row_identity() {
        let ds = three_rows();
        for i in 0..ds.rows.len() {
            let n = nearest_row(&ds.row_config(i), &ds).unwrap();
            assert_eq!(n.index, i);
            assert_eq!(n.distance, 0.0);
        }
    }

    #[test]
    fn nearest_row_tie_breaks_low_index() {
        let ds = three_rows();
        let mut c = Configuration::new();
        c.assign(&ds, "a", &Value::Num(2.0)).unwrap();
        // rows 0 and 2 are both 0.2 away on `a`
        assert_eq!(nearest_row(&c, &ds).unwrap().index, 0);
    }

    #[test]
    fn nearest_row_matches_brute_force_gower() {
        let ds = three_rows();
        let mut c = Configuration::new();
        c.assign(&ds, "a", &Value::Num(6.0)).unwrap();
        c.assign(&ds, "b", &Value::Num(6.0)).unwrap();
        c.assign(&ds, "mode", &Value::Sym("y".into())).unwrap();
        // ranges: a 0..10, b 0..10
        let hand: [f64; 3] = [
            (0.6 + 0.6 + 1.0) / 3.0,
            (0.4 + 0.1 + 0.0) / 3.0,
            (0.2 + 0.4 + 1.0) / 3.0,
        ];
        let best = hand.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let n = nearest_row(&c, &ds).unwrap();
        assert_eq!(n.index, best.0);
        assert!((n.distance - best.1).abs() < 1e-12);
    }

    #[test]
    fn nearest_row_rejects_empty() {
        let ds = three_rows();
        assert!(matches!(nearest_row(&Configuration::new(), &ds), Err(DataError::EmptyConfiguration)));
    }

    #[test]
    fn metadata_median_and_mode() {
        let ds = parse_dataset("t", "n,s,Y-\n1,a,0\n2,a,1\n3,b,2\n").unwrap();
        let m = feature_metadata_summary(&ds);
        assert_eq!(m[0].median_or_mode, Value::Num(2.0));
        assert_eq!(m[1].median_or_mode, Value::Sym("a".into()));
        let even = parse_dataset("t", "n,Y-\n4,0\n1,1\n3,2\n2,3\n").unwrap();
        let mut sorted = vec![4.0, 1.0, 3.0, 2.0];
        sorted.sort_by(f64::total_cmp);
        let oracle = (sorted[1] + sorted[2]) / 2.0;
        assert_eq!(feature_metadata_summary(&even)[0].median_or_mode, Value::Num(oracle));
        assert_eq!(oracle, 2.5);
    }

    #[test]
    fn projection_arity_and_errors() {
        let header: Vec<String> = (0..10).map(|i| format!("f{i}")).collect();
        let mut text = header.join(",") + ",Y-\n";
        for r in 0..6 {
            let cells: Vec<String> = (0..10).map(|c| (r * 10 + c).to_string()).collect();
            text += &(cells.join(",") + &format!(",{r}\n"));
        }
        let ds = parse_dataset("t", &text).unwrap();
        let rows: Vec<&Row> = ds.rows.iter().take(4).collect();
        let configs = project_rows(&ds, &rows, &["f1", "f4", "f9"]).unwrap();
        assert_eq!(configs.len(), 4);
        assert!(configs.iter().all(|c| c.len() == 3));
        assert_eq!(configs[2].get("f4"), Some(&Value::Num(24.0)));
        let all: Vec<&str> = ds.feature_names();
        let full = project_rows(&ds, &rows, &all).unwrap();
        assert_eq!(full[0], ds.row_config(0));
        assert!(matches!(project_rows(&ds, &rows, &[]), Err(DataError::EmptySubset)));
        assert!(matches!(project_rows(&ds, &rows, &["nope"]), Err(DataError::UnknownFeature(_))));
    }

    #[test]
    fn admission_clamps_and_rejects() {
        let ds = three_rows();
        let mut c = Configuration::new();
        assert!(c.assign(&ds, "a", &Value::Num(99.0)).unwrap());
        assert_eq!(c.get("a"), Some(&Value::Num(10.0)));
        assert!(c.assign(&ds, "mode", &Value::Sym("z".into())).is_err());
        assert!(c.assign(&ds, "mode", &Value::Sym("Y".into())).unwrap());
        assert_eq!(c.get("mode"), Some(&Value::Sym("y".into())));
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/datasets/toy_server.csv");
        let ds = crate::data::load_dataset(path).unwrap();
        let again = parse_dataset(&ds.name, &ds.to_csv()).unwrap();
        assert_eq!(ds, again);
    }

    proptest! {
        #[test]
        fn normalized_values_stay_in_unit_interval(lo in -1e3f64..1e3, span in 1e-3f64..1e3, t in 0.0f64..=1.0) {
            let hi = lo + span;
            let raw = lo + t * span;
            for d in [Direction::Minimize, Direction::Maximize] {
                let v = normalize_objective(raw, &spec(d, lo, hi));
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let min = normalize_objective(raw, &spec(Direction::Minimize, lo, hi));
            let max = normalize_objective(raw, &spec(Direction::Maximize, lo, hi));
            prop_assert!((max - (1.0 - min)).abs() < 1e-12);
            prop_assert_eq!(normalize_objective(lo, &spec(Direction::Minimize, lo, hi)), 0.0);
            prop_assert_eq!(normalize_objective(hi, &spec(Direction::Maximize, lo, hi)), 0.0);
        }

        #[test]
        fn tier_is_monotone(n in 1usize..200) {
            prop_assert!(dimensional_tier(n) <= dimensional_tier(n + 1));
        }
    }
}
