//! Non-parametric ranking statistics: Cliff's delta, Spearman correlation
//! and Scott-Knott ESD clustering with a bootstrap significance test.

mod effect;
mod scott_knott;

pub use effect::{cliffs_delta, effect_label, EffectLabel, NEGLIGIBLE_DELTA};
pub use scott_knott::{
    b0, best_split, bootstrap_significant, scott_knott, GroupSummary, RankEntry, RankTable, ScottKnottConfig,
    TreatmentSample,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("need at least 2 treatments to split, got {0}")]
    TooFewTreatments(usize),
    #[error("need at least 2 sessions, got {0}")]
    TooFewSessions(usize),
}

/// Ranks with ties replaced by their average 1-based rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; zero variance in either series yields 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatError> {
    if x.len() != y.len() {
        return Err(StatError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatError::TooFewObservations(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average-tied ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatError> {
    if x.len() != y.len() {
        return Err(StatError::LengthMismatch(x.len(), y.len()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffortCorrelation {
    pub rho: f64,
    /// Either series had zero variance and `rho` was defined as 0.
    pub degenerate: bool,
}

/// Spearman correlation between feedback-round counts and the Chebyshev
/// improvement each session achieved.
pub fn effort_correlation(sessions: &[(usize, f64)]) -> Result<EffortCorrelation, StatError> {
    if sessions.len() < 2 {
        return Err(StatError::TooFewSessions(sessions.len()));
    }
    let t: Vec<f64> = sessions.iter().map(|s| s.0 as f64).collect();
    let d: Vec<f64> = sessions.iter().map(|s| s.1).collect();
    let flat = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    let degenerate = flat(&t) || flat(&d);
    Ok(EffortCorrelation { rho: spearman(&t, &d)?, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: rank by counting, then covariance by definition.
    fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|a| {
                    let less = v.iter().filter(|b| *b < a).count() as f64;
                    let equal = v.iter().filter(|b| *b == a).count() as f64;
                    less + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let (rx, ry) = (rank(x), rank(y));
        let n = x.len() as f64;
        let mean = (n + 1.0) / 2.0;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mean) * (b - mean)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mean).powi(2)).sum();
        let vy: f64 = ry.iter().map(|b| (b - mean).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn spearman_monotone_and_antitone() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&x, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[5.0, 3.0, 1.0, 0.0, -9.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_with_ties_matches_oracle() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 1.0, 3.0, 4.0];
        let expected = spearman_oracle(&x, &y);
        assert!((spearman(&x, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn spearman_length_mismatch() {
        assert_eq!(spearman(&[1.0, 2.0], &[1.0]), Err(StatError::LengthMismatch(2, 1)));
    }

    #[test]
    fn effort_correlation_cases() {
        let mono = effort_correlation(&[(5, 0.1), (7, 0.2), (9, 0.3)]).unwrap();
        assert!((mono.rho - 1.0).abs() < 1e-12);
        let flat = effort_correlation(&[(5, 0.1), (7, 0.1), (9, 0.1)]).unwrap();
        assert_eq!(flat.rho, 0.0);
        assert!(flat.degenerate);
        let sessions = [(5, 0.02), (9, 0.11), (6, 0.05), (10, 0.08), (7, 0.05)];
        let (t, d): (Vec<f64>, Vec<f64>) = sessions.iter().map(|s| (s.0 as f64, s.1)).unzip();
        let got = effort_correlation(&sessions).unwrap();
        assert!((got.rho - spearman_oracle(&t, &d)).abs() < 1e-12);
        assert_eq!(effort_correlation(&[(5, 0.1)]), Err(StatError::TooFewSessions(1)));
    }
}
