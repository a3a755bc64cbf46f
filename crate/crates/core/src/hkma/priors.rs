use serde::{Deserialize, Serialize};

use super::tpe::ScoutResult;
use crate::data::{Dataset, FeatureDomain};
use crate::stats::{cliffs_delta, NEGLIGIBLE_DELTA};

/// Minimum share difference for a category-level prior.
pub const CATEGORY_SHIFT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Directional,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPrior {
    pub feature: String,
    pub kind: PriorKind,
    pub statement: String,
    /// Cliff's delta (numeric) or share difference (category), signed so
    /// that positive favours larger values / the category.
    pub strength: f64,
    #[serde(default)]
    pub category: Option<String>,
    /// Observed `[min, max]` over the best set (boundary priors).
    #[serde(default)]
    pub bounds: Option<(f64, f64)>,
}

impl EmpiricalPrior {
    /// The prior as a retrieval question.
    pub fn as_question(&self) -> String {
        match (self.kind, &self.category) {
            (PriorKind::Directional, Some(c)) => {
                let how = if self.strength > 0.0 { "improve" } else { "hurt" };
                format!("Why does {} = {c} {how} the objectives?", self.feature)
            }
            (PriorKind::Directional, None) => {
                let dir = if self.strength > 0.0 { "higher" } else { "lower" };
                format!("Why does {dir} {} improve the objectives?", self.feature)
            }
            (PriorKind::Boundary, _) => format!("What range of {} works best?", self.feature),
        }
    }
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Directional and boundary priors contrasting the best scouted
/// configurations with the rest.
pub fn extract_priors(scout: &ScoutResult, dataset: &Dataset) -> Vec<EmpiricalPrior> {
    let mut priors = Vec::new();
    if scout.best.is_empty() || scout.rest.is_empty() {
        return priors;
    }
    for (fi, spec) in dataset.features.iter().enumerate() {
        let values = |idx: &[usize]| idx.iter().map(|&i| dataset.rows[scout.evaluated[i].row].features[fi].clone()).collect::<Vec<_>>();
        let (best, rest) = (values(&scout.best), values(&scout.rest));
        match &spec.domain {
            FeatureDomain::Numeric { .. } => {
                let b: Vec<f64> = best.iter().filter_map(|v| v.as_f64()).collect();
                let r: Vec<f64> = rest.iter().filter_map(|v| v.as_f64()).collect();
                let delta = cliffs_delta(&b, &r);
                if delta.abs() >= NEGLIGIBLE_DELTA {
                    let dir = if delta > 0.0 { "Higher" } else { "Lower" };
                    priors.push(EmpiricalPrior {
                        feature: spec.name.clone(),
                        kind: PriorKind::Directional,
                        statement: format!("{dir} {} is associated with better outcomes (Cliff's delta {delta:+.2}).", spec.name),
                        strength: delta,
                        category: None,
                        bounds: None,
                    });
                }
                let lo = b.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                priors.push(EmpiricalPrior {
                    feature: spec.name.clone(),
                    kind: PriorKind::Boundary,
                    statement: format!("The best scouted configurations keep {} between {} and {}.", spec.name, fmt_num(lo), fmt_num(hi)),
                    strength: delta,
                    category: None,
                    bounds: Some((lo, hi)),
                });
            }
            FeatureDomain::Symbolic { categories } => {
                for c in categories {
                    let share = |vs: &[crate::data::Value]| vs.iter().filter(|v| v.as_str() == Some(c)).count() as f64 / vs.len() as f64;
                    let diff = share(&best) - share(&rest);
                    if diff.abs() >= CATEGORY_SHIFT {
                        let verb = if diff > 0.0 { "better" } else { "worse" };
                        priors.push(EmpiricalPrior {
                            feature: spec.name.clone(),
                            kind: PriorKind::Directional,
                            statement: format!("{} = {c} is associated with {verb} outcomes (share difference {diff:+.2}).", spec.name),
                            strength: diff,
                            category: Some(c.clone()),
                            bounds: None,
                        });
                    }
                }
            }
        }
    }
    priors
}
