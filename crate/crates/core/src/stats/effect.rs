use std::fmt;

use serde::{Deserialize, Serialize};

/// Below this magnitude a Cliff's delta is negligible.
pub const NEGLIGIBLE_DELTA: f64 = 0.147;
const SMALL_DELTA: f64 = 0.33;
const MEDIUM_DELTA: f64 = 0.474;

/// `(#{x > y} - #{x < y}) / (|a| |b|)` over all cross pairs.
///
/// Counts via a sorted copy of `b` and binary search, so cost is
/// `O((|a| + |b|) log |b|)`.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut sorted = b.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut greater = 0usize;
    let mut less = 0usize;
    for x in a {
        let below = sorted.partition_point(|y| y < x);
        let not_above = sorted.partition_point(|y| y <= x);
        greater += below;
        less += sorted.len() - not_above;
    }
    (greater as f64 - less as f64) / (a.len() * b.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectLabel {
    Negligible,
    Small,
    Medium,
    Large,
}

impl fmt::Display for EffectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectLabel::Negligible => "negligible",
            EffectLabel::Small => "small",
            EffectLabel::Medium => "medium",
            EffectLabel::Large => "large",
        })
    }
}

/// Half-open magnitude classes; each boundary belongs to the larger class.
pub fn effect_label(delta: f64) -> EffectLabel {
    let m = delta.abs();
    if m < NEGLIGIBLE_DELTA {
        EffectLabel::Negligible
    } else if m < SMALL_DELTA {
        EffectLabel::Small
    } else if m < MEDIUM_DELTA {
        EffectLabel::Medium
    } else {
        EffectLabel::Large
    }
}
