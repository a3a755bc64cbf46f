use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cliffs_delta, effect_label, EffectLabel, StatError, NEGLIGIBLE_DELTA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSample {
    pub label: String,
    pub values: Vec<f64>,
}

impl TreatmentSample {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self { label: label.into(), values }
    }

    pub fn median(&self) -> f64 {
        crate::data::ops_median(&self.values)
    }
}

/// Sum and count of a group of responses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSummary {
    pub total: f64,
    pub count: usize,
}

impl GroupSummary {
    pub fn of(values: &[f64]) -> Self {
        Self { total: values.iter().sum(), count: values.len() }
    }

    fn merge(self, other: Self) -> Self {
        Self { total: self.total + other.total, count: self.count + other.count }
    }
}

/// Floating-point slack under which two statistics count as tied.
const TIE_EPS: f64 = 1e-12;

/// Between-group sum of squares of a two-way partition.
pub fn b0(left: GroupSummary, right: GroupSummary) -> f64 {
    let (t1, n1) = (left.total, left.count as f64);
    let (t2, n2) = (right.total, right.count as f64);
    let v = t1 * t1 / n1 + t2 * t2 / n2 - (t1 + t2).powi(2) / (n1 + n2);
    v.max(0.0)
}

/// Cut maximizing [`b0`] over median-sorted treatments; the left group is
/// `treatments[..cut]`. Ties go to the leftmost cut.
pub fn best_split(sorted: &[TreatmentSample]) -> Result<(usize, f64), StatError> {
    if sorted.len() < 2 {
        return Err(StatError::TooFewTreatments(sorted.len()));
    }
    let summaries: Vec<GroupSummary> = sorted.iter().map(|t| GroupSummary::of(&t.values)).collect();
    let whole = summaries.iter().fold(GroupSummary { total: 0.0, count: 0 }, |a, s| a.merge(*s));
    let mut left = GroupSummary { total: 0.0, count: 0 };
    let mut best: Option<(usize, f64)> = None;
    for cut in 1..sorted.len() {
        left = left.merge(summaries[cut - 1]);
        let right = GroupSummary { total: whole.total - left.total, count: whole.count - left.count };
        let score = b0(left, right);
        if best.is_none_or(|(_, b)| score > b + TIE_EPS * b.abs().max(1.0)) {
            best = Some((cut, score));
        }
    }
    Ok(best.expect("at least one cut"))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Two-sided bootstrap test on the absolute mean difference under the
/// pooled null: both groups are resampled with replacement from the union.
/// Significant iff the observed statistic exceeds the `1 - alpha` quantile
/// of the resampled statistics.
pub fn bootstrap_significant<R: Rng + ?Sized>(left: &[f64], right: &[f64], resamples: usize, alpha: f64, rng: &mut R) -> bool {
    if left.is_empty() || right.is_empty() {
        return false;
    }
    let observed = (mean(left) - mean(right)).abs();
    if observed <= TIE_EPS {
        return false;
    }
    let pooled: Vec<f64> = left.iter().chain(right).copied().collect();
    let draw = |n: usize, rng: &mut R| -> f64 { (0..n).map(|_| pooled[rng.random_range(0..pooled.len())]).sum::<f64>() / n as f64 };
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let a = draw(left.len(), rng);
            let b = draw(right.len(), rng);
            (a - b).abs()
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let k = (((1.0 - alpha) * resamples as f64).ceil() as usize).clamp(1, resamples.max(1));
    match stats.get(k - 1) {
        Some(q) => observed > *q + TIE_EPS,
        None => true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScottKnottConfig {
    pub resamples: usize,
    pub alpha: f64,
}

impl Default for ScottKnottConfig {
    fn default() -> Self {
        Self { resamples: 512, alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    /// 1 is best (lowest median).
    pub rank: usize,
    pub label: String,
    pub median: f64,
    /// Cliff's delta of this treatment against the baseline, if one was named.
    pub delta: Option<f64>,
    pub effect: Option<EffectLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub baseline: Option<String>,
    pub entries: Vec<RankEntry>,
}

impl RankTable {
    /// Labels grouped by rank, best rank first.
    pub fn ranks(&self) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = Vec::new();
        for e in &self.entries {
            if out.len() < e.rank {
                out.resize(e.rank, Vec::new());
            }
            out[e.rank - 1].push(e.label.clone());
        }
        out
    }

    pub fn rank_of(&self, label: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.label == label).map(|e| e.rank)
    }

    pub fn to_markdown(&self) -> String {
        let base = self.baseline.as_deref().unwrap_or("baseline");
        let mut s = format!("| rank | method | median | delta vs {base} | effect |\n|---:|---|---:|---:|---|\n");
        for e in &self.entries {
            let (d, l) = render_delta(e);
            let _ = writeln!(s, "| {} | {} | {:.4} | {} | {} |", e.rank, e.label, e.median, d, l);
        }
        s
    }

    /// CSV with columns `rank,method,median,delta_vs_BS_LLM,effect_label`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,method,median,delta_vs_BS_LLM,effect_label\n");
        for e in &self.entries {
            let (d, l) = render_delta(e);
            let _ = writeln!(s, "{},{},{},{},{}", e.rank, e.label, e.median, d, l);
        }
        s
    }
}

fn render_delta(e: &RankEntry) -> (String, String) {
    match (e.delta, e.effect) {
        (Some(d), Some(l)) => (format!("{d:.4}"), l.to_string()),
        _ => (String::new(), String::new()),
    }
}

/// Scott-Knott ESD: sort by median, split at the max-[`b0`] cut, keep the
/// split only if it is bootstrap-significant and the pooled halves differ
/// by at least a small Cliff's delta, and recurse on both halves.
pub fn scott_knott<R: Rng + ?Sized>(
    treatments: &[TreatmentSample],
    cfg: ScottKnottConfig,
    baseline: Option<&str>,
    rng: &mut R,
) -> RankTable {
    let mut sorted: Vec<TreatmentSample> = treatments.to_vec();
    sorted.sort_by(|a, b| a.median().total_cmp(&b.median()).then_with(|| a.label.cmp(&b.label)));

    let mut groups: Vec<std::ops::Range<usize>> = Vec::new();
    split_recursive(&sorted, 0..sorted.len(), cfg, rng, &mut groups);
    groups.sort_by_key(|r| r.start);

    let base_values = baseline.and_then(|b| sorted.iter().find(|t| t.label == b)).map(|t| t.values.clone());
    let mut entries = Vec::with_capacity(sorted.len());
    for (rank0, range) in groups.iter().enumerate() {
        for t in &sorted[range.clone()] {
            let delta = base_values.as_ref().filter(|_| Some(t.label.as_str()) != baseline).map(|b| cliffs_delta(&t.values, b));
            entries.push(RankEntry {
                rank: rank0 + 1,
                label: t.label.clone(),
                median: t.median(),
                delta,
                effect: delta.map(effect_label),
            });
        }
    }
    RankTable { baseline: baseline.map(str::to_string), entries }
}

fn split_recursive<R: Rng + ?Sized>(
    sorted: &[TreatmentSample],
    range: std::ops::Range<usize>,
    cfg: ScottKnottConfig,
    rng: &mut R,
    out: &mut Vec<std::ops::Range<usize>>,
) {
    let slice = &sorted[range.clone()];
    if slice.len() < 2 {
        out.push(range);
        return;
    }
    let (cut, _) = best_split(slice).expect("at least two treatments");
    let pool = |ts: &[TreatmentSample]| -> Vec<f64> { ts.iter().flat_map(|t| t.values.iter().copied()).collect() };
    let left = pool(&slice[..cut]);
    let right = pool(&slice[cut..]);
    let significant = bootstrap_significant(&left, &right, cfg.resamples, cfg.alpha, rng);
    let sizeable = cliffs_delta(&left, &right).abs() >= NEGLIGIBLE_DELTA;
    if significant && sizeable {
        let mid = range.start + cut;
        split_recursive(sorted, range.start..mid, cfg, rng, out);
        split_recursive(sorted, mid..range.end, cfg, rng, out);
    } else {
        out.push(range);
    }
}
