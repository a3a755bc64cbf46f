//! Offline reports, recomputed from the store alone: Scott-Knott tables
//! per dataset, rank frequencies per tier, diversity/cost summaries and
//! the H-DKP effort correlation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::store::{RunMeta, SessionRecord, StoreRecord};
use super::trial_seed;
use crate::data::Tier;
use crate::metrics::TrialResult;
use crate::stats::{effort_correlation, scott_knott, EffortCorrelation, RankTable, ScottKnottConfig, TreatmentSample};

const BASELINE: &str = "bs_llm";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("the store holds no trial results")]
    EmptyStore,
    #[error("the store has no meta record")]
    MissingMeta,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Rank counts of one method within one tier; `counts[r]` is the number of
/// the tier's datasets where the method got rank `r + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TierRow {
    pub tier: Tier,
    pub method: String,
    pub datasets: usize,
    pub counts: Vec<usize>,
    /// Datasets of the tier where the method has no results.
    pub absent: usize,
}

impl TierRow {
    pub fn rank1_frequency(&self) -> f64 {
        if self.datasets == 0 {
            0.0
        } else {
            self.counts.first().copied().unwrap_or(0) as f64 / self.datasets as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: String,
    pub trials: usize,
    pub errors: usize,
    pub median_min_chebyshev: f64,
    pub median_diversity: f64,
    pub mean_tokens_in: f64,
    pub mean_tokens_out: f64,
    /// Every billed call, including H-DKP session calls.
    pub total_tokens: u64,
    pub mean_label_evaluations: f64,
    pub mean_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub meta: RunMeta,
    pub rank_tables: Vec<(String, RankTable)>,
    pub tiers: Vec<TierRow>,
    pub max_rank: usize,
    pub summary: Vec<SummaryRow>,
    /// (session id, feedback rounds, improvement) per session.
    pub sessions: Vec<(String, usize, f64)>,
    pub effort: Option<EffortCorrelation>,
    pub errors: usize,
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 0 {
        (s[m - 1] + s[m]) / 2.0
    } else {
        s[m]
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn build_report(records: &[StoreRecord]) -> Result<Report, ReportError> {
    let meta = records
        .iter()
        .find_map(|r| match r {
            StoreRecord::Meta(m) => Some(m.clone()),
            _ => None,
        })
        .ok_or(ReportError::MissingMeta)?;
    let trials: Vec<&TrialResult> = records
        .iter()
        .filter_map(|r| match r {
            StoreRecord::Trial(t) => Some(t),
            _ => None,
        })
        .collect();
    if trials.is_empty() {
        return Err(ReportError::EmptyStore);
    }

    // dataset order follows the meta record, then any stragglers by name
    let mut order: Vec<String> = meta.datasets.iter().map(|d| d.name.clone()).collect();
    for t in &trials {
        if !order.contains(&t.dataset) {
            order.push(t.dataset.clone());
        }
    }
    let mut by_cell: BTreeMap<(&str, &str), Vec<&TrialResult>> = BTreeMap::new();
    for t in &trials {
        by_cell.entry((t.dataset.as_str(), t.method.as_str())).or_default().push(t);
    }

    let mut rank_tables = Vec::new();
    for ds in &order {
        let samples: Vec<TreatmentSample> = by_cell
            .iter()
            .filter(|((d, _), _)| d == ds)
            .map(|((_, m), ts)| TreatmentSample::new(*m, ts.iter().map(|t| t.min_chebyshev).collect()))
            .collect();
        if samples.is_empty() {
            continue;
        }
        let baseline = samples.iter().any(|s| s.label == BASELINE).then_some(BASELINE);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(meta.master_seed, "report", ds, 0));
        rank_tables.push((ds.clone(), scott_knott(&samples, ScottKnottConfig::default(), baseline, &mut rng)));
    }

    let (tiers, max_rank) = tier_matrix(&meta, &rank_tables);
    let errors = records.iter().filter(|r| matches!(r, StoreRecord::Error(_))).count();
    let summary = summary_rows(records, &order, &by_cell);

    let sessions: Vec<(String, usize, f64)> = records
        .iter()
        .filter_map(|r| match r {
            StoreRecord::Session(s) => session_improvement(s, &by_cell).map(|d| (s.id.clone(), s.rounds, d)),
            _ => None,
        })
        .collect();
    let pairs: Vec<(usize, f64)> = sessions.iter().map(|(_, t, d)| (*t, *d)).collect();
    let effort = effort_correlation(&pairs).ok();

    Ok(Report { meta, rank_tables, tiers, max_rank, summary, sessions, effort, errors })
}

/// Chebyshev improvement of a session: its first candidates' best distance
/// minus the median of its final trials.
fn session_improvement(s: &SessionRecord, by_cell: &BTreeMap<(&str, &str), Vec<&TrialResult>>) -> Option<f64> {
    let start = s.initial_min_chebyshev()?;
    let finals = by_cell.get(&(s.dataset.as_str(), "hdkp"))?;
    Some(start - median(&finals.iter().map(|t| t.min_chebyshev).collect::<Vec<_>>()))
}

fn tier_matrix(meta: &RunMeta, tables: &[(String, RankTable)]) -> (Vec<TierRow>, usize) {
    let max_rank = tables.iter().flat_map(|(_, t)| t.entries.iter().map(|e| e.rank)).max().unwrap_or(1);
    let methods: BTreeSet<&str> = tables.iter().flat_map(|(_, t)| t.entries.iter().map(|e| e.label.as_str())).collect();
    let mut method_order: Vec<&str> = meta.methods.iter().map(String::as_str).filter(|m| methods.contains(m)).collect();
    method_order.extend(methods.iter().filter(|m| !meta.methods.iter().any(|x| x == *m)));

    let mut rows = Vec::new();
    for tier in [Tier::Low, Tier::Medium, Tier::High] {
        let in_tier: Vec<&str> = meta.datasets.iter().filter(|d| d.tier == tier).map(|d| d.name.as_str()).collect();
        if in_tier.is_empty() {
            continue;
        }
        for m in &method_order {
            let mut counts = vec![0; max_rank];
            let mut absent = 0;
            for ds in &in_tier {
                match tables.iter().find(|(d, _)| d == ds).and_then(|(_, t)| t.rank_of(m)) {
                    Some(r) => counts[r - 1] += 1,
                    None => absent += 1,
                }
            }
            rows.push(TierRow { tier, method: m.to_string(), datasets: in_tier.len(), counts, absent });
        }
    }
    (rows, max_rank)
}

fn summary_rows(records: &[StoreRecord], order: &[String], by_cell: &BTreeMap<(&str, &str), Vec<&TrialResult>>) -> Vec<SummaryRow> {
    let mut tokens: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let mut errors: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut cells: BTreeSet<(&str, &str)> = by_cell.keys().copied().collect();
    for r in records {
        match r {
            StoreRecord::Cost(c) => {
                *tokens.entry((c.dataset.as_str(), c.method.as_str())).or_default() += c.tokens_in + c.tokens_out;
                cells.insert((c.dataset.as_str(), c.method.as_str()));
            }
            StoreRecord::Error(e) => {
                *errors.entry((e.dataset.as_str(), e.method.as_str())).or_default() += 1;
                cells.insert((e.dataset.as_str(), e.method.as_str()));
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    for ds in order {
        for &(d, m) in cells.iter().filter(|(d, _)| d == ds) {
            let ts = by_cell.get(&(d, m)).map(Vec::as_slice).unwrap_or(&[]);
            out.push(SummaryRow {
                dataset: d.to_string(),
                method: m.to_string(),
                trials: ts.len(),
                errors: errors.get(&(d, m)).copied().unwrap_or(0),
                median_min_chebyshev: median(&ts.iter().map(|t| t.min_chebyshev).collect::<Vec<_>>()),
                median_diversity: median(&ts.iter().map(|t| t.diversity).collect::<Vec<_>>()),
                mean_tokens_in: mean(ts.iter().map(|t| t.tokens_in as f64)),
                mean_tokens_out: mean(ts.iter().map(|t| t.tokens_out as f64)),
                total_tokens: tokens.get(&(d, m)).copied().unwrap_or(0),
                mean_label_evaluations: mean(ts.iter().map(|t| t.label_evaluations as f64)),
                mean_wall_ms: mean(ts.iter().map(|t| t.wall_ms as f64)),
            });
        }
    }
    out
}

impl Report {
    pub fn tier_csv(&self) -> String {
        let mut s = String::from("tier,method,datasets");
        for r in 1..=self.max_rank {
            let _ = write!(s, ",rank_{r}");
        }
        s.push_str(",absent,rank1_frequency\n");
        for row in &self.tiers {
            let _ = write!(s, "{},{},{}", row.tier, row.method, row.datasets);
            for c in &row.counts {
                let _ = write!(s, ",{c}");
            }
            let _ = writeln!(s, ",{},{:.4}", row.absent, row.rank1_frequency());
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "dataset,method,trials,errors,median_min_chebyshev,median_diversity,mean_tokens_in,mean_tokens_out,total_tokens,mean_label_evaluations,mean_wall_ms\n",
        );
        for r in &self.summary {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.1},{:.1},{},{:.2},{:.1}",
                r.dataset,
                r.method,
                r.trials,
                r.errors,
                r.median_min_chebyshev,
                r.median_diversity,
                r.mean_tokens_in,
                r.mean_tokens_out,
                r.total_tokens,
                r.mean_label_evaluations,
                r.mean_wall_ms
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let m = &self.meta;
        let mut s = String::from("# Warm-start report\n\n");
        let _ = writeln!(
            s,
            "Seed {}, {} trials per cell, {} warm starts per trial, provider `{}`{}.\n",
            m.master_seed,
            m.trials,
            m.n,
            m.provider,
            m.model.as_deref().map(|x| format!(" (model `{x}`)")).unwrap_or_default()
        );
        if self.errors > 0 {
            let _ = writeln!(s, "**{} trial(s) failed** and are listed as error records in the store.\n", self.errors);
        }
        s.push_str("## Scott-Knott ranks (min Chebyshev, lower is better)\n\n");
        for (ds, table) in &self.rank_tables {
            let _ = writeln!(s, "### {ds}\n\n{}", table.to_markdown());
        }

        s.push_str("## Rank frequency by tier\n\n| tier | method | datasets |");
        for r in 1..=self.max_rank {
            let _ = write!(s, " rank {r} |");
        }
        s.push_str(" absent | rank-1 share |\n|---|---|---:|");
        for _ in 0..self.max_rank {
            s.push_str("---:|");
        }
        s.push_str("---:|---:|\n");
        for row in &self.tiers {
            let _ = write!(s, "| {} | {} | {} |", row.tier, row.method, row.datasets);
            for c in &row.counts {
                let _ = write!(s, " {c} |");
            }
            let _ = writeln!(s, " {} | {:.0}% |", row.absent, 100.0 * row.rank1_frequency());
        }

        s.push_str("\n## Diversity and cost\n\n| dataset | method | trials | errors | median min-Cheb | median diversity | mean tokens in | mean tokens out | total tokens | mean label evals | mean wall ms |\n|---|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
        for r in &self.summary {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {:.4} | {:.4} | {:.1} | {:.1} | {} | {:.2} | {:.1} |",
                r.dataset,
                r.method,
                r.trials,
                r.errors,
                r.median_min_chebyshev,
                r.median_diversity,
                r.mean_tokens_in,
                r.mean_tokens_out,
                r.total_tokens,
                r.mean_label_evaluations,
                r.mean_wall_ms
            );
        }

        if !self.sessions.is_empty() {
            s.push_str("\n## H-DKP effort\n\n| session | feedback rounds | improvement |\n|---|---:|---:|\n");
            for (id, t, d) in &self.sessions {
                let _ = writeln!(s, "| {id} | {t} | {d:.4} |");
            }
            match &self.effort {
                Some(e) => {
                    let _ = writeln!(
                        s,
                        "\nSpearman rho between rounds and improvement: {:.4}{}",
                        e.rho,
                        if e.degenerate { " (degenerate: a series is constant)" } else { "" }
                    );
                }
                None => s.push_str("\nEffort correlation needs at least two sessions.\n"),
            }
        }
        s
    }
}

fn file_name(ds: &str) -> String {
    ds.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes `report.md`, `tiers.csv`, `summary.csv` and per-dataset
/// `rank_<dataset>.{md,csv}` into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut files: Vec<(PathBuf, String)> = vec![
        (dir.join("report.md"), report.to_markdown()),
        (dir.join("tiers.csv"), report.tier_csv()),
        (dir.join("summary.csv"), report.summary_csv()),
    ];
    for (ds, t) in &report.rank_tables {
        files.push((dir.join(format!("rank_{}.md", file_name(ds))), t.to_markdown()));
        files.push((dir.join(format!("rank_{}.csv", file_name(ds))), t.to_csv()));
    }
    if !report.sessions.is_empty() {
        let mut s = String::from("session,rounds,improvement\n");
        for (id, t, d) in &report.sessions {
            let _ = writeln!(s, "{id},{t},{d}");
        }
        if let Some(e) = &report.effort {
            let _ = writeln!(s, "# spearman_rho,{},degenerate,{}", e.rho, e.degenerate);
        }
        files.push((dir.join("effort.csv"), s));
    }
    let mut out = Vec::with_capacity(files.len());
    for (p, body) in files {
        std::fs::write(&p, body).map_err(io(&p))?;
        out.push(p);
    }
    Ok(out)
}
