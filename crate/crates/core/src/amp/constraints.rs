//! Machine-checkable hard constraints.
//!
//! Grammar (one rule per string, names matched case-insensitively):
//!
//! ```text
//! feature <op> number        op in < <= = >= > (also ≤ ≥ ==)
//! feature <op> other_feature both numeric, at most one per subject feature
//! feature in {a, b, c}       braces or brackets
//! ```
//!
//! Rules are admitted one at a time. A rule that cannot be parsed, names
//! an unknown feature, closes a reference cycle, or would make the rule set
//! unsatisfiable is demoted to a soft (free-text) constraint. Admitted
//! rules are propagated to arc-consistent per-feature domains, which is
//! what makes [`ConstraintSet::project`] total.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Configuration, Dataset, FeatureDomain, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl Op {
    fn symbol(self) -> &'static str {
        match self {
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Eq => "=",
            Op::Ge => ">=",
            Op::Gt => ">",
        }
    }

    fn holds(self, a: f64, b: f64) -> bool {
        let tol = 1e-12 * (1.0 + b.abs());
        match self {
            Op::Lt => a < b,
            Op::Le => a <= b + tol,
            Op::Eq => (a - b).abs() <= tol,
            Op::Ge => a >= b - tol,
            Op::Gt => a > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Bound { feature: String, op: Op, value: f64 },
    Relation { feature: String, op: Op, other: String },
    InSet { feature: String, values: Vec<Value> },
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Bound { feature, op, value } => write!(f, "{feature} {} {value}", op.symbol()),
            Predicate::Relation { feature, op, other } => write!(f, "{feature} {} {other}", op.symbol()),
            Predicate::InSet { feature, values } => {
                let items: Vec<String> = values.iter().map(Value::to_string).collect();
                write!(f, "{feature} in {{{}}}", items.join(", "))
            }
        }
    }
}

impl Predicate {
    pub fn feature(&self) -> &str {
        match self {
            Predicate::Bound { feature, .. } | Predicate::Relation { feature, .. } | Predicate::InSet { feature, .. } => feature,
        }
    }

    /// Whether `config` satisfies the rule. Rules over features the
    /// configuration does not assign hold vacuously.
    pub fn holds(&self, config: &Configuration) -> bool {
        let Some(v) = config.get(self.feature()) else {
            return true;
        };
        match self {
            Predicate::Bound { op, value, .. } => v.as_f64().is_some_and(|x| op.holds(x, *value)),
            Predicate::Relation { op, other, .. } => match config.get(other) {
                None => true,
                Some(w) => matches!((v.as_f64(), w.as_f64()), (Some(a), Some(b)) if op.holds(a, b)),
            },
            Predicate::InSet { values, .. } => values.iter().any(|s| match (s, v) {
                (Value::Num(a), Value::Num(b)) => Op::Eq.holds(*b, *a),
                _ => s == v,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleRejection {
    Unparsable,
    UnknownFeature(String),
    SecondRelation,
    Cycle,
    Unsatisfiable,
}

/// Finds a dataset feature by name, ignoring case and `_`/`-`/space.
pub fn match_feature<'d>(dataset: &'d Dataset, name: &str) -> Option<&'d str> {
    let canon = |s: &str| s.chars().filter(|c| !matches!(c, '_' | '-' | ' ')).flat_map(char::to_lowercase).collect::<String>();
    let name = name.trim().trim_matches(|c| c == '`' || c == '"' || c == '\'');
    dataset
        .features
        .iter()
        .find(|f| f.name == name)
        .or_else(|| dataset.features.iter().find(|f| f.name.eq_ignore_ascii_case(name)))
        .or_else(|| dataset.features.iter().find(|f| canon(&f.name) == canon(name)))
        .map(|f| f.name.as_str())
}

fn strip_token(s: &str) -> &str {
    s.trim().trim_matches(|c: char| matches!(c, '`' | '"' | '\'' | ',' | '.' | ';' | ')' | '('))
}

/// Parses one rule against `dataset`, clamping numeric bounds to the
/// feature range.
pub fn parse_rule(text: &str, dataset: &Dataset) -> Result<Predicate, RuleRejection> {
    let normalized = text.replace('≤', "<=").replace('≥', ">=").replace("==", "=").replace('−', "-");
    let s = normalized.trim().trim_start_matches(['-', '*']).trim();

    if let Some(pos) = s.find(" in ") {
        let (lhs, rhs) = (&s[..pos], s[pos + 4..].trim());
        let inner = rhs
            .strip_prefix('{')
            .and_then(|r| r.find('}').map(|e| &r[..e]))
            .or_else(|| rhs.strip_prefix('[').and_then(|r| r.find(']').map(|e| &r[..e])))
            .ok_or(RuleRejection::Unparsable)?;
        let feature = match_feature(dataset, lhs).ok_or_else(|| RuleRejection::UnknownFeature(lhs.trim().to_string()))?;
        let spec = dataset.feature(feature).expect("matched");
        let mut values = Vec::new();
        for item in inner.split(',').map(strip_token).filter(|i| !i.is_empty()) {
            let v = match &spec.domain {
                FeatureDomain::Numeric { lo, hi } => {
                    let x: f64 = item.parse().map_err(|_| RuleRejection::Unparsable)?;
                    if x < *lo || x > *hi {
                        continue;
                    }
                    Value::Num(x)
                }
                FeatureDomain::Symbolic { categories } => {
                    let c = categories.iter().find(|c| c.eq_ignore_ascii_case(item)).ok_or(RuleRejection::Unparsable)?;
                    Value::Sym(c.clone())
                }
            };
            if !values.contains(&v) {
                values.push(v);
            }
        }
        if values.is_empty() {
            return Err(RuleRejection::Unsatisfiable);
        }
        return Ok(Predicate::InSet { feature: feature.to_string(), values });
    }

    let ops = [("<=", Op::Le), (">=", Op::Ge), ("!=", Op::Eq), ("<", Op::Lt), (">", Op::Gt), ("=", Op::Eq)];
    let (pos, sym, op) = ops
        .iter()
        .filter_map(|(sym, op)| s.find(sym).map(|p| (p, *sym, *op)))
        .min_by_key(|(p, sym, _)| (*p, std::cmp::Reverse(sym.len())))
        .ok_or(RuleRejection::Unparsable)?;
    if sym == "!=" {
        return Err(RuleRejection::Unparsable);
    }
    let lhs = &s[..pos];
    let rhs = s[pos + sym.len()..].split_whitespace().next().map(strip_token).ok_or(RuleRejection::Unparsable)?;
    let feature = match_feature(dataset, lhs).ok_or_else(|| RuleRejection::UnknownFeature(lhs.trim().to_string()))?;
    let spec = dataset.feature(feature).expect("matched");

    match &spec.domain {
        FeatureDomain::Symbolic { categories } => {
            let c = categories.iter().find(|c| c.eq_ignore_ascii_case(rhs));
            match (op, c) {
                (Op::Eq, Some(c)) => Ok(Predicate::InSet { feature: feature.to_string(), values: vec![Value::Sym(c.clone())] }),
                _ => Err(RuleRejection::Unparsable),
            }
        }
        FeatureDomain::Numeric { lo, hi } => {
            if let Ok(x) = rhs.parse::<f64>() {
                if !x.is_finite() {
                    return Err(RuleRejection::Unparsable);
                }
                return Ok(Predicate::Bound { feature: feature.to_string(), op, value: x.clamp(*lo, *hi) });
            }
            let other = match_feature(dataset, rhs).ok_or_else(|| RuleRejection::UnknownFeature(rhs.to_string()))?;
            if other == feature || dataset.feature(other).and_then(|f| f.range()).is_none() {
                return Err(RuleRejection::Unparsable);
            }
            Ok(Predicate::Relation { feature: feature.to_string(), op, other: other.to_string() })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Dom {
    Num { lo: f64, hi: f64, set: Option<Vec<f64>> },
    Sym(Vec<String>),
}

/// `subject op other + offset` after strict comparisons are turned into
/// offsets.
#[derive(Debug, Clone, Copy)]
struct Edge {
    subject: usize,
    other: usize,
    op: Op,
    offset: f64,
}

fn strict_eps(dataset: &Dataset, fi: usize) -> f64 {
    let span = dataset.features[fi].range().map(|(lo, hi)| hi - lo).unwrap_or(0.0);
    if span > 0.0 {
        span * 1e-6
    } else {
        1e-6
    }
}

fn edge(dataset: &Dataset, p: &Predicate) -> Option<Edge> {
    let Predicate::Relation { feature, op, other } = p else {
        return None;
    };
    let subject = dataset.feature_index(feature)?;
    let other = dataset.feature_index(other)?;
    let eps = strict_eps(dataset, subject);
    let (op, offset) = match op {
        Op::Lt => (Op::Le, -eps),
        Op::Gt => (Op::Ge, eps),
        o => (*o, 0.0),
    };
    Some(Edge { subject, other, op, offset })
}

fn tighten(dom: &mut Dom, lo_new: f64, hi_new: f64, changed: &mut bool) {
    if let Dom::Num { lo, hi, .. } = dom {
        if lo_new > *lo + 1e-15 * (1.0 + lo.abs()) {
            *lo = lo_new;
            *changed = true;
        }
        if hi_new < *hi - 1e-15 * (1.0 + hi.abs()) {
            *hi = hi_new;
            *changed = true;
        }
    }
}

fn num_bounds(dom: &Dom) -> (f64, f64) {
    match dom {
        Dom::Num { lo, hi, .. } => (*lo, *hi),
        Dom::Sym(_) => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Arc-consistent domains for `preds`, or `None` if some domain empties.
fn propagate(dataset: &Dataset, preds: &[Predicate]) -> Option<Vec<Dom>> {
    let mut doms: Vec<Dom> = dataset
        .features
        .iter()
        .map(|f| match &f.domain {
            FeatureDomain::Numeric { lo, hi } => Dom::Num { lo: *lo, hi: *hi, set: None },
            FeatureDomain::Symbolic { categories } => Dom::Sym(categories.clone()),
        })
        .collect();
    let mut edges = Vec::new();
    for p in preds {
        let fi = dataset.feature_index(p.feature())?;
        match (p, &mut doms[fi]) {
            (Predicate::Bound { op, value, .. }, Dom::Num { lo, hi, .. }) => {
                let eps = strict_eps(dataset, fi);
                match op {
                    Op::Lt => *hi = hi.min(value - eps),
                    Op::Le => *hi = hi.min(*value),
                    Op::Eq => {
                        *lo = lo.max(*value);
                        *hi = hi.min(*value);
                    }
                    Op::Ge => *lo = lo.max(*value),
                    Op::Gt => *lo = lo.max(value + eps),
                }
            }
            (Predicate::InSet { values, .. }, Dom::Num { set, .. }) => {
                let xs: Vec<f64> = values.iter().filter_map(Value::as_f64).collect();
                *set = Some(match set.take() {
                    None => xs,
                    Some(old) => old.into_iter().filter(|x| xs.iter().any(|y| Op::Eq.holds(*x, *y))).collect(),
                });
            }
            (Predicate::InSet { values, .. }, Dom::Sym(allowed)) => {
                allowed.retain(|c| values.iter().any(|v| v.as_str() == Some(c.as_str())));
            }
            (Predicate::Relation { .. }, _) => edges.push(edge(dataset, p)?),
            _ => return None,
        }
    }

    for _ in 0..10_000 {
        let mut changed = false;
        for dom in doms.iter_mut() {
            match dom {
                Dom::Num { lo, hi, set } => {
                    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                    if let Some(xs) = set {
                        let before = xs.len();
                        xs.retain(|x| *x >= *lo - tol && *x <= *hi + tol);
                        if xs.is_empty() {
                            return None;
                        }
                        changed |= xs.len() != before;
                        let (smin, smax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
                        if smin > *lo || smax < *hi {
                            *lo = lo.max(smin);
                            *hi = hi.min(smax);
                        }
                    }
                    if *lo > *hi + tol {
                        return None;
                    }
                    if *lo > *hi {
                        *hi = *lo;
                    }
                }
                Dom::Sym(allowed) => {
                    if allowed.is_empty() {
                        return None;
                    }
                }
            }
        }
        for e in &edges {
            let (slo, shi) = num_bounds(&doms[e.subject]);
            let (olo, ohi) = num_bounds(&doms[e.other]);
            if matches!(e.op, Op::Le | Op::Eq) {
                // subject <= other + offset
                tighten(&mut doms[e.subject], f64::NEG_INFINITY, ohi + e.offset, &mut changed);
                tighten(&mut doms[e.other], slo - e.offset, f64::INFINITY, &mut changed);
            }
            if matches!(e.op, Op::Ge | Op::Eq) {
                tighten(&mut doms[e.subject], olo + e.offset, f64::INFINITY, &mut changed);
                tighten(&mut doms[e.other], f64::NEG_INFINITY, shi - e.offset, &mut changed);
            }
            if e.op == Op::Eq {
                let sset = if let Dom::Num { set, .. } = &doms[e.subject] { set.clone() } else { None };
                let oset = if let Dom::Num { set, .. } = &doms[e.other] { set.clone() } else { None };
                let merged = match (sset.clone(), oset.clone()) {
                    (None, None) => None,
                    (Some(a), None) | (None, Some(a)) => Some(a),
                    (Some(a), Some(b)) => Some(a.into_iter().filter(|x| b.iter().any(|y| Op::Eq.holds(*x, *y))).collect()),
                };
                if merged != sset || merged != oset {
                    changed = true;
                    for fi in [e.subject, e.other] {
                        if let Dom::Num { set, .. } = &mut doms[fi] {
                            set.clone_from(&merged);
                        }
                    }
                }
            }
        }
        if !changed {
            return Some(doms);
        }
    }
    Some(doms)
}

/// Hard predicates plus free-text soft heuristics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub hard: Vec<Predicate>,
    pub soft: Vec<String>,
    /// Hard rules that were demoted to soft.
    pub demoted: usize,
}

impl ConstraintSet {
    /// Admits `hard` rules in order; see the module docs for demotion.
    pub fn build(dataset: &Dataset, hard: &[String], soft: &[String]) -> Self {
        let mut set = ConstraintSet { hard: Vec::new(), soft: soft.to_vec(), demoted: 0 };
        for rule in hard {
            match set.admit(dataset, rule) {
                Ok(()) => {}
                Err(reason) => {
                    log::warn!("hard rule `{rule}` demoted to soft: {reason:?}");
                    set.demoted += 1;
                    set.soft.push(rule.clone());
                }
            }
        }
        set
    }

    fn admit(&mut self, dataset: &Dataset, rule: &str) -> Result<(), RuleRejection> {
        let pred = parse_rule(rule, dataset)?;
        if let Predicate::Relation { feature, other, .. } = &pred {
            if self.hard.iter().any(|p| matches!(p, Predicate::Relation { feature: f, .. } if f == feature)) {
                return Err(RuleRejection::SecondRelation);
            }
            // walking up from `other` must not reach `feature`
            let mut cur = other.clone();
            let parent = |f: &str| {
                self.hard.iter().find_map(|p| match p {
                    Predicate::Relation { feature, other, .. } if feature == f => Some(other.clone()),
                    _ => None,
                })
            };
            for _ in 0..=self.hard.len() {
                if cur == *feature {
                    return Err(RuleRejection::Cycle);
                }
                match parent(&cur) {
                    Some(p) => cur = p,
                    None => break,
                }
            }
        }
        let mut trial = self.hard.clone();
        trial.push(pred);
        if propagate(dataset, &trial).is_none() {
            return Err(RuleRejection::Unsatisfiable);
        }
        self.hard = trial;
        Ok(())
    }

    pub fn violations(&self, config: &Configuration) -> Vec<&Predicate> {
        self.hard.iter().filter(|p| !p.holds(config)).collect()
    }

    pub fn satisfied_by(&self, config: &Configuration) -> bool {
        self.violations(config).is_empty()
    }

    pub fn rulebook(&self) -> String {
        self.hard.iter().enumerate().map(|(i, p)| format!("{}. {p}\n", i + 1)).collect()
    }

    /// Moves each assigned value the least distance needed to satisfy
    /// every hard rule. Values that already comply are left untouched.
    pub fn project(&self, dataset: &Dataset, config: &Configuration) -> Configuration {
        let doms = propagate(dataset, &self.hard).expect("admitted rules are satisfiable");
        let parents: BTreeMap<usize, Edge> =
            self.hard.iter().filter_map(|p| edge(dataset, p)).map(|e| (e.subject, e)).collect();
        let depth = |mut f: usize| {
            let mut d = 0;
            while let Some(e) = parents.get(&f) {
                f = e.other;
                d += 1;
            }
            d
        };
        let mut order: Vec<usize> = (0..dataset.features.len()).collect();
        order.sort_by_key(|&f| (depth(f), f));

        let mut out = config.clone();
        for fi in order {
            let spec = &dataset.features[fi];
            let Some(current) = out.get(&spec.name).cloned() else {
                continue;
            };
            let value = match &doms[fi] {
                Dom::Sym(allowed) => {
                    if current.as_str().is_some_and(|c| allowed.iter().any(|a| a == c)) {
                        current
                    } else if allowed.iter().any(|a| Value::Sym(a.clone()) == spec.median_or_mode) {
                        spec.median_or_mode.clone()
                    } else {
                        Value::Sym(allowed[0].clone())
                    }
                }
                Dom::Num { lo, hi, set } => {
                    let (mut lo, mut hi) = (*lo, *hi);
                    if let Some(e) = parents.get(&fi) {
                        if let Some(p) = out.get(&dataset.features[e.other].name).and_then(Value::as_f64) {
                            if matches!(e.op, Op::Le | Op::Eq) {
                                hi = hi.min(p + e.offset);
                            }
                            if matches!(e.op, Op::Ge | Op::Eq) {
                                lo = lo.max(p + e.offset);
                            }
                        }
                    }
                    let x = current.as_f64().unwrap_or(lo);
                    let v = match set {
                        None => x.clamp(lo, hi.max(lo)),
                        Some(xs) => {
                            let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                            xs.iter()
                                .copied()
                                .filter(|s| *s >= lo - tol && *s <= hi + tol)
                                .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()).then(a.total_cmp(b)))
                                .unwrap_or(lo)
                        }
                    };
                    Value::Num(v)
                }
            };
            out.assignments.insert(spec.name.clone(), value);
        }
        out
    }
}
