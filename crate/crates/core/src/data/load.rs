use std::path::{Path, PathBuf};

use super::ops::{dimensional_tier, median, mode};
use super::{DataError, Dataset, Direction, FeatureDomain, FeatureSpec, ObjectiveSpec, Row, Value};

/// Reads a dataset from a CSV file; the dataset is named after the file stem.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    parse_dataset(&name, &text)
}

enum Column {
    Feature(String),
    Objective(String, Direction),
}

/// Parses CSV text. Header cells ending in `+`/`-` are maximized/minimized
/// objectives, every other column is a feature. A column is numeric iff
/// every non-empty cell parses as a finite real.
pub fn parse_dataset(name: &str, text: &str) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec?,
        None => return Err(DataError::MissingHeader),
    };
    if header.iter().all(|h| h.is_empty()) {
        return Err(DataError::MissingHeader);
    }
    let columns: Vec<Column> = header
        .iter()
        .map(|h| {
            if let Some(stem) = h.strip_suffix('+') {
                Column::Objective(stem.to_string(), Direction::Maximize)
            } else if let Some(stem) = h.strip_suffix('-') {
                Column::Objective(stem.to_string(), Direction::Minimize)
            } else {
                Column::Feature(h.to_string())
            }
        })
        .collect();
    if !columns.iter().any(|c| matches!(c, Column::Objective(..))) {
        return Err(DataError::NoObjectiveColumns);
    }
    if !columns.iter().any(|c| matches!(c, Column::Feature(..))) {
        return Err(DataError::NoFeatureColumns);
    }

    let width = columns.len();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); width];
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != width {
            return Err(DataError::RaggedRow { row: i + 1, found: rec.len(), expected: width });
        }
        for (col, cell) in rec.iter().enumerate() {
            cells[col].push(cell.to_string());
        }
    }
    let n_rows = cells[0].len();
    if n_rows < 2 {
        return Err(DataError::TooFewRows(n_rows));
    }

    let mut warnings = Vec::new();
    let mut features = Vec::new();
    let mut objectives = Vec::new();
    let mut feature_cols: Vec<Vec<Value>> = Vec::new();
    let mut objective_cols: Vec<Vec<f64>> = Vec::new();

    for (col, column) in columns.iter().enumerate() {
        let raw = &cells[col];
        match column {
            Column::Feature(fname) => {
                let numeric = parse_numeric(raw);
                let all_empty = raw.iter().all(|c| c.is_empty());
                if all_empty {
                    return Err(DataError::EmptyColumn(fname.clone()));
                }
                if let Some(parsed) = numeric {
                    let (values, spec) = numeric_feature(fname, parsed, &mut warnings);
                    features.push(spec);
                    feature_cols.push(values);
                } else {
                    let (values, spec) = symbolic_feature(fname, raw, &mut warnings);
                    features.push(spec);
                    feature_cols.push(values);
                }
            }
            Column::Objective(oname, direction) => {
                let parsed = match parse_numeric(raw) {
                    Some(p) => p,
                    None => {
                        let (row, value) = raw
                            .iter()
                            .enumerate()
                            .find(|(_, c)| !c.is_empty() && c.parse::<f64>().map(|x| !x.is_finite()).unwrap_or(true))
                            .map(|(r, c)| (r + 1, c.clone()))
                            .unwrap_or((0, String::new()));
                        return Err(DataError::NonNumericInNumericColumn { column: header[col].to_string(), row, value });
                    }
                };
                if parsed.iter().all(Option::is_none) {
                    return Err(DataError::EmptyColumn(oname.clone()));
                }
                let present: Vec<f64> = parsed.iter().flatten().copied().collect();
                let fill = median(&present);
                let missing = parsed.iter().filter(|p| p.is_none()).count();
                if missing > 0 {
                    warnings.push(format!("objective `{oname}`: imputed {missing} missing cell(s) with median {fill}"));
                }
                let values: Vec<f64> = parsed.into_iter().map(|p| p.unwrap_or(fill)).collect();
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi == lo {
                    warnings.push(format!("objective `{oname}` has a degenerate range; it normalizes to 0"));
                }
                objectives.push(ObjectiveSpec { name: oname.clone(), direction: *direction, lo, hi });
                objective_cols.push(values);
            }
        }
    }
    for w in &warnings {
        log::warn!("{name}: {w}");
    }

    let rows = (0..n_rows)
        .map(|r| Row {
            features: feature_cols.iter().map(|c| c[r].clone()).collect(),
            objectives: objective_cols.iter().map(|c| c[r]).collect(),
        })
        .collect();
    let tier = dimensional_tier(features.len());
    Ok(Dataset { name: name.to_string(), features, objectives, rows, tier, warnings })
}

/// `Some` iff every non-empty cell is a finite real; empty cells map to `None`.
fn parse_numeric(raw: &[String]) -> Option<Vec<Option<f64>>> {
    raw.iter()
        .map(|c| {
            if c.is_empty() {
                Some(None)
            } else {
                match c.parse::<f64>() {
                    Ok(x) if x.is_finite() => Some(Some(x)),
                    _ => None,
                }
            }
        })
        .collect()
}

fn numeric_feature(name: &str, parsed: Vec<Option<f64>>, warnings: &mut Vec<String>) -> (Vec<Value>, FeatureSpec) {
    let present: Vec<f64> = parsed.iter().flatten().copied().collect();
    let med = median(&present);
    let missing = parsed.len() - present.len();
    if missing > 0 {
        warnings.push(format!("feature `{name}`: imputed {missing} missing cell(s) with median {med}"));
    }
    let values: Vec<f64> = parsed.into_iter().map(|p| p.unwrap_or(med)).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spec = FeatureSpec {
        name: name.to_string(),
        domain: FeatureDomain::Numeric { lo, hi },
        median_or_mode: Value::Num(med),
    };
    (values.into_iter().map(Value::Num).collect(), spec)
}

fn symbolic_feature(name: &str, raw: &[String], warnings: &mut Vec<String>) -> (Vec<Value>, FeatureSpec) {
    let present: Vec<&str> = raw.iter().filter(|c| !c.is_empty()).map(String::as_str).collect();
    let most = mode(&present).to_string();
    let missing = raw.len() - present.len();
    if missing > 0 {
        warnings.push(format!("feature `{name}`: imputed {missing} missing cell(s) with mode `{most}`"));
    }
    let mut categories: Vec<String> = Vec::new();
    for c in &present {
        if !categories.iter().any(|k| k == c) {
            categories.push((*c).to_string());
        }
    }
    let values = raw
        .iter()
        .map(|c| Value::Sym(if c.is_empty() { most.clone() } else { c.clone() }))
        .collect();
    let spec = FeatureSpec {
        name: name.to_string(),
        domain: FeatureDomain::Symbolic { categories },
        median_or_mode: Value::Sym(most),
    };
    (values, spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub display_name: Option<String>,
}

/// Reads a dataset manifest: one CSV path per line, optionally followed by
/// whitespace and a display name. Blank lines and `#` comments are skipped;
/// relative paths resolve against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| {
            let (p, name) = match line.split_once(char::is_whitespace) {
                Some((p, rest)) => (p, Some(rest.trim().to_string()).filter(|s| !s.is_empty())),
                None => (line, None),
            };
            let p = PathBuf::from(p);
            let resolved = if p.is_absolute() { p } else { base.join(p) };
            ManifestEntry { path: resolved, display_name: name }
        })
        .collect())
}
