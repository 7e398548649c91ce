//! Long-format CSV: one row per `(sample_id, step)`, one column per
//! feature, empty cells for missing values and an optional `label` column.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{PotsError, Result};
use crate::sample::{PotsDataset, TimeSeriesSample};

/// Which columns hold what. Feature columns default to every column that
/// is not the id, step or label column, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub sample_id: String,
    pub step: String,
    pub label: Option<String>,
    pub features: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            sample_id: "sample_id".into(),
            step: "step".into(),
            label: Some("label".into()),
            features: None,
        }
    }
}

struct Pending {
    id: u64,
    rows: Vec<(f64, Vec<f64>)>,
    label: Option<Option<usize>>,
}

fn parse_cell(raw: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| {
        PotsError::Format(format!(
            "row {line}: cannot parse {raw:?} in column {column}"
        ))
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(PotsError::Format(format!(
            "row {line}: non-finite value in column {column}"
        )))
    }
}

/// Reads a dataset; rows are grouped by sample id (in order of first
/// appearance) and ordered by step, which also serves as the timestamp.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PotsDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col = find(&schema.sample_id).ok_or_else(|| {
        PotsError::Format(format!(
            "{}: missing column {}",
            path.display(),
            schema.sample_id
        ))
    })?;
    let step_col = find(&schema.step).ok_or_else(|| {
        PotsError::Format(format!(
            "{}: missing column {}",
            path.display(),
            schema.step
        ))
    })?;
    let label_col = schema.label.as_deref().and_then(find);
    let feature_cols: Vec<usize> = match &schema.features {
        Some(names) => names
            .iter()
            .map(|n| {
                find(n).ok_or_else(|| {
                    PotsError::Format(format!("{}: missing feature column {n}", path.display()))
                })
            })
            .collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| i != id_col && i != step_col && Some(i) != label_col)
            .collect(),
    };
    if feature_cols.is_empty() {
        return Err(PotsError::Format(format!(
            "{}: no feature columns",
            path.display()
        )));
    }

    let mut order: Vec<Pending> = Vec::new();
    let mut by_id: HashMap<u64, usize> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let id: u64 = field(id_col).trim().parse().map_err(|_| {
            PotsError::Format(format!("row {line}: bad sample id {:?}", field(id_col)))
        })?;
        let step = parse_cell(field(step_col), line, &schema.step)?;
        let values = feature_cols
            .iter()
            .map(|&c| {
                let raw = field(c);
                if raw.trim().is_empty() {
                    Ok(f64::NAN)
                } else {
                    parse_cell(raw, line, &headers[c])
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = match label_col.map(field).map(str::trim) {
            None | Some("") => None,
            Some(raw) => Some(
                raw.parse::<usize>()
                    .map_err(|_| PotsError::Format(format!("row {line}: bad label {raw:?}")))?,
            ),
        };
        let slot = *by_id.entry(id).or_insert_with(|| {
            order.push(Pending {
                id,
                rows: Vec::new(),
                label: None,
            });
            order.len() - 1
        });
        let pending = &mut order[slot];
        match pending.label {
            None => pending.label = Some(label),
            Some(prev) if prev != label => {
                return Err(PotsError::Format(format!(
                    "row {line}: label changes within sample {id}"
                )))
            }
            _ => {}
        }
        pending.rows.push((step, values));
    }

    let n_steps = order
        .first()
        .map(|p| p.rows.len())
        .ok_or_else(|| PotsError::Format(format!("{}: no data rows", path.display())))?;
    let d = feature_cols.len();
    let mut samples = Vec::with_capacity(order.len());
    for mut p in order {
        if p.rows.len() != n_steps {
            return Err(PotsError::Format(format!(
                "sample {} has {} steps, expected {n_steps}",
                p.id,
                p.rows.len()
            )));
        }
        p.rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let timestamps: Vec<f64> = p.rows.iter().map(|r| r.0).collect();
        let values: Vec<f64> = p.rows.into_iter().flat_map(|r| r.1).collect();
        let sample = TimeSeriesSample::new(p.id, timestamps, values, d, p.label.flatten())
            .map_err(|e| PotsError::Format(e.to_string()))?;
        samples.push(sample);
    }
    let n_classes = samples
        .iter()
        .filter_map(|s| s.label())
        .max()
        .map(|m| m + 1);
    PotsDataset::new(samples, n_steps, d, n_classes)
}

/// Writes `dataset` in the layout [`ingest_csv`] reads with the default
/// schema. Values use the shortest round-trip decimal form.
pub fn export_csv(dataset: &PotsDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let has_labels = dataset.samples().iter().any(|s| s.label().is_some());
    let mut header = vec!["sample_id".to_string(), "step".to_string()];
    header.extend((0..dataset.n_features()).map(|d| format!("f{d}")));
    if has_labels {
        header.push("label".into());
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for s in dataset.samples() {
        for (t, ts) in s.timestamps().iter().enumerate() {
            let mut row = vec![s.sample_id().to_string(), ts.to_string()];
            for d in 0..s.n_features() {
                row.push(s.value(t, d).map(|v| v.to_string()).unwrap_or_default());
            }
            if has_labels {
                row.push(s.label().map(|l| l.to_string()).unwrap_or_default());
            }
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| PotsError::storage(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> PotsError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => PotsError::storage(path, io),
            _ => unreachable!("checked is_io_error"),
        }
    } else {
        PotsError::Format(format!("{}: {e}", path.display()))
    }
}
