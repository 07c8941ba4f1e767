//! Long-format CSV ingestion: one observation per row, grouped into
//! per-subject design blocks.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use stlmm::model::{ColumnMeta, LongDataset, SubjectBlock};

/// Which named columns feed the response and design matrices. The literal
/// name "1" denotes the intercept pseudo-column.
#[derive(Debug, Clone)]
pub struct IngestSpec {
    pub subject: String,
    pub response: String,
    pub fixed: Vec<String>,
    pub random: Vec<String>,
}

enum ColumnSource {
    Intercept,
    Index(usize),
}

/// Reads a long-format CSV (header required) into a dataset. Rows are
/// grouped by the subject column, preserving file order within each subject;
/// missing or non-numeric cells in used columns are reported with their row
/// and column.
pub fn ingest_long_csv(path: &Path, spec: &IngestSpec) -> Result<LongDataset, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let headers = reader
        .headers()
        .map_err(|e| format!("cannot read header of {}: {e}", path.display()))?
        .clone();
    let col_index = |name: &str| -> Result<usize, String> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format!("unknown column {name:?} (header has: {})", headers.iter().collect::<Vec<_>>().join(", ")))
    };
    let resolve = |name: &str| -> Result<ColumnSource, String> {
        if name == "1" {
            Ok(ColumnSource::Intercept)
        } else {
            Ok(ColumnSource::Index(col_index(name)?))
        }
    };

    let subject_col = col_index(&spec.subject)?;
    let response_col = col_index(&spec.response)?;
    let fixed: Vec<ColumnSource> = spec.fixed.iter().map(|n| resolve(n)).collect::<Result<_, _>>()?;
    let random: Vec<ColumnSource> = spec.random.iter().map(|n| resolve(n)).collect::<Result<_, _>>()?;
    if fixed.is_empty() {
        return Err("at least one fixed-effect column is required".into());
    }
    if random.is_empty() {
        return Err("at least one random-effect column is required".into());
    }

    struct Rows {
        y: Vec<f64>,
        x: Vec<f64>,
        z: Vec<f64>,
    }
    let mut by_subject: HashMap<String, Rows> = HashMap::new();
    let mut order: Vec<String> = Vec::new();

    for (rec_idx, record) in reader.records().enumerate() {
        // +2: one for the header, one for 1-based numbering.
        let line = rec_idx + 2;
        let record = record.map_err(|e| format!("row {line}: {e}"))?;
        let cell = |src: &ColumnSource, role: &str| -> Result<f64, String> {
            match src {
                ColumnSource::Intercept => Ok(1.0),
                ColumnSource::Index(i) => {
                    let raw = record.get(*i).unwrap_or("");
                    if raw.is_empty() {
                        return Err(format!("row {line}: missing value in column {:?}", &headers[*i]));
                    }
                    raw.parse::<f64>().map_err(|_| {
                        format!("row {line}: non-numeric value {raw:?} in {role} column {:?}", &headers[*i])
                    })
                }
            }
        };
        let subject = record
            .get(subject_col)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| format!("row {line}: missing subject id"))?
            .to_string();
        let y = cell(&ColumnSource::Index(response_col), "response")?;
        let entry = by_subject.entry(subject.clone()).or_insert_with(|| {
            order.push(subject.clone());
            Rows { y: Vec::new(), x: Vec::new(), z: Vec::new() }
        });
        entry.y.push(y);
        for src in &fixed {
            entry.x.push(cell(src, "fixed")?);
        }
        for src in &random {
            entry.z.push(cell(src, "random")?);
        }
    }

    if order.is_empty() {
        return Err(format!("{} contains no data rows", path.display()));
    }
    let p = fixed.len();
    let q = random.len();
    let subjects = order
        .into_iter()
        .map(|id| {
            let rows = by_subject.remove(&id).expect("tracked subject");
            let n = rows.y.len();
            SubjectBlock::new(
                id,
                DVector::from_vec(rows.y),
                DMatrix::from_row_slice(n, p, &rows.x),
                DMatrix::from_row_slice(n, q, &rows.z),
            )
            .map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let meta = ColumnMeta {
        subject: spec.subject.clone(),
        response: spec.response.clone(),
        fixed: spec.fixed.clone(),
        random: spec.random.clone(),
    };
    LongDataset::new(subjects, Some(meta)).map_err(|e| e.to_string())
}
