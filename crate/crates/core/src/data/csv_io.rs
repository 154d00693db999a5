//! CSV ingestion and export.
//!
//! Schema (header required): `y` for continuous/binary outcomes or
//! `time,status` for survival, then the `z` columns (auxiliaries included),
//! the `x` columns, `r`, and optionally `pi`. Cells are decimal-point UTF-8,
//! comma separated; an empty cell means missing. Expensive-covariate cells
//! must be empty exactly when `r = 0`.

use super::{DataError, Design, DesignSpec, Outcome, Subject, TwoPhaseDataset};
use nalgebra::DVector;
use std::collections::HashMap;
use std::path::Path;

/// Which columns carry the outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomeColumns {
    Continuous { y: String },
    Binary { y: String },
    Survival { time: String, status: String },
}

/// Column mapping for [`load_csv`] / [`write_csv`].
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub outcome: OutcomeColumns,
    pub z: Vec<String>,
    pub x: Vec<String>,
    pub r: String,
    pub pi: Option<String>,
}

fn parse_field(raw: &str, col: &str, row: usize) -> Result<f64, DataError> {
    raw.trim().parse::<f64>().map_err(|_| {
        DataError::SchemaMismatch(format!("column `{col}` row {row}: cannot parse `{raw}`"))
    })
}

fn column_index(
    headers: &HashMap<String, usize>,
    name: &str,
) -> Result<usize, DataError> {
    headers
        .get(name)
        .copied()
        .ok_or_else(|| DataError::SchemaMismatch(format!("missing column `{name}`")))
}

/// Loads a two-phase dataset. `pi` is read from its column when mapped;
/// otherwise `design` must be given and the weights are computed from it.
pub fn load_csv(
    path: &Path,
    schema: &CsvSchema,
    design: Option<&DesignSpec>,
) -> Result<TwoPhaseDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DataError::SchemaMismatch(format!("cannot open {}: {e}", path.display())))?;
    let headers: HashMap<String, usize> = reader
        .headers()
        .map_err(|e| DataError::SchemaMismatch(e.to_string()))?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();

    let outcome_cols = match &schema.outcome {
        OutcomeColumns::Continuous { y } | OutcomeColumns::Binary { y } => {
            vec![column_index(&headers, y)?]
        }
        OutcomeColumns::Survival { time, status } => vec![
            column_index(&headers, time)?,
            column_index(&headers, status)?,
        ],
    };
    let z_cols: Vec<usize> = schema
        .z
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<_, _>>()?;
    let x_cols: Vec<usize> = schema
        .x
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<_, _>>()?;
    let r_col = column_index(&headers, &schema.r)?;
    let pi_col = schema
        .pi
        .as_ref()
        .map(|c| column_index(&headers, c))
        .transpose()?;

    let mut subjects = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::SchemaMismatch(e.to_string()))?;
        let field = |idx: usize| record.get(idx).unwrap_or("");

        let outcome = match &schema.outcome {
            OutcomeColumns::Continuous { y } => {
                Outcome::Continuous(parse_field(field(outcome_cols[0]), y, row)?)
            }
            OutcomeColumns::Binary { y } => {
                let v = parse_field(field(outcome_cols[0]), y, row)?;
                if v != 0.0 && v != 1.0 {
                    return Err(DataError::SchemaMismatch(format!(
                        "column `{y}` row {row}: binary outcome must be 0 or 1"
                    )));
                }
                Outcome::Binary(v as u8)
            }
            OutcomeColumns::Survival { time, status } => {
                let t = parse_field(field(outcome_cols[0]), time, row)?;
                let s = parse_field(field(outcome_cols[1]), status, row)?;
                if s != 0.0 && s != 1.0 {
                    return Err(DataError::SchemaMismatch(format!(
                        "column `{status}` row {row}: status must be 0 or 1"
                    )));
                }
                if t < 0.0 {
                    return Err(DataError::SchemaMismatch(format!(
                        "column `{time}` row {row}: negative time"
                    )));
                }
                Outcome::Survival {
                    time: t,
                    event: s == 1.0,
                }
            }
        };

        let z = DVector::from_iterator(
            z_cols.len(),
            z_cols
                .iter()
                .map(|&c| parse_field(field(c), "z", row))
                .collect::<Result<Vec<_>, _>>()?,
        );

        let r_val = parse_field(field(r_col), &schema.r, row)?;
        if r_val != 0.0 && r_val != 1.0 {
            return Err(DataError::SchemaMismatch(format!(
                "column `{}` row {row}: r must be 0 or 1",
                schema.r
            )));
        }
        let r = r_val == 1.0;

        let x_fields: Vec<&str> = x_cols.iter().map(|&c| field(c)).collect();
        let any_present = x_fields.iter().any(|f| !f.trim().is_empty());
        let all_present = x_fields.iter().all(|f| !f.trim().is_empty());
        let x = if r {
            if !all_present {
                return Err(DataError::InconsistentMissingness { row });
            }
            Some(DVector::from_iterator(
                x_cols.len(),
                x_fields
                    .iter()
                    .map(|f| parse_field(f, "x", row))
                    .collect::<Result<Vec<_>, _>>()?,
            ))
        } else {
            if any_present {
                return Err(DataError::InconsistentMissingness { row });
            }
            None
        };

        let pi = match pi_col {
            Some(c) => {
                let v = parse_field(field(c), schema.pi.as_ref().unwrap(), row)?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err(DataError::NonPositiveWeight { row });
                }
                v
            }
            // Placeholder until the design pass below fills them in.
            None => 1.0,
        };

        subjects.push(Subject { outcome, z, x, r, pi });
    }

    let mut dataset = TwoPhaseDataset::new(
        subjects,
        schema.x.len(),
        schema.z.len(),
        Design::Supplied,
    )?;
    if pi_col.is_none() {
        let design = design.ok_or_else(|| {
            DataError::SchemaMismatch(
                "no pi column mapped and no sampling design declared".to_string(),
            )
        })?;
        super::compute_design_weights(&mut dataset, design)?;
    }
    Ok(dataset)
}

fn format_value(v: f64) -> String {
    // Shortest representation that round-trips f64.
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// Writes a dataset using the same column layout [`load_csv`] reads.
pub fn write_csv(path: &Path, dataset: &TwoPhaseDataset, schema: &CsvSchema) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| DataError::SchemaMismatch(format!("cannot create {}: {e}", path.display())))?;
    let mut header: Vec<String> = Vec::new();
    match &schema.outcome {
        OutcomeColumns::Continuous { y } | OutcomeColumns::Binary { y } => header.push(y.clone()),
        OutcomeColumns::Survival { time, status } => {
            header.push(time.clone());
            header.push(status.clone());
        }
    }
    header.extend(schema.z.iter().cloned());
    header.extend(schema.x.iter().cloned());
    header.push(schema.r.clone());
    if let Some(pi) = &schema.pi {
        header.push(pi.clone());
    }
    writer
        .write_record(&header)
        .map_err(|e| DataError::SchemaMismatch(e.to_string()))?;

    for s in dataset.subjects() {
        let mut record: Vec<String> = Vec::new();
        match &s.outcome {
            Outcome::Continuous(y) => record.push(format_value(*y)),
            Outcome::Binary(y) => record.push(format!("{y}")),
            Outcome::Survival { time, event } => {
                record.push(format_value(*time));
                record.push(if *event { "1".into() } else { "0".into() });
            }
        }
        for v in s.z.iter() {
            record.push(format_value(*v));
        }
        match &s.x {
            Some(x) => {
                for v in x.iter() {
                    record.push(format_value(*v));
                }
            }
            None => {
                for _ in 0..dataset.x_dim() {
                    record.push(String::new());
                }
            }
        }
        record.push(if s.r { "1".into() } else { "0".into() });
        if schema.pi.is_some() {
            record.push(format_value(s.pi));
        }
        writer
            .write_record(&record)
            .map_err(|e| DataError::SchemaMismatch(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| DataError::SchemaMismatch(e.to_string()))?;
    Ok(())
}
