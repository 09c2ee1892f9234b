use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Method;
use crate::data::{Normalizer, SplitSample};
use crate::diffcore::ModelParams;
use crate::error::{AstgiError, Result};

/// One line of a predictions file, in raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub series_id: String,
    pub t: f64,
    pub c: usize,
    pub y_pred: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_true: Option<f64>,
}

/// Predicts every query of the normalized `samples` and maps times and
/// values back to raw units.
pub fn predictions_for(
    method: &Method,
    params: &ModelParams,
    samples: &[SplitSample],
    normalizer: &Normalizer,
) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for s in samples {
        let preds = method.predict(params, s)?;
        for (o, y) in s.queries().iter().zip(preds) {
            out.push(PredictionRecord {
                series_id: s.series_id.clone(),
                t: normalizer.invert_time(o.t),
                c: o.c,
                y_pred: normalizer.invert_value(y, o.c),
                y_true: Some(normalizer.invert_value(o.x, o.c)),
            });
        }
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AstgiError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
