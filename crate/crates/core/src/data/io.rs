//! JSON-lines dataset files.
//!
//! The first line is the manifest, `{"n_channels": 5, "time_unit": "days"}`;
//! each further line is one series,
//! `{"series_id": "a", "t_s": 1.0, "obs": [[t, x, c], ...]}`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest, Observation, SplitSample};
use crate::error::{AstgiError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    n_channels: usize,
    #[serde(default)]
    time_unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel_names: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleLine {
    series_id: String,
    t_s: f64,
    obs: Vec<(f64, f64, usize)>,
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (line_no, first) = lines.next().ok_or(AstgiError::Parse {
        line: 1,
        message: "missing manifest line".into(),
    })?;
    let header: ManifestLine = serde_json::from_str(first).map_err(|e| AstgiError::Parse {
        line: line_no,
        message: format!("manifest: {e}"),
    })?;
    if header.n_channels == 0 {
        return Err(AstgiError::Validation("n_channels must be at least 1".into()));
    }

    let mut samples = Vec::new();
    for (line_no, line) in lines {
        let rec: SampleLine = serde_json::from_str(line).map_err(|e| AstgiError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(&(_, _, c)) = rec.obs.iter().find(|o| o.2 >= header.n_channels) {
            return Err(AstgiError::Validation(format!(
                "line {line_no}: series `{}` has channel {c} but n_channels is {}",
                rec.series_id, header.n_channels
            )));
        }
        let obs = rec.obs.iter().map(|&(t, x, c)| Observation::new(t, x, c)).collect();
        let sample = SplitSample::new(rec.series_id, obs, rec.t_s)?;
        if sample.history().is_empty() {
            return Err(AstgiError::Validation(format!(
                "line {line_no}: series `{}` has an empty history",
                sample.series_id
            )));
        }
        samples.push(sample);
    }

    Ok(Dataset {
        manifest: DatasetManifest {
            n_channels: header.n_channels,
            channel_names: header.channel_names,
            time_unit: header.time_unit,
            sample_count: samples.len(),
        },
        samples,
    })
}

pub fn write_dataset(path: &Path, manifest: &DatasetManifest, samples: &[SplitSample]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let header = ManifestLine {
        n_channels: manifest.n_channels,
        time_unit: manifest.time_unit.clone(),
        channel_names: manifest.channel_names.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for s in samples {
        let line = SampleLine {
            series_id: s.series_id.clone(),
            t_s: s.split_time(),
            obs: s.observations().iter().map(|o| (o.t, o.x, o.c)).collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"n_channels":5,"time_unit":"h"}"#;

    #[test]
    fn loads_single_line() {
        let text = format!(
            "{HEADER}\n{}\n",
            r#"{"series_id":"a","t_s":1.0,"obs":[[0.5,2.0,0],[1.5,3.0,1]]}"#
        );
        let ds = parse_dataset(&text).unwrap();
        assert_eq!(ds.manifest.n_channels, 5);
        assert_eq!(ds.manifest.sample_count, 1);
        assert_eq!(ds.samples[0].history().len(), 1);
        assert_eq!(ds.samples[0].queries().len(), 1);
    }

    #[test]
    fn channel_out_of_range_is_validation_error() {
        let text = format!("{HEADER}\n{}\n", r#"{"series_id":"a","t_s":1.0,"obs":[[0.5,2.0,7]]}"#);
        assert!(matches!(parse_dataset(&text), Err(AstgiError::Validation(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!(
            "{HEADER}\n{}\n{{not json\n",
            r#"{"series_id":"a","t_s":1.0,"obs":[[0.5,2.0,0]]}"#
        );
        match parse_dataset(&text) {
            Err(AstgiError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn fractional_channel_is_parse_error() {
        let text = format!("{HEADER}\n{}\n", r#"{"series_id":"a","t_s":1.0,"obs":[[0.5,2.0,1.5]]}"#);
        assert!(matches!(parse_dataset(&text), Err(AstgiError::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_history_names_series() {
        let text = format!("{HEADER}\n{}\n", r#"{"series_id":"late","t_s":0.0,"obs":[[0.5,2.0,0]]}"#);
        let err = parse_dataset(&text).unwrap_err();
        assert!(err.to_string().contains("late"), "{err}");
    }

    #[test]
    fn permuted_observations_load_identically() {
        let a = format!(
            "{HEADER}\n{}\n",
            r#"{"series_id":"a","t_s":1.0,"obs":[[0.5,2.0,0],[0.2,1.0,3],[1.5,3.0,1],[0.2,4.0,1]]}"#
        );
        let b = format!(
            "{HEADER}\n{}\n",
            r#"{"series_id":"a","t_s":1.0,"obs":[[1.5,3.0,1],[0.2,4.0,1],[0.5,2.0,0],[0.2,1.0,3]]}"#
        );
        assert_eq!(parse_dataset(&a).unwrap(), parse_dataset(&b).unwrap());
    }
}
