//! Irregular multivariate time series: observations, history/query splits,
//! dataset files, normalization and a synthetic generator.

mod io;
mod normalize;
mod split;
mod synth;

pub use io::{load_dataset, parse_dataset, write_dataset};
pub use normalize::Normalizer;
pub use split::{split_tvt, SplitRatios};
pub use synth::{synth_generate, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{AstgiError, Result};

/// One `(timestamp, value, channel)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: f64,
    pub x: f64,
    pub c: usize,
}

impl Observation {
    pub fn new(t: f64, x: f64, c: usize) -> Self {
        Self { t, x, c }
    }
}

/// A series partitioned at `split_time` into history (`t <= t_s`) and
/// queries (`t > t_s`).
///
/// Observations are kept sorted by `(t, c)`; equal pairs keep their input
/// order. Because of the sort, history is always a prefix of the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSample {
    pub series_id: String,
    observations: Vec<Observation>,
    split_time: f64,
    n_history: usize,
}

impl SplitSample {
    pub fn new(series_id: impl Into<String>, mut observations: Vec<Observation>, split_time: f64) -> Result<Self> {
        let series_id = series_id.into();
        if !split_time.is_finite() {
            return Err(AstgiError::Validation(format!("series `{series_id}`: non-finite t_s")));
        }
        if let Some(o) = observations.iter().find(|o| !o.t.is_finite() || !o.x.is_finite()) {
            return Err(AstgiError::Validation(format!(
                "series `{series_id}`: non-finite observation ({}, {}, {})",
                o.t, o.x, o.c
            )));
        }
        // stable: ties in (t, c) keep input order
        observations.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.c.cmp(&b.c)));
        let n_history = observations.partition_point(|o| o.t <= split_time);
        Ok(Self {
            series_id,
            observations,
            split_time,
            n_history,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn split_time(&self) -> f64 {
        self.split_time
    }

    pub fn history(&self) -> &[Observation] {
        &self.observations[..self.n_history]
    }

    pub fn queries(&self) -> &[Observation] {
        &self.observations[self.n_history..]
    }

    pub fn history_indices(&self) -> std::ops::Range<usize> {
        0..self.n_history
    }

    pub fn query_indices(&self) -> std::ops::Range<usize> {
        self.n_history..self.observations.len()
    }

    pub fn max_channel(&self) -> Option<usize> {
        self.observations.iter().map(|o| o.c).max()
    }

    /// Rebuilds the sample with every observation passed through `f`.
    /// `f` must not reorder history and queries (monotone in time).
    pub(crate) fn map(&self, split_time: f64, f: impl Fn(&Observation) -> Observation) -> Self {
        Self {
            series_id: self.series_id.clone(),
            observations: self.observations.iter().map(f).collect(),
            split_time,
            n_history: self.n_history,
        }
    }

    /// Replaces observation values in place, keeping timestamps and channels.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.observations.len() {
            return Err(AstgiError::Dimension {
                op: "with_values",
                lhs: vec![self.observations.len()],
                rhs: vec![values.len()],
            });
        }
        let mut out = self.clone();
        for (o, &v) in out.observations.iter_mut().zip(values) {
            o.x = v;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_names: Option<Vec<String>>,
    #[serde(default)]
    pub time_unit: String,
    #[serde(default)]
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<SplitSample>,
}
