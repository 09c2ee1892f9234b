//! Per-channel z-scoring of values and an affine map of timestamps onto the
//! training range, both fit on training history only.

use serde::{Deserialize, Serialize};

use super::SplitSample;

/// Smallest standard deviation a channel may have.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub time_offset: f64,
    pub time_scale: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

impl Normalizer {
    /// Fits statistics on the history observations of `train`; query
    /// observations never contribute. Channels with no training history fall
    /// back to the pooled statistics of all channels.
    pub fn fit(train: &[SplitSample], n_channels: usize) -> Self {
        let mut per_channel: Vec<Vec<f64>> = vec![Vec::new(); n_channels];
        let mut all = Vec::new();
        let mut t_min = f64::INFINITY;
        let mut t_max = f64::NEG_INFINITY;
        for s in train {
            for o in s.history() {
                if o.c < n_channels {
                    per_channel[o.c].push(o.x);
                }
                all.push(o.x);
                t_min = t_min.min(o.t);
                t_max = t_max.max(o.t);
            }
        }
        let global = if all.is_empty() { (0.0, 1.0) } else { mean_std(&all) };
        let (mean, std) = per_channel
            .iter()
            .enumerate()
            .map(|(c, vals)| {
                if vals.is_empty() {
                    log::warn!("channel {c} has no training history; using pooled statistics");
                    global
                } else {
                    mean_std(vals)
                }
            })
            .unzip();
        let (time_offset, time_scale) = if t_min.is_finite() && t_max > t_min {
            (t_min, t_max - t_min)
        } else if t_min.is_finite() {
            (t_min, 1.0)
        } else {
            (0.0, 1.0)
        };
        Self {
            mean,
            std,
            time_offset,
            time_scale,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_value(&self, x: f64, c: usize) -> f64 {
        (x - self.mean[c]) / self.std[c]
    }

    pub fn invert_value(&self, z: f64, c: usize) -> f64 {
        z * self.std[c] + self.mean[c]
    }

    pub fn apply_time(&self, t: f64) -> f64 {
        (t - self.time_offset) / self.time_scale
    }

    pub fn invert_time(&self, u: f64) -> f64 {
        u * self.time_scale + self.time_offset
    }

    pub fn apply(&self, sample: &SplitSample) -> SplitSample {
        sample.map(self.apply_time(sample.split_time()), |o| {
            let mut n = *o;
            n.t = self.apply_time(o.t);
            n.x = self.apply_value(o.x, o.c);
            n
        })
    }

    pub fn apply_all(&self, samples: &[SplitSample]) -> Vec<SplitSample> {
        samples.iter().map(|s| self.apply(s)).collect()
    }
}
