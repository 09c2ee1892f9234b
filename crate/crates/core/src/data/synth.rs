//! Synthetic irregular multivariate series with cross-channel coupling.
//!
//! Each sample draws a phase `phi` and per-channel amplitudes `a_c`. The
//! noiseless base signal of channel `c` is `a_c * sin(2 pi f_c t + phi)`;
//! the observed value adds `b * base_{(c+1) mod C}(t)` and Gaussian noise.
//!
//! Timestamps follow a homogeneous Poisson process per channel conditioned
//! on the total count: the count is drawn from the configured range, each
//! arrival picks a channel uniformly and a time uniformly in `[0, span]`.
//! Channels are therefore asynchronous and intervals irregular.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest, Observation, SplitSample};
use crate::error::{AstgiError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_channels: usize,
    pub samples: usize,
    pub obs_min: usize,
    pub obs_max: usize,
    pub noise_sigma: f64,
    /// Weight `b` of the neighbouring channel's base signal.
    pub cross_weight: f64,
    /// Length of each series in time units.
    pub span: f64,
    /// Channel frequencies are spread evenly over `[freq_min, freq_max]`.
    pub freq_min: f64,
    pub freq_max: f64,
    pub amp_min: f64,
    pub amp_max: f64,
    /// Fraction of the observed time span placed in the history.
    pub history_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_channels: 4,
            samples: 200,
            obs_min: 40,
            obs_max: 80,
            noise_sigma: 0.05,
            cross_weight: 0.5,
            span: 1.0,
            freq_min: 0.5,
            freq_max: 1.0,
            amp_min: 0.5,
            amp_max: 1.5,
            history_fraction: 2.0 / 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AstgiError::Validation(format!("synth config: {m}")));
        if self.n_channels == 0 {
            return bad("n_channels must be at least 1");
        }
        if self.samples == 0 {
            return bad("samples must be at least 1");
        }
        if self.obs_min < 2 || self.obs_max < self.obs_min {
            return bad("need 2 <= obs_min <= obs_max");
        }
        if !(self.noise_sigma >= 0.0) || !self.cross_weight.is_finite() {
            return bad("noise_sigma must be >= 0 and cross_weight finite");
        }
        if !(self.span > 0.0) || !(self.freq_max >= self.freq_min) || !(self.amp_max >= self.amp_min) {
            return bad("span must be positive and ranges ordered");
        }
        if !(self.history_fraction > 0.0 && self.history_fraction < 1.0) {
            return bad("history_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn frequency(&self, c: usize) -> f64 {
        if self.n_channels == 1 {
            self.freq_min
        } else {
            self.freq_min + (self.freq_max - self.freq_min) * c as f64 / (self.n_channels - 1) as f64
        }
    }
}

pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, config.noise_sigma.max(0.0)).expect("sigma validated");
    let nc = config.n_channels;
    let freqs: Vec<f64> = (0..nc).map(|c| config.frequency(c)).collect();

    let mut samples = Vec::with_capacity(config.samples);
    for idx in 0..config.samples {
        let phase = rng.random_range(0.0..TAU);
        let amps: Vec<f64> = (0..nc)
            .map(|_| {
                if config.amp_max > config.amp_min {
                    rng.random_range(config.amp_min..config.amp_max)
                } else {
                    config.amp_min
                }
            })
            .collect();
        let base = |c: usize, t: f64| amps[c] * (TAU * freqs[c] * t + phase).sin();

        let count = rng.random_range(config.obs_min..=config.obs_max);
        let mut obs = Vec::with_capacity(count);
        for _ in 0..count {
            let c = rng.random_range(0..nc);
            let t = rng.random_range(0.0..config.span);
            let mut x = base(c, t) + config.cross_weight * base((c + 1) % nc, t);
            if config.noise_sigma > 0.0 {
                x += noise.sample(&mut rng);
            }
            obs.push(Observation::new(t, x, c));
        }
        let (t_min, t_max) = obs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| (lo.min(o.t), hi.max(o.t)));
        let t_s = t_min + config.history_fraction * (t_max - t_min);
        samples.push(SplitSample::new(format!("synth-{idx:05}"), obs, t_s)?);
    }

    Ok(Dataset {
        manifest: DatasetManifest {
            n_channels: nc,
            channel_names: None,
            time_unit: "synthetic".into(),
            sample_count: samples.len(),
        },
        samples,
    })
}
