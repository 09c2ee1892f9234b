//! Point representation: every history observation becomes a coordinate
//! `p = e_c ⊕ time_mlp(t)` and an initial feature `h = value_mlp(x)`.

use rand::Rng;

use crate::config::ModelConfig;
use crate::data::SplitSample;
use crate::diffcore::{ModelParams, Tape, Tensor, Var};
use crate::error::{AstgiError, Result};
use crate::nn::{normal, Mlp};

pub const CHANNEL_EMBEDDING: &str = "encoder.channel_embedding";

/// Shortest and longest period of the fixed sinusoidal time features.
pub const FIXED_PERIOD_MIN: f64 = 1e-2;
pub const FIXED_PERIOD_MAX: f64 = 1.0;

pub fn time_mlp(cfg: &ModelConfig) -> Mlp {
    Mlp::new("encoder.time_mlp", 1, cfg.d_model, cfg.d_t)
}

pub fn value_mlp(cfg: &ModelConfig) -> Mlp {
    Mlp::new("encoder.value_mlp", 1, cfg.d_model, cfg.d_model)
}

pub fn init<R: Rng>(cfg: &ModelConfig, params: &mut ModelParams, rng: &mut R) -> Result<()> {
    if cfg.variant.learned_coords() {
        params.insert(CHANNEL_EMBEDDING, normal(&[cfg.n_channels, cfg.d_c], 0.02, rng))?;
        time_mlp(cfg).init(params, rng)?;
    }
    value_mlp(cfg).init(params, rng)
}

/// Encoded history: coordinates and features live on a tape.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub series_id: String,
    /// `[N, d_c + d_t]`
    pub coords: Var,
    /// `[N, d_model]` at `layer`
    pub features: Var,
    pub timestamps: Vec<f64>,
    pub channels: Vec<usize>,
    pub layer: usize,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

pub fn one_hot(c: usize, width: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    if c < width {
        v[c] = 1.0;
    }
    v
}

/// Sinusoids with periods on a geometric ladder between
/// [`FIXED_PERIOD_MIN`] and [`FIXED_PERIOD_MAX`]; even slots use sine, odd
/// slots cosine.
pub fn fixed_time_features(t: f64, width: usize) -> Vec<f64> {
    (0..width)
        .map(|k| {
            let period = if width == 1 {
                FIXED_PERIOD_MAX
            } else {
                let frac = k as f64 / (width - 1) as f64;
                FIXED_PERIOD_MIN * (FIXED_PERIOD_MAX / FIXED_PERIOD_MIN).powf(frac)
            };
            let angle = std::f64::consts::TAU * t / period;
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

fn check_channels(cfg: &ModelConfig, channels: &[usize]) -> Result<()> {
    match channels.iter().find(|&&c| c >= cfg.n_channels) {
        Some(c) => Err(AstgiError::Validation(format!(
            "channel {c} out of range for {} channels",
            cfg.n_channels
        ))),
        None => Ok(()),
    }
}

/// Coordinates for a batch of `(t, c)` pairs, `[n, d_c + d_t]`.
pub fn encode_coords(
    tape: &mut Tape,
    params: &ModelParams,
    cfg: &ModelConfig,
    times: &[f64],
    channels: &[usize],
) -> Result<Var> {
    check_channels(cfg, channels)?;
    let n = times.len();
    if cfg.variant.learned_coords() {
        let table = tape.param(CHANNEL_EMBEDDING, params.get(CHANNEL_EMBEDDING)?);
        let chan = tape.gather_rows(table, channels)?;
        let t_in = tape.constant(Tensor::matrix(n, 1, times.to_vec())?);
        let time = time_mlp(cfg).forward(tape, params, t_in)?;
        tape.concat(&[chan, time], 1)
    } else {
        let mut values = Vec::with_capacity(n * cfg.coord_dim());
        for (&t, &c) in times.iter().zip(channels) {
            values.extend(one_hot(c, cfg.d_c));
            values.extend(fixed_time_features(t, cfg.d_t));
        }
        Ok(tape.constant(Tensor::matrix(n, cfg.coord_dim(), values)?))
    }
}

pub fn encode_history(tape: &mut Tape, params: &ModelParams, cfg: &ModelConfig, sample: &SplitSample) -> Result<PointCloud> {
    let hist = sample.history();
    if hist.is_empty() {
        return Err(AstgiError::EmptyHistory {
            series_id: sample.series_id.clone(),
        });
    }
    let timestamps: Vec<f64> = hist.iter().map(|o| o.t).collect();
    let channels: Vec<usize> = hist.iter().map(|o| o.c).collect();
    let coords = encode_coords(tape, params, cfg, &timestamps, &channels)?;
    let x_in = tape.constant(Tensor::matrix(hist.len(), 1, hist.iter().map(|o| o.x).collect())?);
    let features = value_mlp(cfg).forward(tape, params, x_in)?;
    Ok(PointCloud {
        series_id: sample.series_id.clone(),
        coords,
        features,
        timestamps,
        channels,
        layer: 0,
    })
}

/// Coordinate of a single query point, `[1, d_c + d_t]`.
pub fn encode_query(tape: &mut Tape, params: &ModelParams, cfg: &ModelConfig, t: f64, c: usize) -> Result<Var> {
    encode_coords(tape, params, cfg, &[t], &[c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::data::Observation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(variant: Variant) -> (ModelConfig, ModelParams) {
        let cfg = ModelConfig {
            n_channels: 3,
            d_c: 2,
            d_t: 3,
            d_model: 4,
            variant,
            ..Default::default()
        };
        let mut params = ModelParams::new();
        init(&cfg, &mut params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (cfg, params)
    }

    fn sample(obs: &[(f64, f64, usize)]) -> SplitSample {
        SplitSample::new(
            "s",
            obs.iter().map(|&(t, x, c)| Observation::new(t, x, c)).collect(),
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn coordinate_width_and_shared_point() {
        let (cfg, params) = setup(Variant::Full);
        let mut tape = Tape::new();
        let s = sample(&[(0.4, 1.0, 1), (0.4, -2.0, 1), (0.7, 0.5, 0)]);
        let cloud = encode_history(&mut tape, &params, &cfg, &s).unwrap();
        let coords = tape.value(cloud.coords).clone();
        assert_eq!(coords.shape(), &[3, 5]);
        assert_eq!(coords.row(0), coords.row(1));
        assert_eq!(tape.shape(cloud.features), &[3, 4]);
        assert_ne!(tape.value(cloud.features).row(0), tape.value(cloud.features).row(1));
    }

    #[test]
    fn value_perturbation_changes_features_only() {
        let (cfg, params) = setup(Variant::Full);
        let a = sample(&[(0.1, 1.0, 0), (0.3, 2.0, 2)]);
        let b = a.with_values(&[1.0, 7.0]).unwrap();
        let mut ta = Tape::new();
        let mut tb = Tape::new();
        let ca = encode_history(&mut ta, &params, &cfg, &a).unwrap();
        let cb = encode_history(&mut tb, &params, &cfg, &b).unwrap();
        assert_eq!(ta.value(ca.coords), tb.value(cb.coords));
        assert_eq!(ta.value(ca.features).row(0), tb.value(cb.features).row(0));
        assert_ne!(ta.value(ca.features).row(1), tb.value(cb.features).row(1));
    }

    #[test]
    fn query_matches_history_coordinate() {
        let (cfg, params) = setup(Variant::Full);
        let mut tape = Tape::new();
        let cloud = encode_history(&mut tape, &params, &cfg, &sample(&[(0.25, 3.0, 2)])).unwrap();
        let q = encode_query(&mut tape, &params, &cfg, 0.25, 2).unwrap();
        assert_eq!(tape.value(q).values(), tape.value(cloud.coords).row(0));
        let q2 = encode_query(&mut tape, &params, &cfg, 0.25, 2).unwrap();
        assert_eq!(tape.value(q), tape.value(q2));
    }

    #[test]
    fn channel_change_only_touches_channel_slots() {
        let (cfg, params) = setup(Variant::Full);
        let mut tape = Tape::new();
        let a = encode_query(&mut tape, &params, &cfg, 0.6, 0).unwrap();
        let b = encode_query(&mut tape, &params, &cfg, 0.6, 1).unwrap();
        let (va, vb) = (tape.value(a).values(), tape.value(b).values());
        assert_ne!(va[..2], vb[..2]);
        assert_eq!(va[2..], vb[2..]);
    }

    #[test]
    fn query_channel_out_of_range() {
        let (cfg, params) = setup(Variant::Full);
        let mut tape = Tape::new();
        assert!(matches!(
            encode_query(&mut tape, &params, &cfg, 0.0, 3),
            Err(AstgiError::Validation(_))
        ));
    }

    #[test]
    fn empty_history_error() {
        let (cfg, params) = setup(Variant::Full);
        let s = SplitSample::new("e", vec![Observation::new(20.0, 1.0, 0)], 10.0).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(
            encode_history(&mut tape, &params, &cfg, &s),
            Err(AstgiError::EmptyHistory { .. })
        ));
    }

    #[test]
    fn fixed_encodings_are_frozen() {
        let (cfg, params) = setup(Variant::NoLearnedCoords);
        assert!(!params.contains(CHANNEL_EMBEDDING));
        let mut tape = Tape::new();
        let q = encode_query(&mut tape, &params, &cfg, 0.5, 1).unwrap();
        assert!(!tape.requires_grad(q));
        let v = tape.value(q).values();
        assert_eq!(&v[..2], &[0.0, 1.0]);
        // periods 0.01, 0.1, 1.0 at t = 0.5
        assert!((v[2] - (std::f64::consts::TAU * 50.0).sin()).abs() < 1e-12);
        assert!((v[3] - (std::f64::consts::TAU * 5.0).cos()).abs() < 1e-12);
        assert!((v[4] - (std::f64::consts::PI).sin()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_truncates() {
        assert_eq!(one_hot(1, 3), vec![0.0, 1.0, 0.0]);
        assert_eq!(one_hot(5, 3), vec![0.0, 0.0, 0.0]);
    }
}
