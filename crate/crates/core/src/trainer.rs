//! Training loop: mini-batch AdamW on the query MSE, validation-based early
//! stopping, pooled evaluation and multi-seed aggregation.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::{split_tvt, Dataset, Normalizer, SplitRatios, SplitSample};
use crate::diffcore::{AdamW, AdamWConfig, Checkpoint, ModelParams, Tape, Tensor};
use crate::error::{AstgiError, Result};
use crate::model::AstgiModel;

pub const DEFAULT_SEEDS: [u64; 5] = [2024, 2025, 2026, 2027, 2028];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adamw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Smallest drop in validation MSE that resets patience.
    pub min_delta: f64,
    /// Seed for initialization and batch order of a single run.
    pub seed: u64,
    /// Seeds of the multi-run protocol.
    pub seeds: Vec<u64>,
    /// Seed of the train/val/test shuffle, shared by every run.
    pub split_seed: u64,
    pub split: SplitRatios,
    /// 64-bit arithmetic. Only 64-bit is implemented.
    pub f64: bool,
    pub model: ModelConfig,
    /// Where to write the parameters if training diverges.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence_snapshot: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adamw,
            lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 300,
            patience: 5,
            batch_size: 32,
            min_delta: 1e-6,
            seed: DEFAULT_SEEDS[0],
            seeds: DEFAULT_SEEDS.to_vec(),
            split_seed: DEFAULT_SEEDS[0],
            split: SplitRatios::default(),
            f64: true,
            model: ModelConfig::default(),
            divergence_snapshot: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.f64 {
            return Err(AstgiError::Validation(
                "32-bit arithmetic is not supported; run in 64-bit".into(),
            ));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(AstgiError::Validation(
                "max_epochs, patience and batch_size must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(AstgiError::Validation("lr must be > 0 and weight_decay >= 0".into()));
        }
        self.model.validate()
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Normalized train/val/test splits and the statistics used to produce them.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<SplitSample>,
    pub val: Vec<SplitSample>,
    pub test: Vec<SplitSample>,
    pub normalizer: Normalizer,
}

/// Splits `dataset` and normalizes all three parts with statistics fitted on
/// the training part.
pub fn prepare_data(dataset: &Dataset, ratios: SplitRatios, split_seed: u64) -> Result<PreparedData> {
    let (train, val, test) = split_tvt(&dataset.samples, ratios, split_seed)?;
    let normalizer = Normalizer::fit(&train, dataset.manifest.n_channels);
    Ok(PreparedData {
        train: normalizer.apply_all(&train),
        val: normalizer.apply_all(&val),
        test: normalizer.apply_all(&test),
        normalizer,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub variant: String,
    pub n_params: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub best_val_mae: f64,
    pub stop_reason: StopReason,
    pub test_mse: f64,
    pub test_mae: f64,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// The report without its timing field, for reproducibility checks.
    pub fn metrics_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_time_secs");
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub report: TrainReport,
}

/// Loss and parameter gradients of one sample on a private tape.
pub fn loss_and_grads(
    model: &AstgiModel,
    params: &ModelParams,
    sample: &SplitSample,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, params, sample)?;
    tape.backward(loss)?;
    Ok((tape.value(loss).item(), tape.param_grads()))
}

/// Query MSE of one sample, or `None` (with a warning) when it has no
/// queries.
pub fn loss_on_sample(model: &AstgiModel, params: &ModelParams, sample: &SplitSample) -> Result<Option<f64>> {
    if sample.queries().is_empty() {
        log::warn!("sample `{}` has no queries; skipped", sample.series_id);
        return Ok(None);
    }
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, params, sample)?;
    Ok(Some(tape.value(loss).item()))
}

/// Mean loss and mean gradient over a batch. Per-sample work may run in
/// parallel; the reduction always runs in batch order.
fn batch_step(
    model: &AstgiModel,
    params: &ModelParams,
    batch: &[&SplitSample],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let results: Vec<Result<(f64, BTreeMap<String, Tensor>)>> =
        batch.par_iter().map(|s| loss_and_grads(model, params, s)).collect();
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for r in results {
        let (l, grads) = r?;
        loss += l;
        for (name, g) in grads {
            if let Some(t) = total.get_mut(&name) {
                t.add_assign(&g);
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for g in total.values_mut() {
        g.scale_assign(inv);
    }
    Ok((loss * inv, total))
}

/// Pooled MSE and MAE over every query of every sample. `predictions[i]`
/// lists the predictions for the queries of `samples[i]`.
pub fn pooled_metrics(samples: &[SplitSample], predictions: &[Vec<f64>]) -> Result<Metrics> {
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut count = 0;
    for (s, p) in samples.iter().zip(predictions) {
        if p.len() != s.queries().len() {
            return Err(AstgiError::Dimension {
                op: "pooled_metrics",
                lhs: vec![s.queries().len()],
                rhs: vec![p.len()],
            });
        }
        for (o, y) in s.queries().iter().zip(p) {
            let e = y - o.x;
            se += e * e;
            ae += e.abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(AstgiError::EmptyQuery);
    }
    Ok(Metrics {
        mse: se / count as f64,
        mae: ae / count as f64,
        count,
    })
}

pub fn evaluate(model: &AstgiModel, params: &ModelParams, samples: &[SplitSample]) -> Result<Metrics> {
    let preds: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| {
            if s.queries().is_empty() {
                Ok(Vec::new())
            } else {
                model.predict(params, s)
            }
        })
        .collect::<Result<_>>()?;
    pooled_metrics(samples, &preds)
}

fn snapshot_on_divergence(cfg: &TrainConfig, params: &ModelParams, epoch: usize, loss: f64) -> AstgiError {
    let bad: Vec<&String> = params
        .iter()
        .filter(|(_, t)| !t.all_finite())
        .map(|(n, _)| n)
        .collect();
    log::error!("non-finite loss {loss} at epoch {epoch}; non-finite parameters: {bad:?}");
    if let Some(path) = &cfg.divergence_snapshot {
        let config = serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null);
        match Checkpoint::new(params, config, cfg.seed).save(path) {
            Ok(()) => log::error!("diagnostic snapshot written to {}", path.display()),
            Err(e) => log::error!("could not write diagnostic snapshot: {e}"),
        }
    }
    AstgiError::Divergence { epoch, loss }
}

pub fn train(cfg: &TrainConfig, data: &PreparedData) -> Result<TrainOutcome> {
    train_with(cfg, data, |_| {})
}

/// Trains from scratch with `cfg.seed`, calling `on_epoch` after every
/// epoch. Returns the parameters of the best validation epoch.
pub fn train_with(cfg: &TrainConfig, data: &PreparedData, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let model = AstgiModel::new(cfg.model.clone())?;
    let mut params = model.init_params(cfg.seed)?;
    let mut opt = AdamW::new(cfg.adamw());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let train: Vec<&SplitSample> = data
        .train
        .iter()
        .filter(|s| {
            let keep = !s.queries().is_empty();
            if !keep {
                log::warn!("sample `{}` has no queries; skipped", s.series_id);
            }
            keep
        })
        .collect();
    if train.is_empty() {
        return Err(AstgiError::Validation("no training sample has queries".into()));
    }

    let mut epochs = Vec::new();
    let mut best: Option<(usize, Metrics, ModelParams)> = None;
    let mut reference = f64::INFINITY;
    let mut stale = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SplitSample> = chunk.iter().map(|&i| train[i]).collect();
            let (loss, grads) = batch_step(&model, &params, &batch)?;
            if !loss.is_finite() {
                return Err(snapshot_on_divergence(cfg, &params, epoch, loss));
            }
            loss_sum += loss * batch.len() as f64;
            opt.step(&mut params, &grads)?;
        }
        let val = evaluate(&model, &params, &data.val)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_mse: val.mse,
            val_mae: val.mae,
        };
        log::info!(
            "epoch {epoch} train_loss {:.6} val_mse {:.6} val_mae {:.6}",
            record.train_loss,
            val.mse,
            val.mae
        );
        on_epoch(&record);
        epochs.push(record);

        if !val.mse.is_finite() {
            return Err(snapshot_on_divergence(cfg, &params, epoch, val.mse));
        }
        if best.as_ref().is_none_or(|(_, m, _)| val.mse < m.mse) {
            best = Some((epoch, val, params.clone()));
        }
        if reference - val.mse >= cfg.min_delta {
            reference = val.mse;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }

    let (best_epoch, best_val, params) = best.expect("at least one epoch ran");
    let test = evaluate(&model, &params, &data.test)?;
    let report = TrainReport {
        seed: cfg.seed,
        variant: cfg.model.variant.to_string(),
        n_params: params.numel(),
        epochs,
        best_epoch,
        best_val_mse: best_val.mse,
        best_val_mae: best_val.mae,
        stop_reason,
        test_mse: test.mse,
        test_mae: test.mae,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { params, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation. A single value has std 0.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 || values.iter().all(|&v| v == values[0]) {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub runs: usize,
    pub mse: MeanStd,
    pub mae: MeanStd,
}

pub fn aggregate_seeds(reports: &[TrainReport]) -> SeedSummary {
    if reports.len() < 2 {
        log::warn!("aggregating {} run(s); std reported as 0", reports.len());
    }
    let mse: Vec<f64> = reports.iter().map(|r| r.test_mse).collect();
    let mae: Vec<f64> = reports.iter().map(|r| r.test_mae).collect();
    SeedSummary {
        runs: reports.len(),
        mse: mean_std(&mse),
        mae: mean_std(&mae),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, Observation, SynthConfig};

    fn report(mse: f64) -> TrainReport {
        TrainReport {
            seed: 0,
            variant: "full".into(),
            n_params: 0,
            epochs: vec![],
            best_epoch: 1,
            best_val_mse: 0.0,
            best_val_mae: 0.0,
            stop_reason: StopReason::MaxEpochs,
            test_mse: mse,
            test_mae: mse,
            wall_time_secs: 0.0,
        }
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            max_epochs: 3,
            batch_size: 4,
            model: ModelConfig {
                n_channels: 2,
                d_c: 2,
                d_t: 2,
                d_model: 4,
                k: 3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn tiny_data() -> PreparedData {
        let ds = synth_generate(
            &SynthConfig {
                n_channels: 2,
                samples: 12,
                obs_min: 6,
                obs_max: 10,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        prepare_data(&ds, SplitRatios::default(), 7).unwrap()
    }

    #[test]
    fn default_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.max_epochs, c.patience, c.batch_size), (300, 5, 32));
        assert_eq!(c.optimizer, Optimizer::Adamw);
        assert_eq!(c.seeds, vec![2024, 2025, 2026, 2027, 2028]);
        assert_eq!((c.lr, c.weight_decay), (1e-3, 1e-4));
        assert_eq!(c.split, SplitRatios { train: 0.8, val: 0.1, test: 0.1 });
    }

    #[test]
    fn rejects_32_bit_and_zero_epochs() {
        let c = TrainConfig { f64: false, ..Default::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { max_epochs: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn seed_statistics() {
        let s = aggregate_seeds(&[report(0.1), report(0.3)]);
        assert!((s.mse.mean - 0.2).abs() < 1e-15);
        assert!((s.mse.std - 0.02f64.sqrt()).abs() < 1e-12);
        let swapped = aggregate_seeds(&[report(0.3), report(0.1)]);
        assert_eq!(s.mse.std, swapped.mse.std);
        assert_eq!(aggregate_seeds(&[report(0.5), report(0.5)]).mse.std, 0.0);
        assert_eq!(aggregate_seeds(&[report(0.5)]).mse.std, 0.0);
    }

    #[test]
    fn pooled_metric_cases() {
        let s = SplitSample::new(
            "m",
            vec![Observation::new(0.0, 0.0, 0), Observation::new(1.0, 1.0, 0), Observation::new(2.0, -1.0, 0)],
            0.5,
        )
        .unwrap();
        let m = pooled_metrics(std::slice::from_ref(&s), &[vec![1.0, -1.0]]).unwrap();
        assert_eq!((m.mse, m.mae, m.count), (0.0, 0.0, 2));
        let m = pooled_metrics(std::slice::from_ref(&s), &[vec![2.0, -2.0]]).unwrap();
        assert_eq!((m.mse, m.mae), (1.0, 1.0));
        let m = pooled_metrics(std::slice::from_ref(&s), &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(m.mse, 1.0);
    }

    #[test]
    fn sample_without_queries_is_skipped() {
        let cfg = tiny_config();
        let model = AstgiModel::new(cfg.model.clone()).unwrap();
        let p = model.init_params(0).unwrap();
        let s = SplitSample::new("q", vec![Observation::new(0.0, 1.0, 0)], 1.0).unwrap();
        assert_eq!(loss_on_sample(&model, &p, &s).unwrap(), None);
    }

    #[test]
    fn report_is_consistent() {
        let cfg = tiny_config();
        let data = tiny_data();
        let mut seen = 0;
        let out = train_with(&cfg, &data, |_| seen += 1).unwrap();
        let r = &out.report;
        assert_eq!(seen, r.epochs.len());
        let min = r.epochs.iter().map(|e| e.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_val_mse, min);
        let model = AstgiModel::new(cfg.model.clone()).unwrap();
        assert_eq!(evaluate(&model, &out.params, &data.val).unwrap().mse, r.best_val_mse);
        assert_eq!(r.stop_reason, StopReason::MaxEpochs);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config();
        let data = tiny_data();
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.report.metrics_json(), b.report.metrics_json());
        assert_eq!(a.params, b.params);
    }
}
