use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{build_variant, Method, VariantTag};
use crate::config::ModelConfig;
use crate::data::{load_dataset, synth_generate, Dataset, SynthConfig};
use crate::diffcore::ModelParams;
use crate::error::{AstgiError, Result};
use crate::trainer::{aggregate_seeds, mean_std, train, Metrics, PreparedData, TrainConfig, TrainReport};

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    /// Dataset file; the synthetic generator is used when absent.
    pub dataset: Option<PathBuf>,
    pub synth: SynthConfig,
    pub synth_seed: u64,
    pub variants: Vec<VariantTag>,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            dataset: None,
            synth: SynthConfig::default(),
            synth_seed: 2024,
            variants: VariantTag::ALL.to_vec(),
            train: TrainConfig::default(),
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentSpec {
    /// The dataset and a short name for result tables.
    pub fn load_data(&self) -> Result<(String, Dataset)> {
        match &self.dataset {
            Some(path) => {
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "dataset".into());
                Ok((name, load_dataset(path)?))
            }
            None => Ok(("synthetic".into(), synth_generate(&self.synth, self.synth_seed)?)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: VariantTag,
    pub seed: u64,
    pub method: Method,
    pub params: ModelParams,
    pub test: Metrics,
    /// Present for trained variants.
    pub report: Option<TrainReport>,
    pub runtime_secs: f64,
}

/// Trains (or, for baselines, just evaluates) one variant with one seed.
/// Every model variant goes through the same trainer; only the model
/// configuration differs.
pub fn run_variant(tag: VariantTag, cfg: &TrainConfig, data: &PreparedData, seed: u64) -> Result<RunResult> {
    let start = Instant::now();
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    cfg.model.n_channels = data.normalizer.n_channels();
    if let Some(v) = tag.model_variant() {
        cfg.model.variant = v;
    }
    let method = build_variant(tag.as_str(), &cfg.model)?;
    let (params, test, report) = if method.is_trainable() {
        let out = train(&cfg, data)?;
        let test = method.evaluate(&out.params, &data.test)?;
        (out.params, test, Some(out.report))
    } else {
        let params = ModelParams::new();
        let test = method.evaluate(&params, &data.test)?;
        (params, test, None)
    };
    Ok(RunResult {
        variant: tag,
        seed,
        method,
        params,
        test,
        report,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: VariantTag,
    pub dataset: String,
    pub runs: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub runtime_secs: f64,
}

impl ResultRow {
    pub fn from_runs(dataset: &str, runs: &[RunResult]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| AstgiError::Validation("cannot summarize zero runs".into()))?;
        let (mse, mae) = if runs.iter().all(|r| r.report.is_some()) {
            let reports: Vec<TrainReport> = runs.iter().filter_map(|r| r.report.clone()).collect();
            let s = aggregate_seeds(&reports);
            (s.mse, s.mae)
        } else {
            let mse: Vec<f64> = runs.iter().map(|r| r.test.mse).collect();
            let mae: Vec<f64> = runs.iter().map(|r| r.test.mae).collect();
            (mean_std(&mse), mean_std(&mae))
        };
        Ok(Self {
            variant: first.variant,
            dataset: dataset.to_string(),
            runs: runs.len(),
            mse_mean: mse.mean,
            mse_std: mse.std,
            mae_mean: mae.mean,
            mae_std: mae.std,
            runtime_secs: runs.iter().map(|r| r.runtime_secs).sum(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn get(&self, tag: VariantTag) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.variant == tag)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        super::write_csv(path, &self.rows)
    }
}

/// Runs every variant of `spec` over every seed of `spec.train.seeds`.
pub fn ablate(spec: &ExperimentSpec, dataset: &str, data: &PreparedData) -> Result<(ResultTable, Vec<RunResult>)> {
    let mut table = ResultTable::default();
    let mut all = Vec::new();
    for &tag in &spec.variants {
        let mut runs = Vec::with_capacity(spec.train.seeds.len());
        for &seed in &spec.train.seeds {
            let run = run_variant(tag, &spec.train, data, seed)?;
            log::info!("{tag} seed {seed}: test mse {:.6} mae {:.6}", run.test.mse, run.test.mae);
            runs.push(run);
        }
        table.rows.push(ResultRow::from_runs(dataset, &runs)?);
        all.extend(runs);
    }
    Ok((table, all))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    K,
    L,
    DModel,
    DC,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::K => "k",
            SweepParam::L => "l",
            SweepParam::DModel => "d_model",
            SweepParam::DC => "d_c",
        }
    }

    pub fn default_grid(self) -> Vec<usize> {
        match self {
            SweepParam::K => vec![2, 4, 8, 16, 32],
            SweepParam::L => vec![1, 2, 3, 4],
            SweepParam::DModel => vec![16, 32, 64, 128],
            SweepParam::DC => vec![2, 4, 8, 16],
        }
    }

    pub fn apply(self, cfg: &mut ModelConfig, value: usize) {
        match self {
            SweepParam::K => cfg.k = value,
            SweepParam::L => cfg.layers = value,
            SweepParam::DModel => cfg.d_model = value,
            SweepParam::DC => cfg.d_c = value,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = AstgiError;

    fn from_str(s: &str) -> Result<Self> {
        [SweepParam::K, SweepParam::L, SweepParam::DModel, SweepParam::DC]
            .into_iter()
            .find(|p| p.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| AstgiError::Validation(format!("unknown sweep parameter `{s}`")))
    }
}

/// One sweep cell. Failed cells keep empty metrics and the error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: usize,
    pub seed: u64,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    #[serde(skip)]
    pub error: Option<String>,
}

/// Trains the full model once per value per seed, varying one
/// hyperparameter of `base`.
pub fn sweep(param: SweepParam, values: &[usize], base: &TrainConfig, data: &PreparedData) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(AstgiError::Validation("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len() * base.seeds.len());
    for &value in values {
        let mut cfg = base.clone();
        param.apply(&mut cfg.model, value);
        for &seed in &base.seeds {
            let row = match run_variant(VariantTag::Full, &cfg, data, seed) {
                Ok(run) => SweepRow {
                    param: param.as_str().into(),
                    value,
                    seed,
                    mse: Some(run.test.mse),
                    mae: Some(run.test.mae),
                    error: None,
                },
                Err(e) => {
                    log::error!("sweep cell {}={value} seed {seed} failed: {e}", param.as_str());
                    SweepRow {
                        param: param.as_str().into(),
                        value,
                        seed,
                        mse: None,
                        mae: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}
