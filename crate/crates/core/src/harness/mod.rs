//! Experiment orchestration: model variants and baselines behind one
//! interface, ablation tables, sensitivity sweeps and output files.

mod baselines;
mod experiment;
mod output;

pub use baselines::{baseline_locf, baseline_locf_points, baseline_mean, baseline_mean_points};
pub use experiment::{
    ablate, run_variant, sweep, ExperimentSpec, ResultRow, ResultTable, RunResult, SweepParam, SweepRow,
};
pub use output::{predictions_for, read_predictions, write_csv, write_predictions, PredictionRecord};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Variant};
use crate::data::SplitSample;
use crate::diffcore::ModelParams;
use crate::error::{AstgiError, Result};
use crate::model::AstgiModel;
use crate::trainer::{evaluate, pooled_metrics, Metrics};

/// Every method the harness can run: the five model variants and two
/// training-free baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantTag {
    Full,
    NoLearnedCoords,
    NoAdaptiveGraph,
    NoRelationAware,
    MeanPooling,
    BaselineMean,
    BaselineLocf,
}

impl VariantTag {
    pub const ALL: [VariantTag; 7] = [
        VariantTag::Full,
        VariantTag::NoLearnedCoords,
        VariantTag::NoAdaptiveGraph,
        VariantTag::NoRelationAware,
        VariantTag::MeanPooling,
        VariantTag::BaselineMean,
        VariantTag::BaselineLocf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantTag::Full => "full",
            VariantTag::NoLearnedCoords => "no_learned_coords",
            VariantTag::NoAdaptiveGraph => "no_adaptive_graph",
            VariantTag::NoRelationAware => "no_relation_aware",
            VariantTag::MeanPooling => "mean_pooling",
            VariantTag::BaselineMean => "baseline_mean",
            VariantTag::BaselineLocf => "baseline_locf",
        }
    }

    /// The model variant, or `None` for a baseline.
    pub fn model_variant(self) -> Option<Variant> {
        match self {
            VariantTag::Full => Some(Variant::Full),
            VariantTag::NoLearnedCoords => Some(Variant::NoLearnedCoords),
            VariantTag::NoAdaptiveGraph => Some(Variant::NoAdaptiveGraph),
            VariantTag::NoRelationAware => Some(Variant::NoRelationAware),
            VariantTag::MeanPooling => Some(Variant::MeanPooling),
            VariantTag::BaselineMean | VariantTag::BaselineLocf => None,
        }
    }

    pub fn is_baseline(self) -> bool {
        self.model_variant().is_none()
    }
}

impl fmt::Display for VariantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantTag {
    type Err = AstgiError;

    fn from_str(s: &str) -> Result<Self> {
        VariantTag::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| AstgiError::Validation(format!("unknown variant tag `{s}`")))
    }
}

/// A constructed predictor.
#[derive(Debug, Clone)]
pub enum Method {
    Model(AstgiModel),
    BaselineMean,
    BaselineLocf,
}

impl Method {
    pub fn is_trainable(&self) -> bool {
        matches!(self, Method::Model(_))
    }

    /// Predictions for arbitrary `(t, c)` points. Baselines ignore `params`.
    pub fn predict_points(&self, params: &ModelParams, sample: &SplitSample, queries: &[(f64, usize)]) -> Result<Vec<f64>> {
        match self {
            Method::Model(m) => m.predict_points(params, sample, queries),
            Method::BaselineMean => baseline_mean_points(sample, queries),
            Method::BaselineLocf => baseline_locf_points(sample, queries),
        }
    }

    pub fn predict(&self, params: &ModelParams, sample: &SplitSample) -> Result<Vec<f64>> {
        let queries: Vec<(f64, usize)> = sample.queries().iter().map(|o| (o.t, o.c)).collect();
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        self.predict_points(params, sample, &queries)
    }

    pub fn evaluate(&self, params: &ModelParams, samples: &[SplitSample]) -> Result<Metrics> {
        match self {
            Method::Model(m) => evaluate(m, params, samples),
            _ => {
                let preds = samples.iter().map(|s| self.predict(params, s)).collect::<Result<Vec<_>>>()?;
                pooled_metrics(samples, &preds)
            }
        }
    }
}

/// Builds the predictor named by `tag` on top of `base`; model variants
/// differ from `base` only in [`ModelConfig::variant`].
pub fn build_variant(tag: &str, base: &ModelConfig) -> Result<Method> {
    let tag: VariantTag = tag.parse()?;
    Ok(match tag.model_variant() {
        Some(variant) => Method::Model(AstgiModel::new(ModelConfig {
            variant,
            ..base.clone()
        })?),
        None if tag == VariantTag::BaselineMean => Method::BaselineMean,
        None => Method::BaselineLocf,
    })
}
