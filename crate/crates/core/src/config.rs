use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AstgiError, Result};

/// Model construction variants. `Full` is the complete architecture; the
/// others each remove one component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Fixed sinusoidal time features and one-hot channel codes replace the
    /// learned coordinate encoders.
    NoLearnedCoords,
    /// Neighborhoods are found by raw timestamp distance instead of the
    /// learned coordinates.
    NoAdaptiveGraph,
    /// The coordinate displacement is dropped from the scoring and message
    /// inputs.
    NoRelationAware,
    /// Uniform weights replace the learned query attention.
    MeanPooling,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoLearnedCoords,
        Variant::NoAdaptiveGraph,
        Variant::NoRelationAware,
        Variant::MeanPooling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoLearnedCoords => "no_learned_coords",
            Variant::NoAdaptiveGraph => "no_adaptive_graph",
            Variant::NoRelationAware => "no_relation_aware",
            Variant::MeanPooling => "mean_pooling",
        }
    }

    pub fn learned_coords(self) -> bool {
        self != Variant::NoLearnedCoords
    }

    pub fn adaptive_graph(self) -> bool {
        self != Variant::NoAdaptiveGraph
    }

    pub fn relation_aware(self) -> bool {
        self != Variant::NoRelationAware
    }

    pub fn query_attention(self) -> bool {
        self != Variant::MeanPooling
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = AstgiError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| AstgiError::Validation(format!("unknown model variant `{s}`")))
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_channels: usize,
    pub d_c: usize,
    pub d_t: usize,
    pub d_model: usize,
    /// Candidate neighbors per history point.
    pub k: usize,
    /// Neighbors per query; falls back to `k`.
    pub k_query: Option<usize>,
    pub layers: usize,
    /// Share one scoring network across all propagation layers.
    pub shared_score: bool,
    pub variant: Variant,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_channels: 1,
            d_c: 8,
            d_t: 8,
            d_model: 64,
            k: 8,
            k_query: None,
            layers: 2,
            shared_score: false,
            variant: Variant::Full,
            layer_norm_eps: crate::diffcore::LAYER_NORM_EPS,
        }
    }
}

impl ModelConfig {
    pub fn coord_dim(&self) -> usize {
        self.d_c + self.d_t
    }

    pub fn query_k(&self) -> usize {
        self.k_query.unwrap_or(self.k)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_channels", self.n_channels),
            ("d_c", self.d_c),
            ("d_t", self.d_t),
            ("d_model", self.d_model),
            ("k", self.k),
            ("k_query", self.query_k()),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(AstgiError::Validation(format!("{name} must be at least 1")));
        }
        if !(self.layer_norm_eps >= 0.0) {
            return Err(AstgiError::Validation("layer_norm_eps must be >= 0".into()));
        }
        Ok(())
    }
}
