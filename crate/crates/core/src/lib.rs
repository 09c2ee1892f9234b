//! Forecasting irregular multivariate time series by message passing over a
//! learned spatio-temporal point cloud.
//!
//! Every observation `(t, x, c)` becomes a point with a learned coordinate
//! and a feature vector. A causal k-nearest-neighbor graph over the
//! coordinates drives a few rounds of attention-weighted message passing,
//! after which each query `(t_q, c_q)` is answered by attending over its
//! nearest history points.

pub mod config;
pub mod data;
pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod harness;
pub mod model;
pub mod nn;
pub mod predictor;
pub mod propagation;
pub mod trainer;

pub use config::{ModelConfig, Variant};
pub use error::{AstgiError, Result};
pub use model::{AstgiModel, ForwardOutput};
