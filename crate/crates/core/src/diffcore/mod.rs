//! Minimal differentiable numerics: tensors, a reverse-mode tape, AdamW and
//! a finite-difference gradient checker.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, GroupCheck};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Checkpoint, ModelParams, ParamRecord};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Default epsilon for every layer normalization in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
