//! One-hidden-layer perceptrons stored in a [`ModelParams`] collection.
//!
//! Every MLP in the model has the shape `input -> hidden -> ReLU -> output`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{ModelParams, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            hidden,
            output,
        }
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(&self, params: &mut ModelParams, rng: &mut R) -> Result<()> {
        params.insert(self.name("w1"), glorot(self.input, self.hidden, rng))?;
        params.insert(self.name("b1"), Tensor::zeros(&[self.hidden]))?;
        params.insert(self.name("w2"), glorot(self.hidden, self.output, rng))?;
        params.insert(self.name("b2"), Tensor::zeros(&[self.output]))?;
        Ok(())
    }

    /// Applies the MLP to every row of `x` (`[n, input]` -> `[n, output]`).
    pub fn forward(&self, tape: &mut Tape, params: &ModelParams, x: Var) -> Result<Var> {
        let w1 = tape.param(&self.name("w1"), params.get(&self.name("w1"))?);
        let b1 = tape.param(&self.name("b1"), params.get(&self.name("b1"))?);
        let w2 = tape.param(&self.name("w2"), params.get(&self.name("w2"))?);
        let b2 = tape.param(&self.name("b2"), params.get(&self.name("b2"))?);
        let h = tape.matmul(x, w1)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.relu(h);
        let y = tape.matmul(h, w2)?;
        tape.add_bias(y, b2)
    }
}

pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::matrix(fan_in, fan_out, values).expect("shape matches")
}

pub fn normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}
