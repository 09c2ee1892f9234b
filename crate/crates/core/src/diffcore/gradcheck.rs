//! Central finite-difference verification of tape gradients.

use serde::Serialize;

use super::params::ModelParams;
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().fold(0.0, |m, g| m.max(g.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares backward gradients of `forward` against
/// `(f(p + h) - f(p - h)) / 2h` for every element of every parameter.
pub fn finite_diff_check<F>(params: &ModelParams, forward: F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ModelParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, params)?;
    tape.backward(loss)?;
    let mut analytic = params.zeros_like();
    analytic.extend(tape.param_grads());

    let eval = |p: &ModelParams| -> Result<f64> {
        let mut t = Tape::new();
        let l = forward(&mut t, p)?;
        Ok(t.value(l).item())
    };

    let mut work = params.clone();
    let mut groups = Vec::with_capacity(params.len());
    for (name, tensor) in params.iter() {
        let grad = analytic[name].values();
        let mut worst = 0.0;
        let mut worst_index = 0;
        for i in 0..tensor.numel() {
            let orig = tensor.values()[i];
            work.get_mut(name).unwrap().values_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work.get_mut(name).unwrap().values_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work.get_mut(name).unwrap().values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(grad[i], numeric);
            if err > worst {
                worst = err;
                worst_index = i;
            }
        }
        groups.push(GroupCheck {
            name: name.clone(),
            numel: tensor.numel(),
            max_rel_error: worst,
            worst_index,
            passed: worst < tolerance,
        });
    }
    Ok(GradCheckReport {
        step,
        tolerance,
        groups,
    })
}
