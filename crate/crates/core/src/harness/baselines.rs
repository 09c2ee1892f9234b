//! Reference predictors that need no training.

use crate::data::SplitSample;
use crate::error::{AstgiError, Result};

fn nonempty_history(sample: &SplitSample) -> Result<&[crate::data::Observation]> {
    let hist = sample.history();
    if hist.is_empty() {
        return Err(AstgiError::EmptyHistory {
            series_id: sample.series_id.clone(),
        });
    }
    Ok(hist)
}

fn query_points(sample: &SplitSample) -> Vec<(f64, usize)> {
    sample.queries().iter().map(|o| (o.t, o.c)).collect()
}

/// Mean of channel `c`'s history values; the mean of the whole history when
/// `c` was never observed.
pub fn baseline_mean_points(sample: &SplitSample, queries: &[(f64, usize)]) -> Result<Vec<f64>> {
    let hist = nonempty_history(sample)?;
    let global = hist.iter().map(|o| o.x).sum::<f64>() / hist.len() as f64;
    Ok(queries
        .iter()
        .map(|&(_, c)| {
            let (sum, n) = hist
                .iter()
                .filter(|o| o.c == c)
                .fold((0.0, 0usize), |(s, n), o| (s + o.x, n + 1));
            if n == 0 {
                global
            } else {
                sum / n as f64
            }
        })
        .collect())
}

/// Latest history value of channel `c` at or before the query time. Falls
/// back to the latest value over all channels, then to the earliest
/// observation when nothing precedes the query.
pub fn baseline_locf_points(sample: &SplitSample, queries: &[(f64, usize)]) -> Result<Vec<f64>> {
    let hist = nonempty_history(sample)?;
    Ok(queries
        .iter()
        .map(|&(t, c)| {
            let prior = || hist.iter().rev().filter(|o| o.t <= t);
            prior()
                .find(|o| o.c == c)
                .or_else(|| prior().next())
                .unwrap_or(&hist[0])
                .x
        })
        .collect())
}

pub fn baseline_mean(sample: &SplitSample) -> Result<Vec<f64>> {
    baseline_mean_points(sample, &query_points(sample))
}

pub fn baseline_locf(sample: &SplitSample) -> Result<Vec<f64>> {
    baseline_locf_points(sample, &query_points(sample))
}
