//! Query-point regression: each `(t_q, c_q)` is embedded with the shared
//! encoders, attends over its nearest history points through a dedicated
//! scoring network and is regressed from the fused value vector.

use rand::Rng;

use crate::config::ModelConfig;
use crate::diffcore::{ModelParams, Tape, Tensor, Var};
use crate::encoder::{encode_coords, PointCloud};
use crate::error::{AstgiError, Result};
use crate::graph::{nearest, Edges};
use crate::nn::Mlp;

pub fn query_score_mlp(cfg: &ModelConfig) -> Mlp {
    Mlp::new("predictor.query_score", cfg.coord_dim() + cfg.d_model, cfg.d_model, 1)
}

pub fn value_mlp(cfg: &ModelConfig) -> Mlp {
    Mlp::new("predictor.value", cfg.d_model, cfg.d_model, cfg.d_model)
}

pub fn head_mlp(cfg: &ModelConfig) -> Mlp {
    Mlp::new("predictor.head", cfg.d_model, cfg.d_model, 1)
}

pub fn init<R: Rng>(cfg: &ModelConfig, params: &mut ModelParams, rng: &mut R) -> Result<()> {
    if cfg.variant.query_attention() {
        query_score_mlp(cfg).init(params, rng)?;
    }
    value_mlp(cfg).init(params, rng)?;
    head_mlp(cfg).init(params, rng)
}

#[derive(Debug, Clone)]
pub struct QueryOutput {
    /// `[Q]`, normalized value space.
    pub predictions: Var,
    /// Nearest history points per query, ascending distance.
    pub neighborhoods: Vec<Vec<usize>>,
    pub edges: Edges,
    /// Fusion weights per edge of `edges`.
    pub weights: Var,
}

/// History points nearest to each query. All history precedes every query,
/// so no causal mask is needed.
pub fn query_neighborhoods(
    tape: &Tape,
    cfg: &ModelConfig,
    cloud: &PointCloud,
    query_coords: Var,
    query_times: &[f64],
) -> Vec<Vec<usize>> {
    let k = cfg.query_k();
    if cfg.variant.adaptive_graph() {
        let hist = tape.value(cloud.coords);
        let q = tape.value(query_coords);
        (0..query_times.len())
            .map(|r| nearest(hist, q.row(r), k, None).into_iter().map(|(j, _)| j).collect())
            .collect()
    } else {
        let hist = Tensor::matrix(cloud.len(), 1, cloud.timestamps.clone()).expect("one column per point");
        query_times
            .iter()
            .map(|&t| nearest(&hist, &[t], k, None).into_iter().map(|(j, _)| j).collect())
            .collect()
    }
}

/// Predicts every query from one propagated history cloud.
pub fn predict_batch(
    tape: &mut Tape,
    params: &ModelParams,
    cfg: &ModelConfig,
    cloud: &PointCloud,
    queries: &[(f64, usize)],
) -> Result<QueryOutput> {
    if cloud.is_empty() {
        return Err(AstgiError::EmptyHistory {
            series_id: cloud.series_id.clone(),
        });
    }
    let times: Vec<f64> = queries.iter().map(|q| q.0).collect();
    let channels: Vec<usize> = queries.iter().map(|q| q.1).collect();
    let q_coords = encode_coords(tape, params, cfg, &times, &channels)?;
    let neighborhoods = query_neighborhoods(tape, cfg, cloud, q_coords, &times);
    let edges = Edges::from_lists(&neighborhoods);

    let values = value_mlp(cfg).forward(tape, params, cloud.features)?;
    let v_edge = tape.gather_rows(values, &edges.src)?;
    let weights = if cfg.variant.query_attention() {
        let pq = tape.gather_rows(q_coords, &edges.dst)?;
        let pi = tape.gather_rows(cloud.coords, &edges.src)?;
        let disp = tape.sub(pq, pi)?;
        let h_edge = tape.gather_rows(cloud.features, &edges.src)?;
        let rel = tape.concat(&[disp, h_edge], 1)?;
        let scores = query_score_mlp(cfg).forward(tape, params, rel)?;
        tape.segment_softmax(scores, &edges.offsets)?
    } else {
        let uniform = (0..queries.len())
            .flat_map(|q| {
                let n = edges.segment(q).len();
                std::iter::repeat_n(1.0 / n as f64, n)
            })
            .collect();
        tape.constant(Tensor::vector(uniform))
    };
    let fused = tape.segment_weighted_sum(v_edge, weights, &edges.offsets)?;
    let out = head_mlp(cfg).forward(tape, params, fused)?;
    let predictions = tape.reshape(out, &[queries.len()])?;
    Ok(QueryOutput {
        predictions,
        neighborhoods,
        edges,
        weights,
    })
}

pub fn predict_query(
    tape: &mut Tape,
    params: &ModelParams,
    cfg: &ModelConfig,
    cloud: &PointCloud,
    t: f64,
    c: usize,
) -> Result<f64> {
    let out = predict_batch(tape, params, cfg, cloud, &[(t, c)])?;
    Ok(tape.value(out.predictions).item())
}
