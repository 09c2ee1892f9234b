//! Message passing over the causal graph: relation-aware messages, weighted
//! aggregation and a residual, layer-normalized update, stacked `L` times.

use rand::Rng;

use crate::config::ModelConfig;
use crate::diffcore::{ModelParams, Tape, Tensor, Var};
use crate::encoder::PointCloud;
use crate::error::Result;
use crate::graph::{compute_weights, score_mlp, Edges, LayerWeights};
use crate::nn::Mlp;

pub fn msg_mlp(cfg: &ModelConfig, layer: usize) -> Mlp {
    let input = if cfg.variant.relation_aware() {
        cfg.d_model + cfg.coord_dim()
    } else {
        cfg.d_model
    };
    Mlp::new(format!("propagation.layer{layer}.msg"), input, cfg.d_model, cfg.d_model)
}

pub fn update_mlp(cfg: &ModelConfig, layer: usize) -> Mlp {
    Mlp::new(format!("propagation.layer{layer}.update"), cfg.d_model, cfg.d_model, cfg.d_model)
}

pub fn norm_names(layer: usize) -> (String, String) {
    (
        format!("propagation.layer{layer}.norm.gain"),
        format!("propagation.layer{layer}.norm.bias"),
    )
}

pub fn init<R: Rng>(cfg: &ModelConfig, params: &mut ModelParams, rng: &mut R) -> Result<()> {
    for l in 0..cfg.layers {
        if !cfg.shared_score || l == 0 {
            score_mlp(cfg, l).init(params, rng)?;
        }
        msg_mlp(cfg, l).init(params, rng)?;
        update_mlp(cfg, l).init(params, rng)?;
        let (gain, bias) = norm_names(l);
        params.insert(gain, Tensor::full(&[cfg.d_model], 1.0))?;
        params.insert(bias, Tensor::zeros(&[cfg.d_model]))?;
    }
    Ok(())
}

/// `m_{j->i} = msg(h_j ⊕ (p_i - p_j))`, one row per edge.
pub fn message(
    tape: &mut Tape,
    params: &ModelParams,
    cfg: &ModelConfig,
    layer: usize,
    h_src: Var,
    displacement: Var,
) -> Result<Var> {
    let input = if cfg.variant.relation_aware() {
        tape.concat(&[h_src, displacement], 1)?
    } else {
        h_src
    };
    msg_mlp(cfg, layer).forward(tape, params, input)
}

/// `m_i = sum_j a_ij m_{j->i}`; points without neighbors receive zeros.
pub fn aggregate(tape: &mut Tape, messages: Var, weights: Var, edges: &Edges) -> Result<Var> {
    tape.segment_weighted_sum(messages, weights, &edges.offsets)
}

/// `h' = LayerNorm(h + update(m))`.
pub fn update(tape: &mut Tape, params: &ModelParams, cfg: &ModelConfig, layer: usize, h: Var, m: Var) -> Result<Var> {
    let u = update_mlp(cfg, layer).forward(tape, params, m)?;
    let z = tape.add(h, u)?;
    let (gain, bias) = norm_names(layer);
    let gain = tape.param(&gain, params.get(&gain)?);
    let bias = tape.param(&bias, params.get(&bias)?);
    tape.layer_norm(z, gain, bias, cfg.layer_norm_eps)
}

/// Edge displacements `p_dst - p_src`, computed once per forward pass.
pub fn displacements(tape: &mut Tape, coords: Var, edges: &Edges) -> Result<Var> {
    let p_dst = tape.gather_rows(coords, &edges.dst)?;
    let p_src = tape.gather_rows(coords, &edges.src)?;
    tape.sub(p_dst, p_src)
}

#[derive(Debug, Clone)]
pub struct Propagated {
    pub cloud: PointCloud,
    /// Features after each layer, `features[0]` being the input.
    pub features: Vec<Var>,
    pub weights: Vec<LayerWeights>,
}

/// Runs all layers synchronously: every point at layer `l + 1` is computed
/// from layer-`l` features only.
pub fn propagate(
    tape: &mut Tape,
    params: &ModelParams,
    cfg: &ModelConfig,
    cloud: &PointCloud,
    edges: &Edges,
) -> Result<Propagated> {
    let disp = displacements(tape, cloud.coords, edges)?;
    let mut h = cloud.features;
    let mut features = vec![h];
    let mut weights = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let w = compute_weights(tape, params, cfg, l, h, disp, edges)?;
        let h_src = tape.gather_rows(h, &edges.src)?;
        let msgs = message(tape, params, cfg, l, h_src, disp)?;
        let agg = aggregate(tape, msgs, w.weights, edges)?;
        h = update(tape, params, cfg, l, h, agg)?;
        features.push(h);
        weights.push(w);
    }
    let mut out = cloud.clone();
    out.features = h;
    out.layer = cloud.layer + cfg.layers;
    Ok(Propagated {
        cloud: out,
        features,
        weights,
    })
}
