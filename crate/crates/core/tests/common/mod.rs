//! Plain-loop reference implementation of the forward pass. Shares nothing
//! with the library except parameter storage.

#![allow(dead_code)]

use astgi::diffcore::ModelParams;
use astgi::ModelConfig;

pub struct RefPoint {
    pub t: f64,
    pub x: f64,
    pub c: usize,
}

fn get<'a>(p: &'a ModelParams, name: &str) -> &'a [f64] {
    p.get(name).unwrap().values()
}

pub fn mlp(p: &ModelParams, prefix: &str, x: &[f64]) -> Vec<f64> {
    let w1 = get(p, &format!("{prefix}.w1"));
    let b1 = get(p, &format!("{prefix}.b1"));
    let w2 = get(p, &format!("{prefix}.w2"));
    let b2 = get(p, &format!("{prefix}.b2"));
    let hidden = b1.len();
    let out = b2.len();
    assert_eq!(w1.len(), x.len() * hidden);
    let mut h = vec![0.0; hidden];
    for j in 0..hidden {
        let mut s = b1[j];
        for i in 0..x.len() {
            s += x[i] * w1[i * hidden + j];
        }
        h[j] = if s > 0.0 { s } else { 0.0 };
    }
    let mut y = vec![0.0; out];
    for k in 0..out {
        let mut s = b2[k];
        for j in 0..hidden {
            s += h[j] * w2[j * out + k];
        }
        y[k] = s;
    }
    y
}

pub fn layer_norm(z: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = z.len() as f64;
    let mu = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    z.iter().enumerate().map(|(k, v)| gain[k] * (v - mu) * inv + bias[k]).collect()
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// K nearest rows to `q` by Euclidean distance, ties to the lower index.
pub fn knn(points: &[Vec<f64>], q: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| Some(j) != exclude)
        .map(|j| (dist(&points[j], q), j))
        .collect();
    idx.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    idx.into_iter().take(k).map(|(_, j)| j).collect()
}

pub fn coordinate(p: &ModelParams, cfg: &ModelConfig, t: f64, c: usize) -> Vec<f64> {
    let emb = get(p, "encoder.channel_embedding");
    let row = &emb[c * cfg.d_c..(c + 1) * cfg.d_c];
    cat(&[row, &mlp(p, "encoder.time_mlp", &[t])])
}

pub struct RefState {
    pub coords: Vec<Vec<f64>>,
    /// `h[l][i]`, layers 0..=L.
    pub h: Vec<Vec<Vec<f64>>>,
    /// Valid neighbors per point.
    pub neighbors: Vec<Vec<usize>>,
    /// Attention weights `a[l][i]` aligned with `neighbors[i]`.
    pub weights: Vec<Vec<Vec<f64>>>,
}

/// Encodes and propagates a history given in canonical order, for the full
/// model variant.
pub fn propagate(p: &ModelParams, cfg: &ModelConfig, hist: &[RefPoint]) -> RefState {
    let n = hist.len();
    let coords: Vec<Vec<f64>> = hist.iter().map(|o| coordinate(p, cfg, o.t, o.c)).collect();
    let h0: Vec<Vec<f64>> = hist.iter().map(|o| mlp(p, "encoder.value_mlp", &[o.x])).collect();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            knn(&coords, &coords[i], cfg.k, Some(i))
                .into_iter()
                .filter(|&j| hist[j].t <= hist[i].t)
                .collect()
        })
        .collect();
    let mut h = vec![h0];
    let mut weights = Vec::new();
    for l in 0..cfg.layers {
        let cur = &h[l];
        let mut next = Vec::with_capacity(n);
        let mut wl = Vec::with_capacity(n);
        for i in 0..n {
            let mut nb: Vec<usize> = neighbors[i].clone();
            nb.sort();
            let mut m = vec![0.0; cfg.d_model];
            let mut a_sorted = Vec::new();
            if !nb.is_empty() {
                let scores: Vec<f64> = nb
                    .iter()
                    .map(|&j| {
                        let d = sub(&coords[i], &coords[j]);
                        mlp(p, &format!("propagation.layer{l}.score"), &cat(&[&d, &cur[i], &cur[j]]))[0]
                    })
                    .collect();
                let a = softmax(&scores);
                for (e, &j) in nb.iter().enumerate() {
                    let d = sub(&coords[i], &coords[j]);
                    let msg = mlp(p, &format!("propagation.layer{l}.msg"), &cat(&[&cur[j], &d]));
                    for k in 0..cfg.d_model {
                        m[k] += a[e] * msg[k];
                    }
                }
                a_sorted = a;
            }
            let u = mlp(p, &format!("propagation.layer{l}.update"), &m);
            let z: Vec<f64> = cur[i].iter().zip(&u).map(|(a, b)| a + b).collect();
            next.push(layer_norm(
                &z,
                get(p, &format!("propagation.layer{l}.norm.gain")),
                get(p, &format!("propagation.layer{l}.norm.bias")),
                cfg.layer_norm_eps,
            ));
            // report weights in the order of `neighbors[i]`
            wl.push(
                neighbors[i]
                    .iter()
                    .map(|j| a_sorted[nb.iter().position(|x| x == j).unwrap()])
                    .collect(),
            );
        }
        h.push(next);
        weights.push(wl);
    }
    RefState {
        coords,
        h,
        neighbors,
        weights,
    }
}

pub fn predict(p: &ModelParams, cfg: &ModelConfig, state: &RefState, t: f64, c: usize) -> f64 {
    let hl = state.h.last().unwrap();
    let pq = coordinate(p, cfg, t, c);
    let mut nb = knn(&state.coords, &pq, cfg.query_k(), None);
    nb.sort();
    let scores: Vec<f64> = nb
        .iter()
        .map(|&i| mlp(p, "predictor.query_score", &cat(&[&sub(&pq, &state.coords[i]), &hl[i]]))[0])
        .collect();
    let a = softmax(&scores);
    let mut fused = vec![0.0; cfg.d_model];
    for (e, &i) in nb.iter().enumerate() {
        let v = mlp(p, "predictor.value", &hl[i]);
        for k in 0..cfg.d_model {
            fused[k] += a[e] * v[k];
        }
    }
    mlp(p, "predictor.head", &fused)[0]
}

/// Deterministic small weights: element `i` of the `g`-th tensor (in name
/// order) is `0.3 * sin(1.7 * i + 0.9 * g + 0.4)`.
pub fn fixed_params(template: &ModelParams) -> ModelParams {
    let mut p = template.clone();
    for (g, (_, t)) in p.iter_mut().enumerate() {
        for (i, v) in t.values_mut().iter_mut().enumerate() {
            *v = 0.3 * (1.7 * i as f64 + 0.9 * g as f64 + 0.4).sin();
        }
    }
    p
}
