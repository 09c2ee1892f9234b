//! Causal k-nearest-neighbor graphs over encoded points and the
//! relation-aware edge scoring used at every propagation layer.

use std::io::Write;

use serde::Serialize;

use crate::config::ModelConfig;
use crate::diffcore::{ModelParams, Tape, Tensor, Var};
use crate::encoder::PointCloud;
use crate::error::Result;
use crate::nn::Mlp;

/// Euclidean distance, accumulated over dimensions in ascending order.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The `k` rows of `points` closest to `query`, ascending by distance with
/// ties broken by smaller row index. `exclude` removes one row (the point
/// itself).
pub fn nearest(points: &Tensor, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let (n, _) = points.as_matrix_dims();
    let mut all: Vec<(usize, f64)> = (0..n)
        .filter(|&j| Some(j) != exclude)
        .map(|j| (j, euclidean(points.row(j), query)))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Flattened edge list grouped by target point. Within a target the
/// sources are in ascending index order, which fixes the summation order of
/// every aggregation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Edges {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl Edges {
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut edges = Edges {
            offsets: vec![0],
            ..Default::default()
        };
        for (i, list) in lists.iter().enumerate() {
            let mut sorted = list.clone();
            sorted.sort_unstable();
            for j in sorted {
                edges.src.push(j);
                edges.dst.push(i);
            }
            edges.offsets.push(edges.src.len());
        }
        edges
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn segment(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CausalNeighborhood {
    /// `C(i)`: up to `k` nearest other points, ascending distance.
    pub candidates: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
    /// `N(i)`: candidates with `t_j <= t_i`, in candidate order.
    pub valid: Vec<Vec<usize>>,
}

impl CausalNeighborhood {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn edges(&self) -> Edges {
        Edges::from_lists(&self.valid)
    }

    /// One JSON object per point: index, valid neighbors and candidate
    /// distances.
    pub fn write_jsonl<W: Write>(&self, series_id: &str, out: &mut W) -> Result<()> {
        for i in 0..self.len() {
            let line = serde_json::json!({
                "series_id": series_id,
                "point": i,
                "candidates": self.candidates[i],
                "distances": self.distances[i],
                "neighbors": self.valid[i],
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Builds `C(i)` by exact brute-force search over the rows of `points` and
/// masks out candidates later than `t_i`.
pub fn build_structure(points: &Tensor, timestamps: &[f64], k: usize) -> CausalNeighborhood {
    let (n, _) = points.as_matrix_dims();
    let mut out = CausalNeighborhood {
        candidates: Vec::with_capacity(n),
        distances: Vec::with_capacity(n),
        valid: Vec::with_capacity(n),
    };
    for i in 0..n {
        let near = nearest(points, points.row(i), k, Some(i));
        out.valid
            .push(near.iter().map(|&(j, _)| j).filter(|&j| timestamps[j] <= timestamps[i]).collect());
        out.candidates.push(near.iter().map(|&(j, _)| j).collect());
        out.distances.push(near.into_iter().map(|(_, d)| d).collect());
    }
    out
}

/// The space neighbors are searched in: learned coordinates, or the raw
/// timestamps when the adaptive graph is disabled.
pub fn search_points(tape: &Tape, cfg: &ModelConfig, cloud: &PointCloud) -> Tensor {
    if cfg.variant.adaptive_graph() {
        tape.value(cloud.coords).clone()
    } else {
        Tensor::matrix(cloud.len(), 1, cloud.timestamps.clone()).expect("one column per point")
    }
}

pub fn score_mlp(cfg: &ModelConfig, layer: usize) -> Mlp {
    let input = if cfg.variant.relation_aware() {
        cfg.coord_dim() + 2 * cfg.d_model
    } else {
        2 * cfg.d_model
    };
    let prefix = if cfg.shared_score {
        "propagation.score".to_string()
    } else {
        format!("propagation.layer{layer}.score")
    };
    Mlp::new(prefix, input, cfg.d_model, 1)
}

/// Scores and softmax weights of every edge at one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerWeights {
    pub scores: Var,
    pub weights: Var,
}

/// `r_ij = (p_i - p_j) ⊕ h_i ⊕ h_j`, `s_ij = score(r_ij)`, softmax over
/// each target's valid neighbors. `displacement` holds `p_dst - p_src` per
/// edge and is ignored when the variant drops relative positions.
pub fn compute_weights(
    tape: &mut Tape,
    params: &ModelParams,
    cfg: &ModelConfig,
    layer: usize,
    features: Var,
    displacement: Var,
    edges: &Edges,
) -> Result<LayerWeights> {
    let h_dst = tape.gather_rows(features, &edges.dst)?;
    let h_src = tape.gather_rows(features, &edges.src)?;
    let relation = if cfg.variant.relation_aware() {
        tape.concat(&[displacement, h_dst, h_src], 1)?
    } else {
        tape.concat(&[h_dst, h_src], 1)?
    };
    let scores = score_mlp(cfg, layer).forward(tape, params, relation)?;
    let weights = tape.segment_softmax(scores, &edges.offsets)?;
    Ok(LayerWeights { scores, weights })
}

/// Per-point view of one layer's weights: `(neighbor, score, weight)`.
pub fn edge_weight_lists(tape: &Tape, w: LayerWeights, edges: &Edges) -> Vec<Vec<(usize, f64, f64)>> {
    let s = tape.value(w.scores).values();
    let a = tape.value(w.weights).values();
    (0..edges.offsets.len() - 1)
        .map(|i| edges.segment(i).map(|e| (edges.src[e], s[e], a[e])).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: all ordered pairs, sorted by squared distance.
    fn oracle(points: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
        let n = points.len();
        (0..n)
            .map(|i| {
                let mut pairs: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let d2: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum();
                        (d2, j)
                    })
                    .collect();
                pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                pairs.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect()
    }

    #[test]
    fn collinear_nearest() {
        let pts = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let nb = build_structure(&pts, &[0.0, 0.0, 0.0], 1);
        assert_eq!(nb.candidates[0], vec![1]);
        assert_eq!(nb.distances[0], vec![1.0]);
    }

    #[test]
    fn k_capped_at_n_minus_one() {
        let pts = Tensor::from_rows(&[vec![0.0], vec![5.0], vec![2.0], vec![9.0]]).unwrap();
        let nb = build_structure(&pts, &[0.0; 4], 10);
        for i in 0..4 {
            let mut c = nb.candidates[i].clone();
            c.sort();
            let expected: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            assert_eq!(c, expected);
        }
    }

    #[test]
    fn ties_broken_by_index() {
        let pts = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![-1.0], vec![1.0]]).unwrap();
        let nb = build_structure(&pts, &[0.0; 4], 2);
        assert_eq!(nb.candidates[0], vec![1, 2]);
    }

    #[test]
    fn causal_mask_keeps_order() {
        let pts = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![3.0], vec![0.5]]).unwrap();
        let t = [2.0, 1.0, 5.0, 3.0];
        let nb = build_structure(&pts, &t, 3);
        assert_eq!(nb.candidates[0], vec![3, 1, 2]);
        assert_eq!(nb.valid[0], vec![1]);
        // equal timestamps pass the mask
        let nb = build_structure(&pts, &[1.0; 4], 3);
        assert_eq!(nb.valid[0], nb.candidates[0]);
    }

    #[test]
    fn random_cloud_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let pts = Tensor::from_rows(&rows).unwrap();
        let nb = build_structure(&pts, &[0.0; 20], 5);
        assert_eq!(nb.candidates, oracle(&rows, 5));
    }

    proptest! {
        #[test]
        fn structure_invariants(
            rows in proptest::collection::vec(proptest::collection::vec(-3i32..3, 2), 1..25),
            times in proptest::collection::vec(0i32..5, 25),
            k in 1usize..8,
        ) {
            // integer grid coordinates force many exact ties
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
            let n = rows.len();
            let t: Vec<f64> = times[..n].iter().map(|&v| f64::from(v)).collect();
            let pts = Tensor::from_rows(&rows).unwrap();
            let nb = build_structure(&pts, &t, k);
            prop_assert_eq!(&nb.candidates, &oracle(&rows, k));
            for i in 0..n {
                prop_assert_eq!(nb.candidates[i].len(), k.min(n - 1));
                prop_assert!(!nb.candidates[i].contains(&i));
                for &j in &nb.valid[i] {
                    prop_assert!(t[j] <= t[i] && j != i);
                }
                let kept: Vec<usize> = nb.candidates[i].iter().copied().filter(|j| nb.valid[i].contains(j)).collect();
                prop_assert_eq!(&kept, &nb.valid[i]);
            }
        }
    }

    fn weights_setup(n_points: usize, zero: bool) -> (Tape, Var, Edges, ModelConfig, ModelParams) {
        let cfg = ModelConfig {
            n_channels: 1,
            d_c: 1,
            d_t: 1,
            d_model: 2,
            variant: Variant::Full,
            ..Default::default()
        };
        let mut params = ModelParams::new();
        let mlp = score_mlp(&cfg, 0);
        mlp.init(&mut params, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        if zero {
            for (_, t) in params.iter_mut() {
                t.fill(0.0);
            }
        }
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feats = tape.constant(
            Tensor::matrix(n_points, 2, (0..2 * n_points).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        );
        let lists: Vec<Vec<usize>> = (0..n_points).map(|i| (0..i).collect()).collect();
        let edges = Edges::from_lists(&lists);
        let disp = tape.constant(
            Tensor::matrix(edges.len(), 2, (0..2 * edges.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap(),
        );
        let w = compute_weights(&mut tape, &params, &cfg, 0, feats, disp, &edges).unwrap();
        let weights = w.weights;
        (tape, weights, edges, cfg, params)
    }

    #[test]
    fn single_neighbor_weight_is_one_and_zero_net_is_uniform() {
        let (tape, w, edges, ..) = weights_setup(4, false);
        let a = tape.value(w).values();
        assert_eq!(a[edges.segment(1)], [1.0]);
        for i in 1..4 {
            let s: f64 = a[edges.segment(i)].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let (tape, w, edges, ..) = weights_setup(4, true);
        let a = tape.value(w).values();
        for &v in &a[edges.segment(3)] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
