mod common;

use astgi::data::{Observation, SplitSample};
use astgi::diffcore::Tape;
use astgi::graph::edge_weight_lists;
use astgi::model::{tiny_config, tiny_sample};
use astgi::{AstgiModel, ModelConfig};
use common::RefPoint;

fn ref_history(s: &SplitSample) -> Vec<RefPoint> {
    s.history().iter().map(|o| RefPoint { t: o.t, x: o.x, c: o.c }).collect()
}

#[test]
fn three_point_instance() {
    let cfg = ModelConfig {
        n_channels: 2,
        d_c: 2,
        d_t: 2,
        d_model: 3,
        k: 2,
        layers: 2,
        ..Default::default()
    };
    let model = AstgiModel::new(cfg.clone()).unwrap();
    let params = common::fixed_params(&model.init_params(0).unwrap());
    let sample = SplitSample::new(
        "hand",
        vec![
            Observation::new(0.1, 0.5, 0),
            Observation::new(0.3, -1.2, 1),
            Observation::new(0.6, 0.8, 0),
            Observation::new(0.9, 0.0, 1),
        ],
        0.7,
    )
    .unwrap();
    let got = model.predict(&params, &sample).unwrap();
    let state = common::propagate(&params, &cfg, &ref_history(&sample));
    let want = common::predict(&params, &cfg, &state, 0.9, 1);
    assert_eq!(got.len(), 1);
    assert!((got[0] - want).abs() < 1e-10, "{} vs {want}", got[0]);
}

#[test]
fn random_instances_match_layer_by_layer() {
    let cfg = tiny_config();
    let model = AstgiModel::new(cfg.clone()).unwrap();
    for seed in 0..10 {
        let params = model.init_params(seed).unwrap();
        let sample = tiny_sample(seed).unwrap();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &params, &sample).unwrap();
        let state = common::propagate(&params, &cfg, &ref_history(&sample));

        assert_eq!(out.history.neighborhood.valid, state.neighbors);
        for (l, &h) in out.history.propagated.features.iter().enumerate() {
            let got = tape.value(h);
            for (i, row) in state.h[l].iter().enumerate() {
                for (a, b) in got.row(i).iter().zip(row) {
                    assert!((a - b).abs() < 1e-10, "layer {l} point {i}: {a} vs {b}");
                }
            }
        }
        for (l, w) in out.history.propagated.weights.iter().enumerate() {
            let lists = edge_weight_lists(&tape, *w, &out.history.edges);
            for (i, list) in lists.iter().enumerate() {
                for &(j, _, a) in list {
                    let pos = state.neighbors[i].iter().position(|&x| x == j).unwrap();
                    assert!((a - state.weights[l][i][pos]).abs() < 1e-12);
                }
            }
        }
        let preds = tape.value(out.query.predictions).values();
        for (q, o) in sample.queries().iter().enumerate() {
            let want = common::predict(&params, &cfg, &state, o.t, o.c);
            assert!((preds[q] - want).abs() < 1e-10, "seed {seed} query {q}");
        }
    }
}
