use approx::assert_relative_eq;
use astgi::data::{Observation, SplitSample};
use astgi::{AstgiModel, ModelConfig, Variant};
use proptest::prelude::*;

fn config(variant: Variant) -> ModelConfig {
    ModelConfig {
        n_channels: 3,
        d_c: 3,
        d_t: 3,
        d_model: 8,
        k: 4,
        variant,
        ..Default::default()
    }
}

fn sample_strategy() -> impl Strategy<Value = SplitSample> {
    (
        prop::collection::vec((0.0..0.6f64, -2.0..2.0f64, 0..3usize), 1..20),
        prop::collection::vec((0.6..1.0f64, -2.0..2.0f64, 0..3usize), 1..6),
    )
        .prop_map(|(hist, fut)| {
            let obs = hist
                .into_iter()
                .chain(fut)
                .map(|(t, x, c)| Observation::new(t, x, c))
                .collect();
            SplitSample::new("p", obs, 0.6).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn queries_are_answered_independently(s in sample_strategy(), seed in 0u64..1000) {
        let model = AstgiModel::new(config(Variant::Full)).unwrap();
        let params = model.init_params(seed).unwrap();
        let batch = model.predict(&params, &s).unwrap();
        for (q, want) in s.queries().iter().zip(&batch) {
            let one = model.predict_points(&params, &s, &[(q.t, q.c)]).unwrap();
            prop_assert_eq!(one[0].to_bits(), want.to_bits());
        }
    }

    #[test]
    fn future_targets_do_not_leak(s in sample_strategy(), shift in -5.0..5.0f64) {
        let model = AstgiModel::new(config(Variant::Full)).unwrap();
        let params = model.init_params(3).unwrap();
        let n_hist = s.history().len();
        let values: Vec<f64> = s
            .observations()
            .iter()
            .enumerate()
            .map(|(i, o)| if i < n_hist { o.x } else { o.x + shift })
            .collect();
        let moved = s.with_values(&values).unwrap();
        prop_assert_eq!(model.predict(&params, &s).unwrap(), model.predict(&params, &moved).unwrap());
    }

    #[test]
    fn every_variant_gives_finite_predictions(s in sample_strategy()) {
        for v in Variant::ALL {
            let model = AstgiModel::new(config(v)).unwrap();
            let params = model.init_params(5).unwrap();
            let preds = model.predict(&params, &s).unwrap();
            prop_assert_eq!(preds.len(), s.queries().len());
            prop_assert!(preds.iter().all(|y| y.is_finite()));
        }
    }
}

#[test]
fn constant_history_is_reproduced_by_mean_pooling_weights() {
    let model = AstgiModel::new(ModelConfig {
        layers: 0,
        ..config(Variant::MeanPooling)
    })
    .unwrap();
    let params = model.init_params(9).unwrap();
    let obs = (0..6)
        .map(|i| Observation::new(0.1 * i as f64, 0.7, 1))
        .chain([Observation::new(0.8, 0.0, 1), Observation::new(0.9, 0.0, 2)])
        .collect();
    let s = SplitSample::new("flat", obs, 0.6).unwrap();
    let preds = model.predict(&params, &s).unwrap();
    assert_relative_eq!(preds[0], preds[1], epsilon = 1e-12);
}
