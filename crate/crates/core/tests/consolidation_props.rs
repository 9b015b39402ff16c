mod common;

use common::{blobs, Objective};
use proptest::prelude::*;
use supportnet::consolidation::{
    ewc_penalty, ewc_proximal_step, feature_regularizer, fisher_diagonal, total_loss, Coefficients,
    ConsolidationState, FeatureAnchors,
};
use supportnet::network::{expand_output_layer, Sgd};
use supportnet::{Activation, NetworkParams, SeededRng};

fn drift(a: &NetworkParams, b: &NetworkParams) -> f64 {
    a.buffers()
        .iter()
        .zip(b.buffers())
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)))
        .sum::<f64>()
        .sqrt()
}

/// 100 SGD steps on two new classes starting from a model trained briefly
/// on two overlapping old ones, with EWC anchored at the old model. A
/// saturated old model has a near-zero Fisher almost everywhere and the
/// ordering no longer holds; the fixture keeps it informative.
fn drift_after_training(lambda_ewc: f64) -> f64 {
    let (x_old, y_old) = blobs(2, 6, 50, 1.0, 1);
    let mut rng = SeededRng::new(3);
    let mut old = NetworkParams::init(6, &[12, 8], Activation::Relu, 2, 0.1, &mut rng).unwrap();
    let none = FeatureAnchors::none(8);
    let mut sgd = Sgd::new(0.05, 0.9).unwrap();
    for _ in 0..30 {
        let (_, g) = total_loss(&old, &x_old, &y_old, &none, None).unwrap();
        sgd.step(&mut old, &g).unwrap();
    }
    let fisher = fisher_diagonal(&old, &x_old, 5, &mut SeededRng::new(4)).unwrap();
    let reps = supportnet::Matrix::zeros(0, 8);
    let state = ConsolidationState::new(
        old.clone(),
        fisher,
        reps,
        Coefficients { lambda_f: 0.0, lambda_ewc },
    )
    .unwrap();

    let (x_new, y_new) = blobs(4, 6, 50, 1.0, 2);
    let keep: Vec<usize> = (0..y_new.len()).filter(|&i| y_new[i] >= 2).collect();
    let x_new = x_new.select_rows(&keep);
    let y_new: Vec<usize> = keep.iter().map(|&i| y_new[i]).collect();
    let start = expand_output_layer(&old, 4, &mut SeededRng::new(5), 0.1).unwrap();
    let mut params = start.clone();
    let mut sgd = Sgd::new(0.05, 0.9).unwrap();
    for _ in 0..100 {
        let (_, g) = total_loss(&params, &x_new, &y_new, &none, None).unwrap();
        sgd.step(&mut params, &g).unwrap();
        ewc_proximal_step(&mut params, &state, 0.05).unwrap();
    }
    // drift over the parameters that existed before expansion
    let mut trimmed = params.clone();
    trimmed.output = params.output.select_rows(&[0, 1]);
    drift(&trimmed, &old)
}

#[test]
fn larger_ewc_coefficient_never_increases_drift() {
    let lambdas = [0.0, 1.0, 10.0, 100.0, 1e3, 1e4];
    let drifts: Vec<f64> = lambdas.iter().map(|&l| drift_after_training(l)).collect();
    for w in drifts.windows(2) {
        assert!(w[1] <= w[0], "{drifts:?}");
    }
    assert!(drifts[5] < 0.1 * drifts[0], "{drifts:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn regularizers_are_non_negative_and_vanish_at_the_snapshot(seed in 0u64..10_000) {
        let obj = Objective::build(seed, 4, &[6, 5], Activation::Tanh, 3, 5, 5);
        let (f, _) = feature_regularizer(&obj.params, &obj.inputs, &obj.anchors.frozen).unwrap();
        let (e, _) = ewc_penalty(&obj.params, &obj.state).unwrap();
        prop_assert!(f >= 0.0 && e >= 0.0);

        // at θ = θ_old (plus a fresh output row) both terms are exactly zero
        let at_old = expand_output_layer(&obj.state.theta_old, 3, &mut SeededRng::new(seed), 0.3).unwrap();
        let (f0, _) = feature_regularizer(&at_old, &obj.inputs, &obj.anchors.frozen).unwrap();
        let (e0, g0) = ewc_penalty(&at_old, &obj.state).unwrap();
        prop_assert_eq!(f0, 0.0);
        prop_assert_eq!(e0, 0.0);
        prop_assert!(g0.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn proximal_step_never_moves_away_from_the_anchor(seed in 0u64..10_000, lr in 1e-4f64..1.0) {
        let obj = Objective::build(seed, 4, &[6], Activation::Relu, 3, 5, 2);
        let before = ewc_penalty(&obj.params, &obj.state).unwrap().0;
        let mut p = obj.params.clone();
        let after = ewc_proximal_step(&mut p, &obj.state, lr).unwrap();
        prop_assert!(after <= before);
        // new output row untouched
        prop_assert_eq!(p.output.row(2), obj.params.output.row(2));
    }
}
