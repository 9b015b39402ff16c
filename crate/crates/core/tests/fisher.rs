mod common;

use common::{fisher_relative_error, softmax_regression_fixture};
use supportnet::consolidation::fisher_diagonal;
use supportnet::SeededRng;

#[test]
fn sampled_fisher_matches_softmax_regression_closed_form() {
    // 1000 points x 100 draws = 1e5 samples
    let err = fisher_relative_error(1000, 100, 11);
    assert!(err < 0.03, "relative error {err}");
}

#[test]
fn fisher_is_insensitive_to_point_order() {
    let (params, x) = softmax_regression_fixture(2000, 3);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    SeededRng::new(9).shuffle(&mut order);
    let shuffled = x.select_rows(&order);
    let a = fisher_diagonal(&params, &x, 50, &mut SeededRng::new(1)).unwrap();
    let b = fisher_diagonal(&params, &shuffled, 50, &mut SeededRng::new(2)).unwrap();
    for (u, v) in a.output.data().iter().zip(b.output.data()) {
        assert!((u - v).abs() / u.max(*v) < 0.03, "{u} vs {v}");
    }
}

#[test]
fn fisher_is_non_negative_and_zero_for_confident_models() {
    let (mut params, x) = softmax_regression_fixture(50, 4);
    params.output = supportnet::Matrix::new(3, 2, vec![0.0, 60.0, 0.0, -60.0, 0.0, -60.0]).unwrap();
    let f = fisher_diagonal(&params, &x, 5, &mut SeededRng::new(0)).unwrap();
    assert!(f.output.data().iter().all(|v| *v >= 0.0 && *v < 1e-40));
}
