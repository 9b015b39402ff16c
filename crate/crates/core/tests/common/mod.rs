// Shared fixtures for the integration tests and the acceptance harness.
#![allow(dead_code)]

use supportnet::consolidation::{total_loss, Coefficients, ConsolidationState, FeatureAnchors};
use supportnet::math::gaussian_draws;
use supportnet::network::{expand_output_layer, forward_batch};
use supportnet::svm::SvmProblem;
use supportnet::{Activation, GradientSet, Matrix, NetworkParams, SeededRng};

pub fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.standard_normal()).collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// He-initialized net with non-zero biases and a visible output layer.
pub fn random_net(
    rng: &mut SeededRng,
    input: usize,
    hidden: &[usize],
    activation: Activation,
    classes: usize,
) -> NetworkParams {
    let mut net = NetworkParams::init(input, hidden, activation, classes, 0.5, rng).unwrap();
    let n = net.hidden.len();
    for (i, buf) in net.buffers_mut().into_iter().enumerate() {
        // biases sit at odd positions before the output block
        if i % 2 == 1 && i < 2 * n {
            for b in buf.iter_mut() {
                *b = 0.1 * rng.standard_normal();
            }
        }
    }
    net
}

/// A full-objective fixture: a network that has grown from `classes - 1` to
/// `classes` outputs since the snapshot, anchors on the first rows of the
/// batch and both coefficients active.
pub struct Objective {
    pub params: NetworkParams,
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub anchors: FeatureAnchors,
    pub state: ConsolidationState,
}

impl Objective {
    pub fn build(
        seed: u64,
        input: usize,
        hidden: &[usize],
        activation: Activation,
        classes: usize,
        batch: usize,
        anchored: usize,
    ) -> Self {
        let mut rng = SeededRng::new(seed);
        let old = random_net(&mut rng, input, hidden, activation, classes - 1);
        let mut params = expand_output_layer(&old, classes, &mut rng, 0.5).unwrap();
        for buf in params.buffers_mut() {
            for v in buf.iter_mut() {
                *v += 0.05 * rng.standard_normal();
            }
        }
        let mut fisher = GradientSet::zeros_like(&old);
        for buf in fisher.buffers_mut() {
            for v in buf.iter_mut() {
                *v = rng.uniform();
            }
        }
        let inputs = random_matrix(&mut rng, batch, input, 1.0);
        let labels = (0..batch).map(|i| i % classes).collect();
        let anchor_rows: Vec<usize> = (0..anchored).collect();
        let frozen = forward_batch(&old, &inputs.select_rows(&anchor_rows))
            .unwrap()
            .representations(&inputs.select_rows(&anchor_rows))
            .clone();
        let state = ConsolidationState::new(
            old,
            fisher,
            Matrix::zeros(0, *hidden.last().unwrap_or(&input)),
            Coefficients {
                lambda_f: 0.7,
                lambda_ewc: 3.0,
            },
        )
        .unwrap();
        Self {
            params,
            inputs,
            labels,
            anchors: FeatureAnchors {
                rows: anchor_rows,
                frozen,
                weight: 1.0,
            },
            state,
        }
    }

    pub fn loss_at(&self, params: &NetworkParams) -> f64 {
        total_loss(params, &self.inputs, &self.labels, &self.anchors, Some(&self.state))
            .unwrap()
            .0
            .total
    }

    pub fn gradient(&self) -> GradientSet {
        total_loss(&self.params, &self.inputs, &self.labels, &self.anchors, Some(&self.state))
            .unwrap()
            .1
    }

    /// Smallest |pre-activation| over the batch; finite differences across a
    /// ReLU kink are meaningless, so callers keep this well above the step.
    pub fn min_abs_pre_activation(&self) -> f64 {
        forward_batch(&self.params, &self.inputs)
            .unwrap()
            .pre_activations
            .iter()
            .flat_map(|m| m.data().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Worst relative error `|a − n| / max(|a|, |n|)` between an analytic
/// gradient and central differences of `loss`; entries where both sides are
/// below `floor` count as agreeing.
pub fn max_relative_error(
    params: &NetworkParams,
    analytic: &GradientSet,
    step: f64,
    floor: f64,
    loss: impl Fn(&NetworkParams) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    let analytic: Vec<Vec<f64>> = analytic.buffers().iter().map(|b| b.to_vec()).collect();
    let sizes: Vec<usize> = params.buffers().iter().map(|b| b.len()).collect();
    for (b, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.buffers()[b][i];
            probe.buffers_mut()[b][i] = orig + step;
            let up = loss(&probe);
            probe.buffers_mut()[b][i] = orig - step;
            let down = loss(&probe);
            probe.buffers_mut()[b][i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[b][i];
            let scale = a.abs().max(numeric.abs());
            if scale < floor {
                continue;
            }
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

/// Gaussian blobs: `k` classes, one unit-variance cluster per class with
/// centres spaced `separation` apart along distinct axes.
pub fn blobs(k: usize, dim: usize, per_class: usize, separation: f64, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = SeededRng::new(seed);
    let mut rows = Vec::with_capacity(k * per_class);
    let mut labels = Vec::with_capacity(k * per_class);
    for n in 0..k * per_class {
        let c = n % k;
        let mut x: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        x[c % dim] += separation;
        rows.push(x);
        labels.push(c);
    }
    (Matrix::from_rows(&rows).unwrap(), labels)
}

/// Softmax regression (no hidden layers) over `points` scalar-plus-constant
/// inputs `[x, 1]`, 3 classes.
pub fn softmax_regression_fixture(points: usize, seed: u64) -> (NetworkParams, Matrix) {
    let mut rng = SeededRng::new(seed);
    let output = Matrix::new(3, 2, vec![1.2, -0.3, -0.7, 0.4, 0.2, 0.1]).unwrap();
    let params = NetworkParams::from_parts(Vec::new(), output).unwrap();
    let rows: Vec<Vec<f64>> = (0..points).map(|_| vec![rng.standard_normal(), 1.0]).collect();
    (params, Matrix::from_rows(&rows).unwrap())
}

/// Exact Fisher diagonal of softmax regression:
/// `F_ij = mean_n o_i(x_n) (1 − o_i(x_n)) x_nj²`.
pub fn analytic_softmax_fisher(params: &NetworkParams, inputs: &Matrix) -> Vec<f64> {
    let fb = forward_batch(params, inputs).unwrap();
    let (k, d) = params.output.shape();
    let mut f = vec![0.0; k * d];
    for n in 0..inputs.rows() {
        for i in 0..k {
            let o = fb.outputs.get(n, i);
            for j in 0..d {
                let x = inputs.get(n, j);
                f[i * d + j] += o * (1.0 - o) * x * x;
            }
        }
    }
    let n = inputs.rows() as f64;
    f.iter_mut().for_each(|v| *v /= n);
    f
}

/// Worst relative deviation of the sampled Fisher (`draws` labels per point)
/// from the analytic one.
pub fn fisher_relative_error(points: usize, draws: usize, seed: u64) -> f64 {
    let (params, x) = softmax_regression_fixture(points, seed);
    let exact = analytic_softmax_fisher(&params, &x);
    let mut rng = SeededRng::new(seed + 1);
    let est = supportnet::consolidation::fisher_diagonal(&params, &x, draws, &mut rng).unwrap();
    est.output
        .data()
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0, f64::max)
}

/// Random fixture with `n` points in `t` dimensions over `k` classes.
pub fn random_fixture(seed: u64, n: usize, t: usize, k: usize) -> SvmProblem {
    let mut rng = SeededRng::new(seed);
    let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.below(k) }).collect();
    let mut x = gaussian_draws(&mut rng, n * t, 0.0, 1.0).unwrap();
    for (i, &l) in labels.iter().enumerate() {
        x[i * t + l % t] += 1.5;
    }
    SvmProblem::new(Matrix::new(n, t, x).unwrap(), labels, 0.5 + rng.uniform() * 2.0).unwrap()
}
