//! Consolidation regularizers.
//!
//! * feature regularizer `R_f = Σ_n ‖δ_n(φ_new) − δ_n(φ_old)‖²` over the
//!   support examples,
//! * EWC penalty `R_ewc = Σ_i F_i (θ_new,i − θ_old,i)²` with an empirical
//!   Fisher diagonal `F` taken at `θ_old`,
//!
//! and the combined objective `L̃ = L + λ_f R_f + λ_ewc R_ewc`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, SeededRng};
use crate::network::{
    backprop, backprop_hidden, cross_entropy, forward_batch, map_batch, softmax_ce_logit_grad, GradientSet,
    NetworkParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub lambda_f: f64,
    pub lambda_ewc: f64,
}

impl Default for Coefficients {
    fn default() -> Self {
        Self {
            lambda_f: 1.0,
            lambda_ewc: 1e3,
        }
    }
}

/// Snapshot taken at the end of an increment: the outgoing parameters, their
/// Fisher diagonal and the frozen support representations.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsolidationState {
    pub theta_old: NetworkParams,
    pub fisher: GradientSet,
    pub support_reps_old: Matrix,
    pub coefficients: Coefficients,
}

impl ConsolidationState {
    pub fn new(
        theta_old: NetworkParams,
        fisher: GradientSet,
        support_reps_old: Matrix,
        coefficients: Coefficients,
    ) -> Result<Self> {
        if !fisher.same_shape(&theta_old) {
            return Err(Error::State("fisher shape differs from theta_old".into()));
        }
        if fisher.buffers().iter().any(|b| b.iter().any(|v| !(*v >= 0.0))) {
            return Err(Error::State("fisher entries must be non-negative".into()));
        }
        if support_reps_old.rows() > 0 && support_reps_old.cols() != theta_old.representation_dim() {
            return Err(Error::State("support representation width".into()));
        }
        if !(coefficients.lambda_f >= 0.0) || !(coefficients.lambda_ewc >= 0.0) {
            return Err(Error::State("coefficients must be non-negative".into()));
        }
        Ok(Self {
            theta_old,
            fisher,
            support_reps_old,
            coefficients,
        })
    }
}

/// `R_f` and its gradient. The gradient only touches the mapping function;
/// its output block is zero.
pub fn feature_regularizer(
    params: &NetworkParams,
    support_inputs: &Matrix,
    frozen: &Matrix,
) -> Result<(f64, GradientSet)> {
    let mut grads = GradientSet::zeros_like(params);
    if support_inputs.rows() == 0 {
        return Ok((0.0, grads));
    }
    if frozen.shape() != (support_inputs.rows(), params.representation_dim()) {
        return Err(Error::State(format!(
            "frozen representations are {:?}, expected ({}, {})",
            frozen.shape(),
            support_inputs.rows(),
            params.representation_dim()
        )));
    }
    if support_inputs.cols() != params.input_dim() {
        return Err(Error::shape("support inputs do not match the network"));
    }
    let (pres, posts) = map_batch(params, support_inputs);
    let reps = posts.last().unwrap_or(support_inputs);
    let mut diff = reps.clone();
    for (d, f) in diff.data_mut().iter_mut().zip(frozen.data()) {
        *d -= f;
    }
    let value = diff.frobenius_sq();
    if !params.hidden.is_empty() {
        diff.scale(2.0);
        backprop_hidden(params, support_inputs, &pres, &posts, diff, &mut grads);
    }
    Ok((value, grads))
}

/// Empirical Fisher diagonal: for each input, labels are drawn from the
/// model's own predictive distribution `samples_per_point` times and the
/// squared gradients of `log o_y` are averaged over all draws.
pub fn fisher_diagonal(
    params: &NetworkParams,
    inputs: &Matrix,
    samples_per_point: usize,
    rng: &mut SeededRng,
) -> Result<GradientSet> {
    if inputs.rows() == 0 || samples_per_point == 0 {
        return Err(Error::param("fisher needs at least one point and one draw"));
    }
    if params.num_classes() < 2 {
        return Err(Error::param("fisher needs at least two output classes"));
    }
    let mut fisher = GradientSet::zeros_like(params);
    for n in 0..inputs.rows() {
        let x = inputs.select_rows(&[n]);
        let fb = forward_batch(params, &x)?;
        for _ in 0..samples_per_point {
            let y = rng.categorical(fb.outputs.row(0));
            let d_logits = softmax_ce_logit_grad(&fb.outputs, &[y], 1.0);
            let g = backprop(params, &x, &fb, &d_logits, None);
            for (f, gb) in fisher.buffers_mut().into_iter().zip(g.buffers()) {
                for (fv, gv) in f.iter_mut().zip(gb) {
                    *fv += gv * gv;
                }
            }
        }
    }
    fisher.scale(1.0 / (inputs.rows() * samples_per_point) as f64);
    Ok(fisher)
}

fn check_ewc_shapes(params: &NetworkParams, state: &ConsolidationState) -> Result<()> {
    let old = &state.theta_old;
    let hidden_ok = params.hidden.len() == old.hidden.len()
        && params
            .hidden
            .iter()
            .zip(&old.hidden)
            .all(|(a, b)| a.weights.shape() == b.weights.shape());
    if !hidden_ok
        || params.output.cols() != old.output.cols()
        || params.output.rows() < old.output.rows()
    {
        return Err(Error::State("parameters do not extend theta_old".into()));
    }
    if !state.fisher.same_shape(old) {
        return Err(Error::State("missing fisher entries".into()));
    }
    Ok(())
}

/// `R_ewc` over every parameter that exists in `theta_old`, with gradient
/// `2 F (θ − θ_old)`; rows added to the output layer since the snapshot get
/// zero gradient.
pub fn ewc_penalty(params: &NetworkParams, state: &ConsolidationState) -> Result<(f64, GradientSet)> {
    check_ewc_shapes(params, state)?;
    let mut grads = GradientSet::zeros_like(params);
    let mut value = 0.0;
    for ((g, p), (o, f)) in grads
        .buffers_mut()
        .into_iter()
        .zip(params.buffers())
        .zip(state.theta_old.buffers().into_iter().zip(state.fisher.buffers()))
    {
        // old buffers are a prefix of the new ones (row-major output growth)
        for i in 0..o.len() {
            let d = p[i] - o[i];
            value += f[i] * d * d;
            g[i] = 2.0 * f[i] * d;
        }
    }
    Ok((value, grads))
}

/// Exact minimizer of `‖θ − θ'‖² / (2η) + λ_ewc R_ewc(θ)` starting from the
/// current parameters `θ'`, i.e. `θ_i ← (θ'_i + c_i θ_old,i) / (1 + c_i)` with
/// `c_i = 2 η λ_ewc F_i`. Stable for any step size, unlike the explicit
/// gradient step. Returns `R_ewc` at the new parameters.
pub fn ewc_proximal_step(params: &mut NetworkParams, state: &ConsolidationState, learning_rate: f64) -> Result<f64> {
    check_ewc_shapes(params, state)?;
    let scale = 2.0 * learning_rate * state.coefficients.lambda_ewc;
    let mut value = 0.0;
    for (p, (o, f)) in params
        .buffers_mut()
        .into_iter()
        .zip(state.theta_old.buffers().into_iter().zip(state.fisher.buffers()))
    {
        for i in 0..o.len() {
            let c = scale * f[i];
            p[i] = (p[i] + c * o[i]) / (1.0 + c);
            let d = p[i] - o[i];
            value += f[i] * d * d;
        }
    }
    Ok(value)
}

/// Rows of a training batch that carry frozen representations.
#[derive(Clone, Debug)]
pub struct FeatureAnchors {
    pub rows: Vec<usize>,
    pub frozen: Matrix,
    /// Multiplies `R_f`; 1 for the full objective.
    pub weight: f64,
}

impl FeatureAnchors {
    pub fn none(representation_dim: usize) -> Self {
        Self {
            rows: Vec::new(),
            frozen: Matrix::zeros(0, representation_dim),
            weight: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub feature: f64,
    pub ewc: f64,
}

/// Regularized loss and its gradient. Cross-entropy averages over every
/// batch row; the feature term sums over `anchors`; without a state the
/// result is plain cross-entropy.
pub fn total_loss(
    params: &NetworkParams,
    inputs: &Matrix,
    labels: &[usize],
    anchors: &FeatureAnchors,
    state: Option<&ConsolidationState>,
) -> Result<(LossBreakdown, GradientSet)> {
    if labels.is_empty() {
        return Err(Error::shape("empty batch"));
    }
    let fb = forward_batch(params, inputs)?;
    let ce = cross_entropy(&fb.outputs, labels)?;
    let d_logits = softmax_ce_logit_grad(&fb.outputs, labels, 1.0 / labels.len() as f64);
    let mut out = LossBreakdown {
        cross_entropy: ce,
        ..LossBreakdown::default()
    };

    let Some(state) = state else {
        out.total = ce;
        return Ok((out, backprop(params, inputs, &fb, &d_logits, None)));
    };
    let coef = state.coefficients;

    let mut d_repr = None;
    if coef.lambda_f > 0.0 && !anchors.rows.is_empty() && !params.hidden.is_empty() {
        if anchors.frozen.shape() != (anchors.rows.len(), params.representation_dim()) {
            return Err(Error::State("anchor representations misaligned".into()));
        }
        let reps = fb.representations(inputs);
        let mut d = Matrix::zeros(reps.rows(), reps.cols());
        let mut value = 0.0;
        let scale = 2.0 * coef.lambda_f * anchors.weight;
        for (a, &r) in anchors.rows.iter().enumerate() {
            let frozen = anchors.frozen.row(a);
            let drow = d.row_mut(r);
            for ((dv, &now), &old) in drow.iter_mut().zip(reps.row(r)).zip(frozen) {
                let diff = now - old;
                value += diff * diff;
                *dv += scale * diff;
            }
        }
        out.feature = value;
        d_repr = Some(d);
    }
    let mut grads = backprop(params, inputs, &fb, &d_logits, d_repr.as_ref());

    if coef.lambda_ewc > 0.0 {
        let (value, mut g) = ewc_penalty(params, state)?;
        g.scale(coef.lambda_ewc);
        grads.add_assign(&g);
        out.ewc = value;
    }
    out.total = ce + coef.lambda_f * anchors.weight * out.feature + coef.lambda_ewc * out.ewc;
    Ok((out, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::{random_matrix, random_net};
    use crate::network::{backward, expand_output_layer, Activation};

    fn state_for(p: &NetworkParams, reps: Matrix, fisher_seed: u64, coef: Coefficients) -> ConsolidationState {
        let mut fisher = GradientSet::zeros_like(p);
        let mut rng = SeededRng::new(fisher_seed);
        for b in fisher.buffers_mut() {
            b.iter_mut().for_each(|v| *v = rng.uniform());
        }
        ConsolidationState::new(p.clone(), fisher, reps, coef).unwrap()
    }

    #[test]
    fn feature_regularizer_at_identity_is_zero() {
        let p = random_net(1, &[4, 5, 3], Activation::Tanh, 3);
        let x = random_matrix(2, 6, 4);
        let (_, posts) = map_batch(&p, &x);
        let (v, g) = feature_regularizer(&p, &x, posts.last().unwrap()).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.flatten().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn feature_regularizer_direct_value() {
        // one support point with δ_new = [1, 0] against δ_old = [0, 0]
        let layer = crate::network::DenseLayer {
            weights: Matrix::identity(2),
            bias: vec![0.0; 2],
            activation: Activation::Identity,
        };
        let p = NetworkParams::from_parts(vec![layer], Matrix::zeros(2, 2)).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let (v, _) = feature_regularizer(&p, &x, &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(v, 1.0);
        assert!(feature_regularizer(&p, &x, &Matrix::zeros(1, 3)).is_err());
        let (v, _) = feature_regularizer(&p, &Matrix::zeros(0, 2), &Matrix::zeros(0, 2)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn ewc_cases() {
        let p = random_net(3, &[3, 4], Activation::Relu, 2);
        let st = state_for(&p, Matrix::zeros(0, 4), 4, Coefficients::default());
        let (v, g) = ewc_penalty(&p, &st).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.flatten().iter().all(|&x| x == 0.0));

        // a single parameter with F = 2 drifting by 0.5 costs 2 · 0.25
        let mut fisher = GradientSet::zeros_like(&p);
        fisher.output.set(0, 0, 2.0);
        let st = ConsolidationState::new(p.clone(), fisher, Matrix::zeros(0, 4), Coefficients::default()).unwrap();
        let mut q = p.clone();
        let w = q.output.get(0, 0);
        q.output.set(0, 0, w + 0.5);
        let (v, g) = ewc_penalty(&q, &st).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!((g.output.get(0, 0) - 2.0).abs() < 1e-15);

        // rows added later are excluded
        let grown = expand_output_layer(&q, 4, &mut SeededRng::new(1), 1.0).unwrap();
        let (v2, g2) = ewc_penalty(&grown, &st).unwrap();
        assert_eq!(v, v2);
        assert!(g2.output.row(2).iter().chain(g2.output.row(3)).all(|&x| x == 0.0));

        let other = random_net(3, &[3, 5], Activation::Relu, 2);
        assert!(matches!(ewc_penalty(&other, &st), Err(Error::State(_))));
    }

    #[test]
    fn state_rejects_negative_fisher() {
        let p = random_net(3, &[3, 4], Activation::Relu, 2);
        let mut fisher = GradientSet::zeros_like(&p);
        fisher.output.set(0, 0, -1.0);
        assert!(ConsolidationState::new(p, fisher, Matrix::zeros(0, 4), Coefficients::default()).is_err());
    }

    #[test]
    fn fisher_preconditions_and_dead_inputs() {
        let p = random_net(5, &[3, 4], Activation::Relu, 3);
        let mut rng = SeededRng::new(0);
        assert!(fisher_diagonal(&p, &Matrix::zeros(0, 3), 1, &mut rng).is_err());
        let single = random_net(5, &[3, 4], Activation::Relu, 1);
        assert!(fisher_diagonal(&single, &random_matrix(1, 2, 3), 1, &mut rng).is_err());

        // input column 1 is zero everywhere: first-layer weights reading it get no signal
        let mut x = random_matrix(6, 10, 3);
        for r in 0..10 {
            x.set(r, 1, 0.0);
        }
        let f = fisher_diagonal(&p, &x, 3, &mut rng).unwrap();
        let w0 = &f.hidden[0].0;
        for r in 0..w0.rows() {
            assert_eq!(w0.get(r, 1), 0.0);
        }
        assert!(f.flatten().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_coefficients_reduce_to_cross_entropy() {
        let p = random_net(8, &[4, 6, 5], Activation::Relu, 3);
        let x = random_matrix(9, 7, 4);
        let labels = [0, 1, 2, 0, 1, 2, 2];
        let st = state_for(&p, Matrix::zeros(0, 5), 2, Coefficients { lambda_f: 0.0, lambda_ewc: 0.0 });
        let anchors = FeatureAnchors {
            rows: vec![0, 3],
            frozen: random_matrix(10, 2, 5),
            weight: 1.0,
        };
        let (l, g) = total_loss(&p, &x, &labels, &anchors, Some(&st)).unwrap();
        let (ce, gce) = backward(&p, &x, &labels).unwrap();
        assert_eq!(l.total, ce);
        assert_eq!(g, gce);
        let (l2, g2) = total_loss(&p, &x, &labels, &anchors, None).unwrap();
        assert_eq!(l2.total, ce);
        assert_eq!(g2, gce);
    }

    #[test]
    fn proximal_step_solves_the_quadratic() {
        let old = random_net(11, &[3, 4], Activation::Tanh, 2);
        let st = state_for(&old, Matrix::zeros(0, 4), 12, Coefficients { lambda_f: 0.0, lambda_ewc: 50.0 });
        let mut rng = SeededRng::new(13);
        let moved = {
            let mut p = expand_output_layer(&old, 3, &mut rng, 0.3).unwrap();
            for b in p.buffers_mut() {
                b.iter_mut().for_each(|v| *v += 0.5);
            }
            p
        };
        let lr = 0.2;
        let mut p = moved.clone();
        let value = ewc_proximal_step(&mut p, &st, lr).unwrap();
        for ((after, before), (o, f)) in p
            .buffers()
            .into_iter()
            .zip(moved.buffers())
            .zip(old.buffers().into_iter().zip(st.fisher.buffers()))
        {
            for i in 0..o.len() {
                // stationarity: (θ − θ')/η + 2λF(θ − θ_old) = 0
                let r = (after[i] - before[i]) / lr + 2.0 * 50.0 * f[i] * (after[i] - o[i]);
                assert!(r.abs() < 1e-9);
            }
            // rows added after the snapshot are left alone
            assert_eq!(&after[o.len()..], &before[o.len()..]);
        }
        assert!((value - ewc_penalty(&p, &st).unwrap().0).abs() < 1e-12);
        assert!(value < ewc_penalty(&moved, &st).unwrap().0);

        // small steps agree with the explicit gradient step to second order
        let tiny = 1e-8;
        let mut q = moved.clone();
        ewc_proximal_step(&mut q, &st, tiny).unwrap();
        let (_, g) = ewc_penalty(&moved, &st).unwrap();
        for ((a, m), gb) in q.buffers().into_iter().zip(moved.buffers()).zip(g.buffers()) {
            for i in 0..a.len() {
                let explicit = m[i] - tiny * 50.0 * gb[i];
                assert!((a[i] - explicit).abs() < 1e-9);
            }
        }
    }
}
