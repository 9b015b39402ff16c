//! Feed-forward classifier split into a mapping function (the hidden layers)
//! and a bias-free softmax output layer `W`, with hand-written backprop.
//!
//! The representation `δ` of an input is the activation of the last hidden
//! layer; logits are `z = W δ` and outputs `o = softmax(z)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{argmax, ensure_finite, gaussian_draws, gemm, softmax_in_place, Matrix, SeededRng};

pub const LOG_CLAMP: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Hidden layer: `a = act(W x + b)` with `W` stored as `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    /// Mapping function φ.
    pub hidden: Vec<DenseLayer>,
    /// Output layer `W`, `K × T`.
    pub output: Matrix,
}

/// Per-parameter buffers shaped like a [`NetworkParams`]. Used for
/// gradients, momentum and Fisher diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub hidden: Vec<(Matrix, Vec<f64>)>,
    pub output: Matrix,
}

impl GradientSet {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            hidden: params
                .hidden
                .iter()
                .map(|l| (Matrix::zeros(l.weights.rows(), l.weights.cols()), vec![0.0; l.bias.len()]))
                .collect(),
            output: Matrix::zeros(params.output.rows(), params.output.cols()),
        }
    }

    /// Flat views in canonical order: layer weights, layer bias, …, output.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.hidden.len() + 1);
        for (w, b) in &self.hidden {
            out.push(w.data());
            out.push(b);
        }
        out.push(self.output.data());
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.hidden.len() + 1);
        for (w, b) in &mut self.hidden {
            out.push(w.data_mut());
            out.push(b.as_mut_slice());
        }
        out.push(self.output.data_mut());
        out
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.buffers_mut().into_iter().zip(other.buffers()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for buf in self.buffers_mut() {
            buf.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.buffers().concat()
    }

    pub fn max_abs_diff(&self, other: &GradientSet) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, params: &NetworkParams) -> bool {
        self.hidden.len() == params.hidden.len()
            && self.hidden.iter().zip(&params.hidden).all(|((w, b), l)| {
                w.shape() == l.weights.shape() && b.len() == l.bias.len()
            })
            && self.output.shape() == params.output.shape()
    }
}

impl NetworkParams {
    /// He-initialized hidden layers (stdev √(2/fan_in), zero bias) and an
    /// output layer drawn from N(0, output_stdev²).
    pub fn init(
        input_dim: usize,
        hidden_widths: &[usize],
        activation: Activation,
        num_classes: usize,
        output_stdev: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_widths.contains(&0) || num_classes == 0 {
            return Err(Error::param("layer widths must be positive"));
        }
        let mut hidden = Vec::with_capacity(hidden_widths.len());
        let mut fan_in = input_dim;
        for &width in hidden_widths {
            let stdev = (2.0 / fan_in as f64).sqrt();
            let w = gaussian_draws(rng, width * fan_in, 0.0, stdev)?;
            hidden.push(DenseLayer {
                weights: Matrix::from_vec_unchecked(width, fan_in, w),
                bias: vec![0.0; width],
                activation,
            });
            fan_in = width;
        }
        let w = gaussian_draws(rng, num_classes * fan_in, 0.0, output_stdev)?;
        Ok(Self {
            hidden,
            output: Matrix::from_vec_unchecked(num_classes, fan_in, w),
        })
    }

    /// Validates that layer dimensions chain and every weight is finite.
    pub fn from_parts(hidden: Vec<DenseLayer>, output: Matrix) -> Result<Self> {
        let params = Self { hidden, output };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        let mut prev: Option<usize> = None;
        for (i, l) in self.hidden.iter().enumerate() {
            if l.bias.len() != l.weights.rows() {
                return Err(Error::shape(format!("layer {i} bias length")));
            }
            if let Some(p) = prev {
                if l.weights.cols() != p {
                    return Err(Error::shape(format!("layer {i} does not chain")));
                }
            }
            prev = Some(l.weights.rows());
        }
        if let Some(p) = prev {
            if self.output.cols() != p {
                return Err(Error::shape("output layer does not chain"));
            }
        }
        for buf in self.buffers() {
            ensure_finite(buf, "network parameters")?;
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.output.cols(), |l| l.weights.cols())
    }

    /// Width `T` of the representation.
    pub fn representation_dim(&self) -> usize {
        self.output.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.output.rows()
    }

    pub fn num_params(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.hidden.len() + 1);
        for l in &self.hidden {
            out.push(l.weights.data());
            out.push(&l.bias);
        }
        out.push(self.output.data());
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.hidden.len() + 1);
        for l in &mut self.hidden {
            out.push(l.weights.data_mut());
            out.push(l.bias.as_mut_slice());
        }
        out.push(self.output.data_mut());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Per-example record of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
    pub representation: Vec<f64>,
    pub logits: Vec<f64>,
    pub output: Vec<f64>,
}

/// Batched forward pass, rows aligned with the input rows.
#[derive(Clone, Debug)]
pub struct BatchForward {
    pub pre_activations: Vec<Matrix>,
    pub activations: Vec<Matrix>,
    pub logits: Matrix,
    pub outputs: Matrix,
}

impl BatchForward {
    /// The representation matrix `N × T` (the last hidden activation, or the
    /// input when there are no hidden layers).
    pub fn representations<'a>(&'a self, inputs: &'a Matrix) -> &'a Matrix {
        self.activations.last().unwrap_or(inputs)
    }
}

/// Runs only the mapping function; returns the `N × T` representations.
pub(crate) fn map_batch(params: &NetworkParams, inputs: &Matrix) -> (Vec<Matrix>, Vec<Matrix>) {
    let mut pres = Vec::with_capacity(params.hidden.len());
    let mut posts: Vec<Matrix> = Vec::with_capacity(params.hidden.len());
    for layer in &params.hidden {
        let x = posts.last().unwrap_or(inputs);
        let mut pre = Matrix::zeros(x.rows(), layer.weights.rows());
        gemm(x, false, &layer.weights, true, 1.0, 0.0, &mut pre);
        for r in 0..pre.rows() {
            for (v, b) in pre.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        let mut post = pre.clone();
        post.data_mut()
            .iter_mut()
            .for_each(|v| *v = layer.activation.apply(*v));
        pres.push(pre);
        posts.push(post);
    }
    (pres, posts)
}

pub fn forward_batch(params: &NetworkParams, inputs: &Matrix) -> Result<BatchForward> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::shape(format!(
            "input dimension {} but network expects {}",
            inputs.cols(),
            params.input_dim()
        )));
    }
    let (pre_activations, activations) = map_batch(params, inputs);
    let reps = activations.last().unwrap_or(inputs);
    let mut logits = Matrix::zeros(reps.rows(), params.num_classes());
    gemm(reps, false, &params.output, true, 1.0, 0.0, &mut logits);
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    let mut outputs = logits.clone();
    for r in 0..outputs.rows() {
        softmax_in_place(outputs.row_mut(r));
    }
    Ok(BatchForward {
        pre_activations,
        activations,
        logits,
        outputs,
    })
}

pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<ForwardTrace> {
    ensure_finite(x, "network input")?;
    let input = Matrix::from_vec_unchecked(1, x.len(), x.to_vec());
    let fb = forward_batch(params, &input)?;
    let representation = fb.representations(&input).row(0).to_vec();
    Ok(ForwardTrace {
        pre_activations: fb.pre_activations.iter().map(|m| m.row(0).to_vec()).collect(),
        activations: fb.activations.iter().map(|m| m.row(0).to_vec()).collect(),
        representation,
        logits: fb.logits.row(0).to_vec(),
        output: fb.outputs.row(0).to_vec(),
    })
}

/// Argmax predictions, evaluated in chunks to bound memory.
pub fn predict(params: &NetworkParams, inputs: &Matrix) -> Result<Vec<usize>> {
    const CHUNK: usize = 2048;
    let mut preds = Vec::with_capacity(inputs.rows());
    let idx: Vec<usize> = (0..inputs.rows()).collect();
    for chunk in idx.chunks(CHUNK) {
        let part = inputs.select_rows(chunk);
        let fb = forward_batch(params, &part)?;
        preds.extend(fb.logits.iter_rows().map(argmax));
    }
    Ok(preds)
}

/// Mean cross-entropy `−(1/N) Σ_n log o_{n, y_n}`, log argument clamped at
/// [`LOG_CLAMP`].
pub fn cross_entropy(outputs: &Matrix, labels: &[usize]) -> Result<f64> {
    if outputs.rows() != labels.len() {
        return Err(Error::shape("outputs and labels differ in length"));
    }
    if labels.is_empty() {
        return Err(Error::shape("cross-entropy of an empty batch"));
    }
    let mut total = 0.0;
    for (n, &y) in labels.iter().enumerate() {
        if y >= outputs.cols() {
            return Err(Error::shape(format!(
                "label {y} but only {} outputs",
                outputs.cols()
            )));
        }
        total -= outputs.get(n, y).max(LOG_CLAMP).ln();
    }
    Ok(total / labels.len() as f64)
}

/// `∂L/∂z` for the mean cross-entropy: `(o − ỹ) · scale`.
pub(crate) fn softmax_ce_logit_grad(outputs: &Matrix, labels: &[usize], scale: f64) -> Matrix {
    let mut d = outputs.clone();
    for (n, &y) in labels.iter().enumerate() {
        let v = d.get(n, y);
        d.set(n, y, v - 1.0);
    }
    d.scale(scale);
    d
}

/// Reverse pass given `∂/∂z` and an optional extra gradient arriving at
/// the representation (used by the feature regularizer).
pub(crate) fn backprop(
    params: &NetworkParams,
    inputs: &Matrix,
    fb: &BatchForward,
    d_logits: &Matrix,
    d_repr_extra: Option<&Matrix>,
) -> GradientSet {
    let mut grads = GradientSet::zeros_like(params);
    let reps = fb.representations(inputs);
    gemm(d_logits, true, reps, false, 1.0, 0.0, &mut grads.output);

    if params.hidden.is_empty() {
        return grads;
    }
    let mut d_act = Matrix::zeros(d_logits.rows(), params.representation_dim());
    gemm(d_logits, false, &params.output, false, 1.0, 0.0, &mut d_act);
    if let Some(extra) = d_repr_extra {
        d_act.add_assign(extra);
    }
    backprop_hidden(params, inputs, &fb.pre_activations, &fb.activations, d_act, &mut grads);
    grads
}

/// Continues a reverse pass from `∂/∂δ` down through the mapping function.
pub(crate) fn backprop_hidden(
    params: &NetworkParams,
    inputs: &Matrix,
    pres: &[Matrix],
    posts: &[Matrix],
    mut d_act: Matrix,
    grads: &mut GradientSet,
) {
    for l in (0..params.hidden.len()).rev() {
        let layer = &params.hidden[l];
        let mut d_pre = d_act;
        for ((d, &p), &a) in d_pre
            .data_mut()
            .iter_mut()
            .zip(pres[l].data())
            .zip(posts[l].data())
        {
            *d *= layer.activation.derivative(p, a);
        }
        let x = if l == 0 { inputs } else { &posts[l - 1] };
        let (gw, gb) = &mut grads.hidden[l];
        gemm(&d_pre, true, x, false, 1.0, 0.0, gw);
        gb.iter_mut().for_each(|v| *v = 0.0);
        for r in d_pre.iter_rows() {
            for (g, v) in gb.iter_mut().zip(r) {
                *g += v;
            }
        }
        if l == 0 {
            break;
        }
        let mut d_prev = Matrix::zeros(d_pre.rows(), layer.weights.cols());
        gemm(&d_pre, false, &layer.weights, false, 1.0, 0.0, &mut d_prev);
        d_act = d_prev;
    }
}

/// Mean cross-entropy over the batch and its gradient for every parameter.
pub fn backward(params: &NetworkParams, inputs: &Matrix, labels: &[usize]) -> Result<(f64, GradientSet)> {
    if labels.is_empty() {
        return Err(Error::shape("backward on an empty batch"));
    }
    let fb = forward_batch(params, inputs)?;
    let loss = cross_entropy(&fb.outputs, labels)?;
    let d_logits = softmax_ce_logit_grad(&fb.outputs, labels, 1.0 / labels.len() as f64);
    Ok((loss, backprop(params, inputs, &fb, &d_logits, None)))
}

/// Closed-form negative last-layer gradient
/// `(1/N) Σ_n (ỹ_{n,i} − o_{n,i}) δ_{n,j}`, evaluated with plain loops.
pub fn last_layer_gradient_formula(outputs: &Matrix, targets: &Matrix, representations: &Matrix) -> Result<Matrix> {
    let (n, k) = outputs.shape();
    if targets.shape() != (n, k) || representations.rows() != n {
        return Err(Error::shape("outputs, targets and representations disagree"));
    }
    if n == 0 {
        return Err(Error::shape("empty batch"));
    }
    let t = representations.cols();
    let mut g = Matrix::zeros(k, t);
    for i in 0..k {
        for j in 0..t {
            let mut acc = 0.0;
            for s in 0..n {
                acc += (targets.get(s, i) - outputs.get(s, i)) * representations.get(s, j);
            }
            g.set(i, j, acc / n as f64);
        }
    }
    Ok(g)
}

/// SGD with classical momentum: `v ← μ v − η g`, `θ ← θ + v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<GradientSet>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(Error::param(format!(
                "learning rate {learning_rate} / momentum {momentum} out of range"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: None,
        })
    }

    pub fn velocity(&self) -> Option<&GradientSet> {
        self.velocity.as_ref()
    }

    pub fn step(&mut self, params: &mut NetworkParams, grads: &GradientSet) -> Result<()> {
        if !grads.same_shape(params) {
            return Err(Error::shape("gradient does not match parameters"));
        }
        let velocity = match &mut self.velocity {
            Some(v) if v.same_shape(params) => v,
            slot => slot.insert(GradientSet::zeros_like(params)),
        };
        for ((p, v), g) in params
            .buffers_mut()
            .into_iter()
            .zip(velocity.buffers_mut())
            .zip(grads.buffers())
        {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.momentum * *v - self.learning_rate * g;
                *p += *v;
            }
        }
        Ok(())
    }
}

/// Grows the output layer to `new_total_classes` rows. Existing rows are
/// copied bit for bit; new rows are drawn from N(0, init_stdev²).
pub fn expand_output_layer(
    params: &NetworkParams,
    new_total_classes: usize,
    rng: &mut SeededRng,
    init_stdev: f64,
) -> Result<NetworkParams> {
    let k = params.num_classes();
    if new_total_classes <= k {
        return Err(Error::param(format!(
            "cannot expand {k} classes to {new_total_classes}"
        )));
    }
    let t = params.representation_dim();
    let mut data = params.output.data().to_vec();
    data.extend(gaussian_draws(rng, (new_total_classes - k) * t, 0.0, init_stdev)?);
    Ok(NetworkParams {
        hidden: params.hidden.clone(),
        output: Matrix::from_vec_unchecked(new_total_classes, t, data),
    })
}
