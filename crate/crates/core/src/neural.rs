//! Dense feedforward networks: forward pass, reverse-mode gradients, MSE and
//! binary cross-entropy losses, Adam, and a plain-text parameter format.
//!
//! Matrices are row-major with one sample per row. Layer `l` maps a batch
//! `X` (`B x in`) to `act(X W^T + b)` with `W` stored `out x in`.
//!
//! Flattened parameter order, used by [`DenseNetwork::gradients`],
//! [`DenseNetwork::params`] and [`AdamState`]: for each layer in order, the
//! weight matrix row by row, then the bias vector.
//!
//! The kernels below compute every output row with a fixed summation order
//! that does not depend on the other rows of the batch, so a row's result is
//! bit-identical whether it is evaluated alone or inside any batch.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative_at_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Format(format!("unknown activation `{other}`"))),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        Error::check_dim(weights.nrows(), bias.len())?;
        if weights.ncols() == 0 || weights.nrows() == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters"));
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn weight_slice(&self) -> &[f64] {
        self.weights
            .as_slice()
            .expect("weights are kept in standard layout")
    }
}

/// Four-lane dot product with a fixed reduction order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Activations recorded by a forward pass: `activations[0]` is the input,
/// `activations[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub activations: Vec<Array2<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("forward pass has an input")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.activations.pop().expect("forward pass has an input")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mse,
    Bce,
}

/// `(1/m) * sum_i mean_j (p_ij - t_ij)^2`, i.e. the mean over all elements.
pub fn mse_loss(predicted: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if predicted.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            actual: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("loss inputs"));
    }
    let per_sample: f64 = predicted
        .rows()
        .into_iter()
        .zip(target.rows())
        .map(|(p, t)| {
            p.iter()
                .zip(t.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / p.len() as f64
        })
        .sum();
    Ok(per_sample / predicted.nrows() as f64)
}

/// `-(1/m) * sum [y ln p + (1 - y) ln(1 - p)]` with `p` clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    Error::check_dim(target.len(), predicted.len())?;
    if predicted.is_empty() {
        return Err(Error::Empty("loss inputs"));
    }
    let total: f64 = predicted
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / predicted.len() as f64)
}

pub fn loss_value(loss: Loss, predicted: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    match loss {
        Loss::Mse => mse_loss(predicted, target),
        Loss::Bce => {
            if predicted.dim() != target.dim() {
                return Err(Error::DimensionMismatch {
                    expected: target.len(),
                    actual: predicted.len(),
                });
            }
            let p: Vec<f64> = predicted.iter().copied().collect();
            let t: Vec<f64> = target.iter().copied().collect();
            bce_loss(&p, &t)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<Layer>,
}

impl DenseNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network layers"));
        }
        for pair in layers.windows(2) {
            Error::check_dim(pair[0].output_dim(), pair[1].input_dim())?;
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights (bound `sqrt(6 / (fan_in + fan_out))`), zero biases.
    ///
    /// `widths` lists the input width followed by every layer's output width;
    /// `activations` has one entry per layer.
    pub fn init(widths: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::invalid(format!(
                "{} widths do not describe {} layers",
                widths.len(),
                activations.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut rng = seed::rng(seed);
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = glorot_bound(fan_in, fan_out);
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                Layer::new(weights, Array1::zeros(fan_out), activation)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight_slice());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        Error::check_dim(self.n_params(), params.len())?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            slice.copy_from_slice(&params[offset..offset + slice.len()]);
            offset += slice.len();
        }
        Ok(())
    }

    /// Mutable parameter blocks in flattening order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            out.push(layer.weights.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("contiguous bias"));
        }
        out
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<ForwardPass> {
        Error::check_dim(self.input_dim(), batch.ncols())?;
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.as_standard_layout().into_owned());
        for layer in &self.layers {
            let input = activations.last().expect("input pushed above");
            let next = layer_forward(layer, input);
            activations.push(next);
        }
        Ok(ForwardPass { activations })
    }

    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(batch)?.into_output())
    }

    /// Backpropagates `grad_output` (dL/d output, `B x out`) through a
    /// recorded pass. Returns the flat parameter gradient and dL/d input.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_output: ArrayView2<f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        let out = pass.output();
        if grad_output.dim() != out.dim() {
            return Err(Error::DimensionMismatch {
                expected: out.len(),
                actual: grad_output.len(),
            });
        }
        let last = self.layers.len() - 1;
        let act = self.layers[last].activation;
        let mut delta = grad_output.to_owned();
        delta.zip_mut_with(out, |g, &a| *g *= act.derivative_at_output(a));
        Ok(self.backward_from_delta(pass, delta))
    }

    /// `delta` is dL/d(pre-activation) of the final layer.
    fn backward_from_delta(
        &self,
        pass: &ForwardPass,
        mut delta: Array2<f64>,
    ) -> (Vec<f64>, Array2<f64>) {
        let mut grads = vec![0.0; self.n_params()];
        let mut offset = self.n_params();
        let mut grad_input = Array2::zeros((0, 0));
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &pass.activations[l];
            let n_w = layer.weights.len();
            let n_b = layer.bias.len();
            offset -= n_w + n_b;
            let (gw, gb) = grads[offset..offset + n_w + n_b].split_at_mut(n_w);
            let in_dim = layer.input_dim();
            for (x, d) in input.rows().into_iter().zip(delta.rows()) {
                let x = x.as_slice().expect("standard layout");
                for (o, &dz) in d.iter().enumerate() {
                    if dz != 0.0 {
                        axpy(dz, x, &mut gw[o * in_dim..(o + 1) * in_dim]);
                    }
                    gb[o] += dz;
                }
            }
            let w = layer.weight_slice();
            let mut gin = Array2::<f64>::zeros(input.dim());
            for (mut gi, d) in gin.rows_mut().into_iter().zip(delta.rows()) {
                let gi = gi.as_slice_mut().expect("standard layout");
                for (o, &dz) in d.iter().enumerate() {
                    if dz != 0.0 {
                        axpy(dz, &w[o * in_dim..(o + 1) * in_dim], gi);
                    }
                }
            }
            if l > 0 {
                let prev_act = self.layers[l - 1].activation;
                gin.zip_mut_with(input, |g, &a| *g *= prev_act.derivative_at_output(a));
                delta = gin;
            } else {
                grad_input = gin;
            }
        }
        (grads, grad_input)
    }

    /// Exact gradient of `loss(forward(batch), target)` in flattening order.
    ///
    /// For BCE over a sigmoid output the pre-activation gradient is taken in
    /// the fused form `(p - y) / m`, which is the derivative of the unclamped
    /// loss (identical to the clamped one wherever the clamp is inactive).
    pub fn gradients(
        &self,
        batch: ArrayView2<f64>,
        target: ArrayView2<f64>,
        loss: Loss,
    ) -> Result<Vec<f64>> {
        let pass = self.forward(batch)?;
        Ok(self.gradients_from_pass(&pass, target, loss)?.0)
    }

    /// Like [`gradients`](Self::gradients) on an existing pass; also returns the loss value.
    pub fn gradients_from_pass(
        &self,
        pass: &ForwardPass,
        target: ArrayView2<f64>,
        loss: Loss,
    ) -> Result<(Vec<f64>, f64)> {
        let out = pass.output();
        if out.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: out.len(),
                actual: target.len(),
            });
        }
        let value = loss_value(loss, out.view(), target)?;
        let n = out.len() as f64;
        let last_act = self.layers[self.layers.len() - 1].activation;
        let grads = match (loss, last_act) {
            (Loss::Bce, Activation::Sigmoid) => {
                let mut delta = out.clone();
                delta.zip_mut_with(&target, |p, &y| *p = (*p - y) / n);
                self.backward_from_delta(pass, delta).0
            }
            (Loss::Bce, _) => {
                let mut g = out.clone();
                g.zip_mut_with(&target, |p, &y| {
                    *p = if *p > BCE_CLAMP && *p < 1.0 - BCE_CLAMP {
                        (-(y / *p) + (1.0 - y) / (1.0 - *p)) / n
                    } else {
                        0.0
                    };
                });
                self.backward(pass, g.view())?.0
            }
            (Loss::Mse, _) => {
                let mut g = out.clone();
                g.zip_mut_with(&target, |p, &y| *p = 2.0 * (*p - y) / n);
                self.backward(pass, g.view())?.0
            }
        };
        Ok((grads, value))
    }

    /// Plain-text dump: a version line, the layer count, then per layer a
    /// shape line `layer <in> <out> <activation>` followed by a `w` line
    /// (row-major weights) and a `b` line. Values use Rust's shortest
    /// round-trip float formatting, so a dump reloads bit-identically.
    pub fn write_text(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "dense-network v1")?;
        writeln!(out, "layers {}", self.layers.len())?;
        for layer in &self.layers {
            writeln!(
                out,
                "layer {} {} {}",
                layer.input_dim(),
                layer.output_dim(),
                layer.activation
            )?;
            write_values(&mut out, "w", layer.weight_slice().iter())?;
            write_values(&mut out, "b", layer.bias.iter())?;
        }
        Ok(())
    }

    pub fn read_text(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        Self::read_from_lines(&mut lines)
    }

    pub(crate) fn read_from_lines<B: BufRead>(lines: &mut std::io::Lines<B>) -> Result<Self> {
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format("unexpected end of network dump".into()))?
                .map_err(|e| Error::Format(e.to_string()))
        };
        let header = next()?;
        if header.trim() != "dense-network v1" {
            return Err(Error::Format(format!("unsupported header `{header}`")));
        }
        let n_layers: usize = parse_keyed(&next()?, "layers")?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let shape = next()?;
            let parts: Vec<&str> = shape.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "layer" {
                return Err(Error::Format(format!("bad layer line `{shape}`")));
            }
            let fan_in: usize = parse_token(parts[1])?;
            let fan_out: usize = parse_token(parts[2])?;
            let activation: Activation = parts[3].parse()?;
            let w = read_values(&next()?, "w", fan_in * fan_out)?;
            let b = read_values(&next()?, "b", fan_out)?;
            let weights = Array2::from_shape_vec((fan_out, fan_in), w)
                .map_err(|e| Error::Format(e.to_string()))?;
            layers.push(Layer::new(weights, Array1::from(b), activation)?);
        }
        Self::new(layers)
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn layer_forward(layer: &Layer, input: &Array2<f64>) -> Array2<f64> {
    let in_dim = layer.input_dim();
    let w = layer.weight_slice();
    let mut out = Array2::<f64>::zeros((input.nrows(), layer.output_dim()));
    for (x, mut o) in input.rows().into_iter().zip(out.rows_mut()) {
        let x = x.as_slice().expect("standard layout");
        for (j, v) in o.iter_mut().enumerate() {
            let z = layer.bias[j] + dot(x, &w[j * in_dim..(j + 1) * in_dim]);
            *v = layer.activation.apply(z);
        }
    }
    out
}

pub(crate) fn write_values<'a>(
    out: &mut impl Write,
    key: &str,
    values: impl Iterator<Item = &'a f64>,
) -> std::io::Result<()> {
    write!(out, "{key}")?;
    for v in values {
        write!(out, " {v:?}")?;
    }
    writeln!(out)
}

pub(crate) fn read_values(line: &str, key: &str, expected: usize) -> Result<Vec<f64>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Format(format!(
            "expected `{key}` line, got `{line}`"
        )));
    }
    let values = parts.map(parse_token).collect::<Result<Vec<f64>>>()?;
    if values.len() != expected {
        return Err(Error::Format(format!(
            "`{key}` line has {} values, expected {expected}",
            values.len()
        )));
    }
    Ok(values)
}

pub(crate) fn parse_keyed<T: FromStr>(line: &str, key: &str) -> Result<T> {
    match line.split_whitespace().collect::<Vec<_>>().as_slice() {
        [k, v] if *k == key => parse_token(v),
        _ => Err(Error::Format(format!(
            "expected `{key} <value>`, got `{line}`"
        ))),
    }
}

pub(crate) fn parse_token<T: FromStr>(token: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse `{token}`")))
}

/// Adam optimizer state (Kingma & Ba update with bias correction).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub timestep: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

    pub fn new(n_params: usize, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {learning_rate} must be positive"
            )));
        }
        Ok(Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            timestep: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        })
    }

    /// Applies one update to `params` (blocks in flattening order).
    /// Validates the gradient before touching any state.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[f64]) -> Result<()> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        Error::check_dim(self.first_moment.len(), total)?;
        Error::check_dim(total, grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.timestep += 1;
        let t = self.timestep as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let mut offset = 0;
        for block in params.iter_mut() {
            for p in block.iter_mut() {
                let g = grads[offset];
                let m = &mut self.first_moment[offset];
                let v = &mut self.second_moment[offset];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                offset += 1;
            }
        }
        Ok(())
    }
}

pub fn adam_step(net: &mut DenseNetwork, state: &mut AdamState, grads: &[f64]) -> Result<()> {
    state.step(&mut net.param_slices_mut(), grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

/// Mini-batch Adam training. Rows are reshuffled every epoch from a stream
/// derived from `(seed, epoch)`; the last partial batch is kept. Returns the
/// sample-weighted mean loss of each epoch.
pub fn fit(
    net: &mut DenseNetwork,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    loss: Loss,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::Empty("training rows"));
    }
    Error::check_dim(n, targets.nrows())?;
    Error::check_dim(net.output_dim(), targets.ncols())?;
    if schedule.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut adam = AdamState::new(net.n_params(), schedule.learning_rate)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut seed::derived_rng(seed, &[epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let x = inputs.select(Axis(0), chunk);
            let y = targets.select(Axis(0), chunk);
            let pass = net.forward(x.view())?;
            let (grads, value) = net.gradients_from_pass(&pass, y.view(), loss)?;
            adam_step(net, &mut adam, &grads)?;
            total += value * chunk.len() as f64;
        }
        history.push(total / n as f64);
    }
    Ok(history)
}

/// Per-row mean squared error between `rows` and their reconstruction.
pub fn row_mse(rows: ArrayView2<f64>, reconstruction: ArrayView2<f64>) -> Vec<f64> {
    rows.rows()
        .into_iter()
        .zip(reconstruction.rows())
        .map(|(x, r)| row_sq_err(x, r) / x.len() as f64)
        .collect()
}

fn row_sq_err(x: ArrayView1<f64>, r: ArrayView1<f64>) -> f64 {
    x.iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn single(w: f64, b: f64, act: Activation) -> DenseNetwork {
        DenseNetwork::new(vec![Layer::new(array![[w]], array![b], act).unwrap()]).unwrap()
    }

    #[test]
    fn forward_examples() {
        assert_eq!(
            single(2.0, 1.0, Activation::Linear)
                .predict(array![[3.0]].view())
                .unwrap(),
            array![[7.0]]
        );
        assert_eq!(
            single(1.0, 0.0, Activation::Relu)
                .predict(array![[-5.0]].view())
                .unwrap(),
            array![[0.0]]
        );
        let out = single(0.0, 0.0, Activation::Sigmoid)
            .predict(array![[123.0], [-4.0]].view())
            .unwrap();
        assert_eq!(out, array![[0.5], [0.5]]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = single(1.0, 0.0, Activation::Linear);
        assert!(net.forward(array![[1.0, 2.0]].view()).is_err());
        assert!(matches!(
            net.forward(array![[f64::NAN]].view()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn chain_validation() {
        let a = Layer::new(Array2::zeros((3, 2)), Array1::zeros(3), Activation::Relu).unwrap();
        let b = Layer::new(Array2::zeros((1, 4)), Array1::zeros(1), Activation::Linear).unwrap();
        assert!(DenseNetwork::new(vec![a, b]).is_err());
        assert!(Layer::new(Array2::zeros((3, 2)), Array1::zeros(2), Activation::Relu).is_err());
        assert!(DenseNetwork::init(&[3], &[], 0).is_err());
        assert!(
            DenseNetwork::init(&[3, 0, 1], &[Activation::Relu, Activation::Linear], 0).is_err()
        );
    }

    #[test]
    fn mse_examples() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(mse_loss(a.view(), a.view()).unwrap(), 0.0);
        assert_eq!(
            mse_loss(array![[0.0]].view(), array![[1.0]].view()).unwrap(),
            1.0
        );
        assert_eq!(
            mse_loss(array![[1.0], [3.0]].view(), array![[0.0], [0.0]].view()).unwrap(),
            5.0
        );
        assert!(mse_loss(array![[1.0]].view(), array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&[1.0], &[1.0]).unwrap() < 1e-6);
        let expected = -(0.9f64.ln() + 0.9f64.ln()) / 2.0;
        assert!((bce_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.105361).abs() < 1e-6);
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
        // Clamped: log(0) never appears.
        assert!(bce_loss(&[0.0], &[1.0]).unwrap().is_finite());
    }

    #[test]
    fn hand_derivative_linear_mse() {
        let net = single(2.0, 0.0, Activation::Linear);
        let g = net
            .gradients(array![[1.0]].view(), array![[0.0]].view(), Loss::Mse)
            .unwrap();
        assert_eq!(g, vec![4.0, 4.0]);
    }

    #[test]
    fn zero_error_gives_zero_gradient() {
        let net =
            DenseNetwork::init(&[3, 4, 2], &[Activation::Relu, Activation::Sigmoid], 5).unwrap();
        let x = array![[0.1, 0.2, 0.3], [0.5, 0.1, 0.9]];
        let y = net.predict(x.view()).unwrap();
        let g = net.gradients(x.view(), y.view(), Loss::Mse).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn glorot_init() {
        let a = DenseNetwork::init(&[64, 16], &[Activation::Relu], 9).unwrap();
        let b = DenseNetwork::init(&[64, 16], &[Activation::Relu], 9).unwrap();
        let c = DenseNetwork::init(&[64, 16], &[Activation::Relu], 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        let bound = (6.0f64 / 80.0).sqrt();
        assert_eq!(glorot_bound(64, 16), bound);
        let w = &a.layers()[0].weights;
        assert!(w.iter().all(|v| v.abs() <= bound));
        // Uniform draws should come close to the bound on 1024 samples.
        assert!(w.iter().fold(0.0f64, |m, v| m.max(v.abs())) > 0.95 * bound);
        assert!(a.layers()[0].bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_zero_gradient_is_noop_from_fresh_state() {
        let mut net = DenseNetwork::init(&[2, 3], &[Activation::Linear], 1).unwrap();
        let before = net.params();
        let mut state = AdamState::new(net.n_params(), 1e-3).unwrap();
        adam_step(&mut net, &mut state, &vec![0.0; before.len()]).unwrap();
        assert_eq!(net.params(), before);
        assert_eq!(state.timestep, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        for g in [-3.0, 1e-3, 250.0] {
            let mut net = single(0.5, 0.0, Activation::Linear);
            let mut state = AdamState::new(2, 0.01).unwrap();
            adam_step(&mut net, &mut state, &[g, 0.0]).unwrap();
            let moved = net.params()[0] - 0.5;
            assert!(
                (moved + 0.01 * g.signum()).abs() < 1e-6,
                "g={g} moved={moved}"
            );
        }
    }

    #[test]
    fn adam_minimizes_scalar_quadratic() {
        let mut w = [0.0f64];
        let mut state = AdamState::new(1, 0.1).unwrap();
        for _ in 0..100 {
            let g = 2.0 * (w[0] - 3.0);
            state.step(&mut [&mut w[..]], &[g]).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 0.5, "w = {}", w[0]);
    }

    #[test]
    fn adam_rejects_bad_gradients() {
        let mut net = single(0.5, 0.0, Activation::Linear);
        let mut state = AdamState::new(2, 0.01).unwrap();
        assert!(adam_step(&mut net, &mut state, &[1.0]).is_err());
        assert!(adam_step(&mut net, &mut state, &[f64::NAN, 0.0]).is_err());
        assert_eq!(state.timestep, 0);
        assert!(AdamState::new(2, 0.0).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let net =
            DenseNetwork::init(&[5, 4, 3], &[Activation::Relu, Activation::Sigmoid], 3).unwrap();
        let mut buf = Vec::new();
        net.write_text(&mut buf).unwrap();
        let back = DenseNetwork::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert!(DenseNetwork::read_text("dense-network v2\n".as_bytes()).is_err());
        let truncated = String::from_utf8(buf)
            .unwrap()
            .lines()
            .take(4)
            .collect::<Vec<_>>()
            .join("\n");
        assert!(DenseNetwork::read_text(truncated.as_bytes()).is_err());
    }

    #[test]
    fn fit_keeps_partial_batch_and_is_deterministic() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| ((i * 3 + j) % 7) as f64 / 7.0);
        let schedule = TrainSchedule {
            epochs: 5,
            batch_size: 4,
            learning_rate: 1e-2,
        };
        let mut a =
            DenseNetwork::init(&[2, 3, 2], &[Activation::Relu, Activation::Sigmoid], 2).unwrap();
        let mut b = a.clone();
        let ha = fit(&mut a, x.view(), x.view(), Loss::Mse, &schedule, 11).unwrap();
        let hb = fit(&mut b, x.view(), x.view(), Loss::Mse, &schedule, 11).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert_eq!(ha.len(), 5);
    }

    #[test]
    fn row_results_do_not_depend_on_batch() {
        let net =
            DenseNetwork::init(&[7, 9, 7], &[Activation::Relu, Activation::Sigmoid], 4).unwrap();
        let x = Array2::from_shape_fn((6, 7), |(i, j)| ((i * 13 + j * 7) % 11) as f64 / 11.0);
        let full = net.predict(x.view()).unwrap();
        for i in 0..6 {
            let alone = net.predict(x.slice(ndarray::s![i..i + 1, ..])).unwrap();
            assert_eq!(alone.row(0), full.row(i));
        }
    }
}
