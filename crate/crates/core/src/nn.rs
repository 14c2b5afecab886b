//! Feed-forward tanh networks with exact reverse-mode gradients, inverted
//! dropout and a mini-batch trainer.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Lower bound added after every softplus link.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

/// Elementwise map applied to the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputLink {
    #[default]
    Identity,
    /// `softplus(z) + VARIANCE_FLOOR`, used by variance networks.
    Softplus,
}

/// How raw network outputs are compared with targets during training.
///
/// The control-affine heads read the output as a row-major
/// `state_dim x k` matrix `F` and the dataset context as `ū` (length `k`);
/// the prediction is `F ū`, or `F (ū ⊙ ū)` for the squared variant that
/// propagates per-entry variances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Head {
    #[default]
    Direct,
    ControlAffine {
        state_dim: usize,
    },
    ControlAffineSquared {
        state_dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    #[serde(default)]
    pub output_link: OutputLink,
    #[serde(default)]
    pub head: Head,
}

impl NetworkSpec {
    pub fn mlp(input_dim: usize, output_dim: usize, hidden_layers: usize, hidden_units: usize) -> Self {
        NetworkSpec {
            input_dim,
            output_dim,
            hidden_layers,
            hidden_units,
            activation: Activation::Tanh,
            dropout_rate: 0.0,
            output_link: OutputLink::Identity,
            head: Head::Direct,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_link(mut self, link: OutputLink) -> Self {
        self.output_link = link;
        self
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn with_output_dim(mut self, output_dim: usize) -> Self {
        self.output_dim = output_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("network dims must be >= 1"));
        }
        if self.hidden_layers > 0 && self.hidden_units == 0 {
            return Err(Error::invalid("hidden_units must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must lie in [0, 1)"));
        }
        match self.head {
            Head::Direct => {}
            Head::ControlAffine { state_dim } | Head::ControlAffineSquared { state_dim } => {
                if state_dim == 0 || !self.output_dim.is_multiple_of(state_dim) {
                    return Err(Error::invalid(
                        "control-affine head needs output_dim divisible by state_dim",
                    ));
                }
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_units));
            fan_in = self.hidden_units;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Dimension of the supervised target implied by the head.
    pub fn target_dim(&self) -> usize {
        match self.head {
            Head::Direct => self.output_dim,
            Head::ControlAffine { state_dim } | Head::ControlAffineSquared { state_dim } => state_dim,
        }
    }
}

/// Shape of one dense layer: `rows x cols` weights followed by `rows` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub bias: bool,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols + if self.bias { self.rows } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flattened network weights plus per-layer shape metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub shapes: Vec<LayerShape>,
}

impl ParamVector {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let shapes: Vec<LayerShape> = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| LayerShape {
                rows: o,
                cols: i,
                bias: true,
            })
            .collect();
        let n = shapes.iter().map(LayerShape::len).sum();
        ParamVector {
            values: vec![0.0; n],
            shapes,
        }
    }

    pub fn from_values(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(spec);
        Error::check_len("parameter vector", p.values.len(), values.len())?;
        p.values = values;
        Ok(p)
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` per layer, zero biases.
    pub fn glorot<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        let mut off = 0;
        for s in &p.shapes.clone() {
            let limit = libm::sqrt(6.0 / (s.rows + s.cols) as f64);
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            for w in &mut p.values[off..off + s.rows * s.cols] {
                *w = dist.sample(rng);
            }
            off += s.len();
        }
        p
    }

    /// Draw from a zero-mean Gaussian prior whose per-layer standard
    /// deviation is `scale * sqrt(2 / (fan_in + fan_out))`; biases share the
    /// layer variance.
    pub fn sample_prior<R: Rng + ?Sized>(spec: &NetworkSpec, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        let mut off = 0;
        for s in &p.shapes.clone() {
            let std = scale * libm::sqrt(2.0 / (s.rows + s.cols) as f64);
            let dist = Normal::new(0.0, std).expect("positive std");
            for w in &mut p.values[off..off + s.len()] {
                *w = dist.sample(rng);
            }
            off += s.len();
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        Error::check_len("parameter vector", spec.param_count(), self.values.len())?;
        let total: usize = self.shapes.iter().map(LayerShape::len).sum();
        Error::check_len("parameter shapes", total, self.values.len())?;
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("parameter vector contains non-finite entries"));
        }
        Ok(())
    }

    pub fn squared_distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Per-hidden-layer multiplicative factors: `0` for dropped units and
/// `1 / (1 - rate)` for kept ones (inverted dropout).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutMask {
    pub layers: Vec<Vec<f64>>,
}

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let keep = 1.0 - spec.dropout_rate;
        let scale = 1.0 / keep;
        let layers = (0..spec.hidden_layers)
            .map(|_| {
                (0..spec.hidden_units)
                    .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                    .collect()
            })
            .collect();
        DropoutMask { layers }
    }

    fn check(&self, spec: &NetworkSpec) -> Result<()> {
        Error::check_len("dropout mask layers", spec.hidden_layers, self.layers.len())?;
        for l in &self.layers {
            Error::check_len("dropout mask units", spec.hidden_units, l.len())?;
        }
        Ok(())
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        libm::log1p(libm::exp(z))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-z))
}

/// Reusable activation buffers for one forward/backward pass.
struct Tape {
    /// Unmasked hidden activations `tanh(z)`, one vector per hidden layer.
    hidden: Vec<Vec<f64>>,
    /// Hidden activations after the dropout mask.
    masked: Vec<Vec<f64>>,
    out_z: Vec<f64>,
    out: Vec<f64>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Tape {
    fn new(spec: &NetworkSpec) -> Self {
        let width = spec.hidden_units.max(spec.output_dim).max(spec.input_dim);
        Tape {
            hidden: vec![vec![0.0; spec.hidden_units]; spec.hidden_layers],
            masked: vec![vec![0.0; spec.hidden_units]; spec.hidden_layers],
            out_z: vec![0.0; spec.output_dim],
            out: vec![0.0; spec.output_dim],
            delta: Vec::with_capacity(width),
            delta_next: Vec::with_capacity(width),
        }
    }

    fn run(&mut self, params: &[f64], spec: &NetworkSpec, x: &[f64], mask: Option<&DropoutMask>) {
        let mut off = 0;
        for l in 0..spec.hidden_layers {
            let (fan_in, fan_out) = if l == 0 {
                (spec.input_dim, spec.hidden_units)
            } else {
                (spec.hidden_units, spec.hidden_units)
            };
            let (w, b) = params[off..off + fan_in * fan_out + fan_out].split_at(fan_in * fan_out);
            let (prev, rest) = self.masked.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &prev[l - 1] };
            let hidden = &mut self.hidden[l];
            for r in 0..fan_out {
                let row = &w[r * fan_in..(r + 1) * fan_in];
                let z = b[r] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>();
                hidden[r] = libm::tanh(z);
            }
            let out = &mut rest[0];
            match mask {
                Some(m) => {
                    for ((o, h), f) in out.iter_mut().zip(hidden.iter()).zip(&m.layers[l]) {
                        *o = h * f;
                    }
                }
                None => out.copy_from_slice(hidden),
            }
            off += fan_in * fan_out + fan_out;
        }
        let fan_in = if spec.hidden_layers == 0 {
            spec.input_dim
        } else {
            spec.hidden_units
        };
        let (w, b) = params[off..off + fan_in * spec.output_dim + spec.output_dim].split_at(fan_in * spec.output_dim);
        let input: &[f64] = if spec.hidden_layers == 0 {
            x
        } else {
            &self.masked[spec.hidden_layers - 1]
        };
        for r in 0..spec.output_dim {
            let row = &w[r * fan_in..(r + 1) * fan_in];
            let z = b[r] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>();
            self.out_z[r] = z;
            self.out[r] = match spec.output_link {
                OutputLink::Identity => z,
                OutputLink::Softplus => softplus(z) + VARIANCE_FLOOR,
            };
        }
    }

    /// Accumulates `scale * d(out)/d(params)ᵀ · d_out` into `grad`.
    fn backprop(
        &mut self,
        params: &[f64],
        spec: &NetworkSpec,
        x: &[f64],
        mask: Option<&DropoutMask>,
        d_out: &[f64],
        grad: &mut [f64],
    ) {
        let dims = spec.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for (i, o) in &dims {
            offsets.push(off);
            off += i * o + o;
        }
        self.delta.clear();
        for (r, &g) in d_out.iter().enumerate() {
            let dz = match spec.output_link {
                OutputLink::Identity => g,
                OutputLink::Softplus => g * sigmoid(self.out_z[r]),
            };
            self.delta.push(dz);
        }
        for layer in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[layer];
            let woff = offsets[layer];
            let input: &[f64] = if layer == 0 { x } else { &self.masked[layer - 1] };
            {
                let (gw, gb) = grad[woff..woff + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for r in 0..fan_out {
                    let d = self.delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    gb[r] += d;
                    for (g, a) in gw[r * fan_in..(r + 1) * fan_in].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            if layer == 0 {
                break;
            }
            let w = &params[woff..woff + fan_in * fan_out];
            self.delta_next.clear();
            self.delta_next.resize(fan_in, 0.0);
            for r in 0..fan_out {
                let d = self.delta[r];
                if d == 0.0 {
                    continue;
                }
                for (dn, wv) in self.delta_next.iter_mut().zip(&w[r * fan_in..(r + 1) * fan_in]) {
                    *dn += d * wv;
                }
            }
            let h = &self.hidden[layer - 1];
            for (c, dn) in self.delta_next.iter_mut().enumerate() {
                let m = mask.map_or(1.0, |m| m.layers[layer - 1][c]);
                *dn *= (1.0 - h[c] * h[c]) * m;
            }
            core::mem::swap(&mut self.delta, &mut self.delta_next);
        }
    }
}

/// Network output `f_θ(x)` with the output link applied. Without a mask no
/// unit is dropped.
pub fn forward(params: &ParamVector, spec: &NetworkSpec, x: &[f64], mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
    Error::check_len("network input", spec.input_dim, x.len())?;
    Error::check_len("parameter vector", spec.param_count(), params.len())?;
    if let Some(m) = mask {
        m.check(spec)?;
    }
    let mut tape = Tape::new(spec);
    tape.run(&params.values, spec, x, mask);
    Ok(tape.out)
}

/// Hidden-layer activations after masking, for inspection.
pub fn hidden_activations(
    params: &ParamVector,
    spec: &NetworkSpec,
    x: &[f64],
    mask: Option<&DropoutMask>,
) -> Result<Vec<Vec<f64>>> {
    Error::check_len("network input", spec.input_dim, x.len())?;
    if let Some(m) = mask {
        m.check(spec)?;
    }
    let mut tape = Tape::new(spec);
    tape.run(&params.values, spec, x, mask);
    Ok(tape.masked)
}

/// Jacobian of the (linked) outputs with respect to the parameters,
/// row-major `output_dim x param_count`.
pub fn jacobian(params: &ParamVector, spec: &NetworkSpec, x: &[f64]) -> Result<Vec<f64>> {
    Error::check_len("network input", spec.input_dim, x.len())?;
    Error::check_len("parameter vector", spec.param_count(), params.len())?;
    let n = params.len();
    let mut jac = vec![0.0; spec.output_dim * n];
    let mut tape = Tape::new(spec);
    let mut seed = vec![0.0; spec.output_dim];
    for k in 0..spec.output_dim {
        tape.run(&params.values, spec, x, None);
        seed.iter_mut().for_each(|s| *s = 0.0);
        seed[k] = 1.0;
        tape.backprop(&params.values, spec, x, None, &seed, &mut jac[k * n..(k + 1) * n]);
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    /// Mean squared error over all target entries.
    Mse,
    /// Gaussian negative log-likelihood with jointly learned variance. The
    /// network emits `target_dim` mean channels followed by `target_dim` raw
    /// variance channels mapped through `softplus + VARIANCE_FLOOR`.
    MllvNll,
    /// MSE plus `(lambda / dataset_len) * ||θ - anchor||²`.
    AnchoredMse {
        anchor: &'a ParamVector,
        lambda: f64,
        dataset_len: usize,
    },
}

/// Maps raw outputs to predictions through the head, returning the
/// prediction and, given `d_pred`, writing `d_out`.
fn head_predict(head: Head, out: &[f64], ctx: &[f64], pred: &mut Vec<f64>) {
    pred.clear();
    match head {
        Head::Direct => pred.extend_from_slice(out),
        Head::ControlAffine { state_dim } | Head::ControlAffineSquared { state_dim } => {
            let squared = matches!(head, Head::ControlAffineSquared { .. });
            let k = out.len() / state_dim;
            for i in 0..state_dim {
                let row = &out[i * k..(i + 1) * k];
                pred.push(
                    row.iter()
                        .zip(ctx)
                        .map(|(f, u)| if squared { f * u * u } else { f * u })
                        .sum(),
                );
            }
        }
    }
}

fn head_pullback(head: Head, out_len: usize, ctx: &[f64], d_pred: &[f64], d_out: &mut Vec<f64>) {
    d_out.clear();
    match head {
        Head::Direct => d_out.extend_from_slice(d_pred),
        Head::ControlAffine { state_dim } | Head::ControlAffineSquared { state_dim } => {
            let squared = matches!(head, Head::ControlAffineSquared { .. });
            let k = out_len / state_dim;
            for d in d_pred.iter().take(state_dim) {
                for u in &ctx[..k] {
                    d_out.push(if squared { d * u * u } else { d * u });
                }
            }
        }
    }
}

/// Applies the network head to a raw output given the context `ū`.
pub fn apply_head(spec: &NetworkSpec, out: &[f64], context: &[f64]) -> Vec<f64> {
    let mut pred = Vec::new();
    head_predict(spec.head, out, context, &mut pred);
    pred
}

fn check_loss_shapes(spec: &NetworkSpec, batch: &Dataset, loss: &Loss<'_>) -> Result<()> {
    Error::check_len("dataset input dim", spec.input_dim, batch.input_dim())?;
    match spec.head {
        Head::Direct => {}
        Head::ControlAffine { state_dim } | Head::ControlAffineSquared { state_dim } => {
            let k = spec.output_dim / state_dim;
            match &batch.context {
                Some(c) => Error::check_len("dataset context dim", k, c.cols())?,
                None => return Err(Error::invalid("control-affine head needs dataset context")),
            }
        }
    }
    match loss {
        Loss::MllvNll => {
            if spec.head != Head::Direct {
                return Err(Error::invalid("MLLV loss needs a direct head"));
            }
            Error::check_len("MLLV output dim (2 x target)", 2 * batch.target_dim(), spec.output_dim)
        }
        Loss::Mse | Loss::AnchoredMse { .. } => {
            Error::check_len("target dim", spec.target_dim(), batch.target_dim())?;
            if let Loss::AnchoredMse { anchor, .. } = loss {
                Error::check_len("anchor vector", spec.param_count(), anchor.len())?;
            }
            Ok(())
        }
    }
}

/// Per-sample loss and its derivative with respect to the prediction.
fn sample_loss(loss: &Loss<'_>, pred: &[f64], target: &[f64], d_pred: &mut Vec<f64>, norm: f64) -> f64 {
    d_pred.clear();
    match loss {
        Loss::Mse | Loss::AnchoredMse { .. } => {
            let mut l = 0.0;
            for (p, y) in pred.iter().zip(target) {
                let r = p - y;
                l += r * r;
                d_pred.push(2.0 * r * norm);
            }
            l
        }
        Loss::MllvNll => {
            let d = target.len();
            d_pred.resize(2 * d, 0.0);
            let mut l = 0.0;
            for k in 0..d {
                let mu = pred[k];
                let z = pred[d + k];
                let var = softplus(z) + VARIANCE_FLOOR;
                let r = target[k] - mu;
                l += 0.5 * libm::log(var) + r * r / (2.0 * var);
                d_pred[k] = -r / var * norm;
                let dvar = 0.5 / var - r * r / (2.0 * var * var);
                d_pred[d + k] = dvar * sigmoid(z) * norm;
            }
            l
        }
    }
}

/// Mean per-entry loss over `rows` of `data`, with its gradient added into
/// `grad` (which is zeroed first).
fn batch_gradient(
    params: &ParamVector,
    spec: &NetworkSpec,
    data: &Dataset,
    rows: &[usize],
    loss: &Loss<'_>,
    masks: Option<&[DropoutMask]>,
    tape: &mut Tape,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let entries = (rows.len() * data.target_dim()).max(1) as f64;
    let norm = 1.0 / entries;
    let mut total = 0.0;
    let mut pred = Vec::with_capacity(spec.output_dim);
    let mut d_pred = Vec::with_capacity(spec.output_dim);
    let mut d_out = Vec::with_capacity(spec.output_dim);
    for (j, &i) in rows.iter().enumerate() {
        let x = data.inputs.row(i);
        let y = data.targets.row(i);
        let ctx = data.context_row(i);
        let mask = masks.map(|m| &m[j]);
        tape.run(&params.values, spec, x, mask);
        head_predict(spec.head, &tape.out, ctx, &mut pred);
        total += sample_loss(loss, &pred, y, &mut d_pred, norm);
        head_pullback(spec.head, spec.output_dim, ctx, &d_pred, &mut d_out);
        tape.backprop(&params.values, spec, x, mask, &d_out, grad);
    }
    let mut value = total * norm;
    if let Loss::AnchoredMse {
        anchor,
        lambda,
        dataset_len,
    } = loss
    {
        let c = lambda / (*dataset_len).max(1) as f64;
        for ((g, w), a) in grad.iter_mut().zip(&params.values).zip(&anchor.values) {
            *g += 2.0 * c * (w - a);
        }
        value += c * params.squared_distance(anchor);
    }
    value
}

/// Loss value and exact gradient over the whole `batch` (no dropout).
pub fn backward(params: &ParamVector, spec: &NetworkSpec, batch: &Dataset, loss: Loss<'_>) -> Result<(ParamVector, f64)> {
    params.check(spec)?;
    check_loss_shapes(spec, batch, &loss)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let rows: Vec<usize> = (0..batch.len()).collect();
    let mut tape = Tape::new(spec);
    let mut grad = ParamVector {
        values: vec![0.0; params.len()],
        shapes: params.shapes.clone(),
    };
    let value = batch_gradient(params, spec, batch, &rows, &loss, None, &mut tape, &mut grad.values);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { batch: 0 });
    }
    Ok((grad, value))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    /// Plain mini-batch gradient descent.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam()
    }
}

/// L2 pull towards an anchor draw from the weight prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrior {
    pub lambda: f64,
    pub anchor: ParamVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub l2_anchor: Option<AnchorPrior>,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl TrainConfig {
    pub fn new(epochs: usize, learning_rate: f64, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            learning_rate,
            batch_size,
            seed,
            l2_anchor: None,
            optimizer: Optimizer::default(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig { seed, ..self.clone() }
    }

    pub fn with_optimizer(mut self, optimizer: Optimizer) -> Self {
        self.optimizer = optimizer;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if let Some(a) = &self.l2_anchor {
            if !(a.lambda >= 0.0) {
                return Err(Error::invalid("anchor lambda must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub params: ParamVector,
    /// Mean mini-batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Base loss used when training against `config`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Mse,
    MllvNll,
}

/// Seeds a generator for `(seed, stream)`; used for per-epoch and
/// per-member streams.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains a freshly Glorot-initialised network on the MSE objective.
pub fn train(dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig) -> Result<Trained> {
    let init = ParamVector::glorot(spec, &mut stream_rng(config.seed, u64::MAX));
    train_from(init, dataset, spec, config, Objective::Mse)
}

/// Mini-batch training from `init`. Batches are reshuffled every epoch with
/// a generator derived from `(config.seed, epoch)`; dropout masks, when
/// `spec.dropout_rate > 0`, come from the same stream.
pub fn train_from(
    init: ParamVector,
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
    objective: Objective,
) -> Result<Trained> {
    spec.validate()?;
    config.validate()?;
    init.check(spec)?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let loss = match (&config.l2_anchor, objective) {
        (None, Objective::Mse) => Loss::Mse,
        (None, Objective::MllvNll) => Loss::MllvNll,
        (Some(a), Objective::Mse) => Loss::AnchoredMse {
            anchor: &a.anchor,
            lambda: a.lambda,
            dataset_len: dataset.len(),
        },
        (Some(_), Objective::MllvNll) => {
            return Err(Error::invalid("anchored MLLV training is not supported"));
        }
    };
    check_loss_shapes(spec, dataset, &loss)?;

    let mut params = init;
    let n = dataset.len();
    let batch = config.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; params.len()];
    let mut tape = Tape::new(spec);
    let mut m1 = vec![0.0; params.len()];
    let mut m2 = vec![0.0; params.len()];
    let mut step: i32 = 0;
    let mut trace = Vec::with_capacity(config.epochs);
    let mut masks: Vec<DropoutMask> = Vec::new();
    for epoch in 0..config.epochs {
        let mut rng = stream_rng(config.seed, epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for rows in order.chunks(batch) {
            let mask_ref = if spec.dropout_rate > 0.0 {
                masks.clear();
                masks.extend(rows.iter().map(|_| DropoutMask::sample(spec, &mut rng)));
                Some(masks.as_slice())
            } else {
                None
            };
            let value = batch_gradient(&params, spec, dataset, rows, &loss, mask_ref, &mut tape, &mut grad);
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            step += 1;
            match config.optimizer {
                Optimizer::Sgd => {
                    for (w, g) in params.values.iter_mut().zip(&grad) {
                        *w -= config.learning_rate * g;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - libm::pow(beta1, step as f64);
                    let c2 = 1.0 - libm::pow(beta2, step as f64);
                    for i in 0..grad.len() {
                        m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
                        m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i] * grad[i];
                        let mh = m1[i] / c1;
                        let vh = m2[i] / c2;
                        params.values[i] -= config.learning_rate * mh / (libm::sqrt(vh) + eps);
                    }
                }
            }
            epoch_loss += value;
            batches += 1;
        }
        let mean = epoch_loss / batches.max(1) as f64;
        if !mean.is_finite() || params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        trace.push(mean);
    }
    Ok(Trained {
        params,
        loss_trace: trace,
    })
}
