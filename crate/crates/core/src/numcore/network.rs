//! Dense feed-forward networks with optional batch normalization.
//!
//! Each layer computes `linear -> batch norm (optional) -> activation`.
//! Batches are row-major: one sample per row.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::activation::{softmax_in_place, Activation};
use crate::{Error, Result};

pub const BATCH_NORM_EPSILON: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = NetworkSpec { layers };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a chain `sizes[0] -> sizes[1] -> ...`, using `hidden` on every
    /// layer except the last, which gets `output`.
    pub fn chain(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        batch_norm_hidden: bool,
        batch_norm_output: bool,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("a network needs at least one layer"));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                input_dim: w[0],
                output_dim: w[1],
                activation: if i == last { output } else { hidden },
                batch_norm: if i == last {
                    batch_norm_output
                } else {
                    batch_norm_hidden
                },
            })
            .collect();
        Self::new(layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.input_dim == 0 || layer.output_dim == 0 {
                return Err(Error::config(format!("layer {i} has a zero dimension")));
            }
            if i + 1 < self.layers.len() {
                if layer.activation == Activation::Softmax {
                    return Err(Error::config(
                        "softmax is only allowed as the final activation",
                    ));
                }
                if layer.output_dim != self.layers[i + 1].input_dim {
                    return Err(Error::config(format!(
                        "layer {i} outputs {} values but layer {} expects {}",
                        layer.output_dim,
                        i + 1,
                        self.layers[i + 1].input_dim
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }
}

/// Weights are stored `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (input_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let weights = Array2::from_shape_simple_fn((output_dim, input_dim), || dist.sample(rng));
        DenseLayer {
            weights,
            bias: Array1::zeros(output_dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
}

impl BatchNormState {
    pub fn new(dim: usize) -> Self {
        BatchNormState {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            momentum: BATCH_NORM_MOMENTUM,
        }
    }

    fn update_running(&mut self, mean: &Array1<f64>, var: &Array1<f64>, batch_size: usize) {
        let m = self.momentum;
        let unbias = if batch_size > 1 {
            batch_size as f64 / (batch_size - 1) as f64
        } else {
            1.0
        };
        Zip::from(&mut self.running_mean)
            .and(mean)
            .for_each(|r, &b| *r = m * *r + (1.0 - m) * b);
        Zip::from(&mut self.running_var)
            .and(var)
            .for_each(|r, &b| *r = m * *r + (1.0 - m) * b * unbias);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
struct NormTrace {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    input: Array2<f64>,
    norm: Option<NormTrace>,
    output: Array2<f64>,
}

impl LayerTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Everything [`Network::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: Mode,
    layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.layers[self.layers.len() - 1].output
    }

    pub fn layers(&self) -> &[LayerTrace] {
        &self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.layers[0].input.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormGradient {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Parameter gradients, laid out like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
    pub norms: Vec<Option<NormGradient>>,
}

impl Gradients {
    /// Slices in the same order as [`Network::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for (layer, norm) in self.layers.iter().zip(&self.norms) {
            out.push(layer.weights.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
            if let Some(n) = norm {
                out.push(n.gamma.as_slice().expect("standard layout"));
                out.push(n.beta.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().into_iter().flatten().copied().collect()
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&g| g == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: NetworkSpec,
    dense: Vec<DenseLayer>,
    norms: Vec<Option<BatchNormState>>,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let dense = spec
            .layers
            .iter()
            .map(|l| DenseLayer::init(l.input_dim, l.output_dim, rng))
            .collect();
        let norms = spec
            .layers
            .iter()
            .map(|l| l.batch_norm.then(|| BatchNormState::new(l.output_dim)))
            .collect();
        Ok(Network { spec, dense, norms })
    }

    /// Assembles a network from explicit parameters.
    pub fn from_parts(
        spec: NetworkSpec,
        dense: Vec<DenseLayer>,
        norms: Vec<Option<BatchNormState>>,
    ) -> Result<Self> {
        let net = Network { spec, dense, norms };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.dense.len() != self.spec.layers.len() || self.norms.len() != self.dense.len() {
            return Err(Error::config("parameter count does not match network spec"));
        }
        for (i, ((l, d), n)) in self
            .spec
            .layers
            .iter()
            .zip(&self.dense)
            .zip(&self.norms)
            .enumerate()
        {
            if d.weights.dim() != (l.output_dim, l.input_dim) || d.bias.len() != l.output_dim {
                return Err(Error::config(format!("layer {i} parameter shape mismatch")));
            }
            match (l.batch_norm, n) {
                (true, Some(bn)) => {
                    let dim = l.output_dim;
                    if bn.gamma.len() != dim
                        || bn.beta.len() != dim
                        || bn.running_mean.len() != dim
                        || bn.running_var.len() != dim
                    {
                        return Err(Error::config(format!("layer {i} batch norm shape mismatch")));
                    }
                    if bn.running_var.iter().any(|&v| v < 0.0) {
                        return Err(Error::config(format!(
                            "layer {i} has a negative running variance"
                        )));
                    }
                }
                (false, None) => {}
                _ => {
                    return Err(Error::config(format!(
                        "layer {i} batch norm presence does not match spec"
                    )))
                }
            }
            let finite = d.weights.iter().chain(d.bias.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::config(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn dense(&self) -> &[DenseLayer] {
        &self.dense
    }

    pub fn dense_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.dense
    }

    pub fn norms(&self) -> &[Option<BatchNormState>] {
        &self.norms
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Runs the network and records every intermediate needed for backprop.
    ///
    /// In [`Mode::Train`] batch norm uses batch statistics (the running
    /// statistics are left untouched; see [`Network::commit_batch_stats`]).
    /// In [`Mode::Infer`] it uses the running statistics.
    pub fn forward(&self, batch: &Array2<f64>, mode: Mode) -> Result<ForwardTrace> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::config(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let mut layers = Vec::with_capacity(self.dense.len());
        let mut input = batch.to_owned();
        for ((spec, dense), norm) in self.spec.layers.iter().zip(&self.dense).zip(&self.norms) {
            let mut pre = input.dot(&dense.weights.t()) + &dense.bias;
            let norm_trace = norm.as_ref().map(|bn| batch_norm_forward(&mut pre, bn, mode));
            apply_activation(spec.activation, &mut pre);
            let output = pre;
            layers.push(LayerTrace {
                input,
                norm: norm_trace,
                output: output.clone(),
            });
            input = output;
        }
        Ok(ForwardTrace { mode, layers })
    }

    /// Inference-mode output only.
    pub fn predict(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        let trace = self.forward(batch, Mode::Infer)?;
        Ok(trace.layers.into_iter().next_back().expect("non-empty").output)
    }

    /// Folds the batch statistics of a train-mode trace into the running statistics.
    pub fn commit_batch_stats(&mut self, trace: &ForwardTrace) {
        if trace.mode != Mode::Train {
            return;
        }
        let n = trace.batch_size();
        for (norm, layer) in self.norms.iter_mut().zip(&trace.layers) {
            if let (Some(bn), Some(t)) = (norm.as_mut(), layer.norm.as_ref()) {
                bn.update_running(&t.batch_mean, &t.batch_var, n);
            }
        }
    }

    /// Train-mode forward that also updates the running statistics.
    pub fn forward_train(&mut self, batch: &Array2<f64>) -> Result<ForwardTrace> {
        let trace = self.forward(batch, Mode::Train)?;
        self.commit_batch_stats(&trace);
        Ok(trace)
    }

    /// Backpropagates `output_grad` (gradient of the loss with respect to the
    /// network output). Returns parameter gradients and the gradient with
    /// respect to the network input.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        output_grad: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        self.check_trace(trace, output_grad)?;
        let last = trace.layers.len() - 1;
        let grad = activation_backward(
            self.spec.layers[last].activation,
            &trace.layers[last].output,
            output_grad,
        );
        Ok(self.backward_from(trace, grad))
    }

    /// Like [`Network::backward`] but `pre_activation_grad` is already taken
    /// with respect to the input of the final activation (e.g. the logit of a
    /// sigmoid head trained with cross-entropy).
    pub fn backward_from_pre_activation(
        &self,
        trace: &ForwardTrace,
        pre_activation_grad: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        self.check_trace(trace, pre_activation_grad)?;
        Ok(self.backward_from(trace, pre_activation_grad.to_owned()))
    }

    fn check_trace(&self, trace: &ForwardTrace, grad: &Array2<f64>) -> Result<()> {
        if trace.layers.len() != self.dense.len() {
            return Err(Error::config("trace does not belong to this network"));
        }
        for (i, (t, d)) in trace.layers.iter().zip(&self.dense).enumerate() {
            if t.input.ncols() != d.weights.ncols() || t.output.ncols() != d.weights.nrows() {
                return Err(Error::config(format!("stale trace at layer {i}")));
            }
            if t.norm.is_some() != self.norms[i].is_some() {
                return Err(Error::config(format!("stale trace at layer {i}")));
            }
        }
        if grad.dim() != trace.output().dim() {
            return Err(Error::config(format!(
                "gradient shape {:?} does not match output shape {:?}",
                grad.dim(),
                trace.output().dim()
            )));
        }
        Ok(())
    }

    fn backward_from(&self, trace: &ForwardTrace, mut grad: Array2<f64>) -> (Gradients, Array2<f64>) {
        let n_layers = self.dense.len();
        let mut layer_grads = Vec::with_capacity(n_layers);
        let mut norm_grads = Vec::with_capacity(n_layers);
        for i in (0..n_layers).rev() {
            let layer = &trace.layers[i];
            if i + 1 < n_layers {
                grad = activation_backward(self.spec.layers[i].activation, &layer.output, &grad);
            }
            let norm_grad = match (&self.norms[i], &layer.norm) {
                (Some(bn), Some(nt)) => {
                    let (dz, ng) = batch_norm_backward(&grad, bn, nt, trace.mode);
                    grad = dz;
                    Some(ng)
                }
                _ => None,
            };
            let weights = grad.t().dot(&layer.input).as_standard_layout().into_owned();
            let bias = grad.sum_axis(Axis(0));
            let input_grad = grad.dot(&self.dense[i].weights);
            layer_grads.push(LayerGradient { weights, bias });
            norm_grads.push(norm_grad);
            grad = input_grad;
        }
        layer_grads.reverse();
        norm_grads.reverse();
        (
            Gradients {
                layers: layer_grads,
                norms: norm_grads,
            },
            grad,
        )
    }

    /// Trainable parameters: per layer weights, bias, then gamma and beta
    /// when batch norm is on. Running statistics are not included.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.dense.len() * 4);
        for (dense, norm) in self.dense.iter_mut().zip(self.norms.iter_mut()) {
            out.push(dense.weights.as_slice_mut().expect("standard layout"));
            out.push(dense.bias.as_slice_mut().expect("standard layout"));
            if let Some(bn) = norm {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.dense
            .iter()
            .zip(&self.norms)
            .map(|(d, n)| {
                d.weights.len() + d.bias.len() + n.as_ref().map_or(0, |b| 2 * b.gamma.len())
            })
            .sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut clone = self.clone();
        clone.params_mut().into_iter().flat_map(|s| s.to_vec()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for slice in self.params_mut() {
            let len = slice.len();
            slice.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }
}

fn batch_norm_forward(pre: &mut Array2<f64>, bn: &BatchNormState, mode: Mode) -> NormTrace {
    let n = pre.nrows() as f64;
    let (mean, var) = match mode {
        Mode::Train => {
            let mean = pre.sum_axis(Axis(0)) / n;
            let mut var = Array1::zeros(pre.ncols());
            for row in pre.rows() {
                Zip::from(&mut var)
                    .and(&row)
                    .and(&mean)
                    .for_each(|v, &x, &m| *v += (x - m) * (x - m));
            }
            var /= n;
            (mean, var)
        }
        Mode::Infer => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + BATCH_NORM_EPSILON).sqrt());
    let normalized = (&*pre - &mean) * &inv_std;
    *pre = &normalized * &bn.gamma + &bn.beta;
    NormTrace {
        normalized,
        inv_std,
        batch_mean: mean,
        batch_var: var,
    }
}

fn batch_norm_backward(
    grad: &Array2<f64>,
    bn: &BatchNormState,
    trace: &NormTrace,
    mode: Mode,
) -> (Array2<f64>, NormGradient) {
    let gamma_grad = (grad * &trace.normalized).sum_axis(Axis(0));
    let beta_grad = grad.sum_axis(Axis(0));
    let dxhat = grad * &bn.gamma;
    let dz = match mode {
        Mode::Infer => &dxhat * &trace.inv_std,
        Mode::Train => {
            let n = grad.nrows() as f64;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &trace.normalized).sum_axis(Axis(0));
            let centered = &dxhat * n - &sum_dxhat - &trace.normalized * &sum_dxhat_xhat;
            centered * &(&trace.inv_std / n)
        }
    };
    (
        dz,
        NormGradient {
            gamma: gamma_grad,
            beta: beta_grad,
        },
    )
}

fn apply_activation(activation: Activation, values: &mut Array2<f64>) {
    match activation {
        Activation::Identity => {}
        Activation::Relu => values.mapv_inplace(|v| v.max(0.0)),
        Activation::Sigmoid => values.mapv_inplace(super::activation::sigmoid),
        Activation::Softmax => {
            if !values.is_standard_layout() {
                *values = values.as_standard_layout().into_owned();
            }
            for mut row in values.rows_mut() {
                softmax_in_place(row.as_slice_mut().expect("standard layout"));
            }
        }
    }
}

fn activation_backward(activation: Activation, output: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
    match activation {
        Activation::Identity => grad.to_owned(),
        Activation::Relu => {
            let mut g = grad.to_owned();
            Zip::from(&mut g)
                .and(output)
                .for_each(|g, &o| if o <= 0.0 { *g = 0.0 });
            g
        }
        Activation::Sigmoid => {
            let mut g = grad.to_owned();
            Zip::from(&mut g)
                .and(output)
                .for_each(|g, &s| *g *= s * (1.0 - s));
            g
        }
        Activation::Softmax => {
            let mut g = grad.to_owned();
            for (mut g_row, s_row) in g.rows_mut().into_iter().zip(output.rows()) {
                let dot: f64 = g_row.iter().zip(s_row.iter()).map(|(a, b)| a * b).sum();
                Zip::from(&mut g_row)
                    .and(&s_row)
                    .for_each(|g, &s| *g = s * (*g - dot));
            }
            g
        }
    }
}
