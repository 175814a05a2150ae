//! Dense multilayer perceptron with manual backpropagation.
//!
//! Weights are stored as `(out_dim, in_dim)` matrices and batches as
//! `(batch, features)` matrices, so a layer computes `z = a Wᵀ + b`.
//!
//! An optional [`MaskSelection`] scales every weight matrix elementwise by the
//! outer product `r cᵀ` of a row and a column multiplier vector. Biases are
//! scaled by `r` alone. Because `(a ⊙ c) Wᵀ ⊙ r + b ⊙ r = r ⊙ ((a ⊙ c) Wᵀ + b)`,
//! the masked weight matrix is never materialized.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StepLocation};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

impl HiddenActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Relu => z.max(0.0),
            HiddenActivation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            HiddenActivation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Head applied to the last layer's pre-activation.
///
/// `SoftmaxLogits` returns raw logits; softmax is applied by consumers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    ScaledTanh(f64),
    SoftmaxLogits,
}

impl OutputActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::ScaledTanh(scale) => scale * z.tanh(),
            OutputActivation::Identity | OutputActivation::SoftmaxLogits => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            OutputActivation::ScaledTanh(scale) => {
                let t = z.tanh();
                scale * (1.0 - t * t)
            }
            OutputActivation::Identity | OutputActivation::SoftmaxLogits => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    /// Base widths before the multiplier is applied, e.g. `[64, 32]`.
    pub hidden_dims: Vec<usize>,
    pub width_multiplier: f64,
    pub output_dim: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub dropout_p: f64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("input and output dims must be > 0".into()));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::Config(format!(
                "width multiplier must be positive, got {}",
                self.width_multiplier
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if let OutputActivation::ScaledTanh(scale) = self.output_activation {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::Config(format!("tanh scale must be positive, got {scale}")));
            }
        }
        for (i, (&base, width)) in self.hidden_dims.iter().zip(self.hidden_widths()).enumerate() {
            if base == 0 || width == 0 {
                return Err(Error::Config(format!(
                    "hidden layer {i} has zero effective width (base {base})"
                )));
            }
        }
        Ok(())
    }

    /// Effective hidden widths, `round(base × multiplier)`.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden_dims
            .iter()
            .map(|&base| (base as f64 * self.width_multiplier).round() as usize)
            .collect()
    }

    /// `(in_dim, out_dim)` for every linear layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.hidden_widths());
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    MeanSquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: Loss,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be > 0".into()));
        }
        Ok(())
    }
}

/// Supervision for a batch: class indices for cross-entropy, real rows for MSE.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Array2<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(v.select(Axis(0), indices)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// Shape `(out_dim, in_dim)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Row and column multipliers for one linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMask {
    /// Length = layer output dim.
    pub rows: Array1<f64>,
    /// Length = layer input dim.
    pub cols: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSelection {
    pub layers: Vec<LayerMask>,
}

impl MaskSelection {
    pub fn ones(model: &Mlp) -> Self {
        MaskSelection {
            layers: model
                .layers
                .iter()
                .map(|l| LayerMask {
                    rows: Array1::ones(l.weights.nrows()),
                    cols: Array1::ones(l.weights.ncols()),
                })
                .collect(),
        }
    }
}

pub enum Mode<'a> {
    Eval,
    /// Inverted dropout drawn from the given generator.
    Train(&'a mut dyn RngCore),
}

/// Gradients of a scalar loss. Mask gradients are empty when no mask was used.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub mask_rows: Vec<Array1<f64>>,
    pub mask_cols: Vec<Array1<f64>>,
}

struct LayerCache {
    /// Layer input before the column multipliers.
    input: Array2<f64>,
    /// Input after the column multipliers (equal to `input` when unmasked).
    masked_input: Option<Array2<f64>>,
    /// `(a ⊙ c) Wᵀ + b`, before row multipliers.
    linear: Array2<f64>,
    /// Pre-activation after row multipliers.
    pre: Array2<f64>,
    /// Per-element dropout scale (0 or 1/(1-p)) applied after the activation.
    dropout: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Dense>,
    seed: u64,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, fully determined by `seed`.
    pub fn init(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed);
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..limit));
                Dense {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Mlp { config, layers, seed })
    }

    /// Rebuilds a model from explicit parameters, checking every shape.
    pub fn from_parts(config: MlpConfig, layers: Vec<Dense>, seed: u64) -> Result<Self> {
        let model = Mlp { config, layers, seed };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let shapes = self.config.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "config implies {} layers, model has {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (i, ((fan_in, fan_out), layer)) in shapes.iter().zip(&self.layers).enumerate() {
            if layer.weights.dim() != (*fan_out, *fan_in) || layer.bias.len() != *fan_out {
                return Err(Error::Shape(format!(
                    "layer {i}: expected weights {fan_out}x{fan_in}, got {:?} with bias {}",
                    layer.weights.dim(),
                    layer.bias.len()
                )));
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(
        &self,
        inputs: ArrayView2<'_, f64>,
        mode: Mode<'_>,
        mask: Option<&MaskSelection>,
    ) -> Result<Array2<f64>> {
        let (out, _) = self.forward_impl(inputs, mode, mask, false)?;
        Ok(out)
    }

    /// Mean batch loss and its gradients with respect to parameters and, when
    /// `mask` is given, the mask multipliers.
    pub fn loss_and_gradients(
        &self,
        inputs: ArrayView2<'_, f64>,
        targets: &Targets,
        loss: Loss,
        mode: Mode<'_>,
        mask: Option<&MaskSelection>,
    ) -> Result<(f64, Gradients)> {
        if inputs.nrows() == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        if targets.len() != inputs.nrows() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        let (outputs, caches) = self.forward_impl(inputs, mode, mask, true)?;
        let (value, d_out) = loss_gradient(&outputs, targets, loss)?;
        let grads = self.backward(caches, d_out, mask);
        Ok((value, grads))
    }

    pub fn loss(&self, inputs: ArrayView2<'_, f64>, targets: &Targets, loss: Loss) -> Result<f64> {
        let outputs = self.forward(inputs, Mode::Eval, None)?;
        Ok(loss_gradient(&outputs, targets, loss)?.0)
    }

    /// One plain SGD step on the mean batch loss. Returns the pre-update loss.
    pub fn grad_step(
        &mut self,
        inputs: ArrayView2<'_, f64>,
        targets: &Targets,
        train: &TrainConfig,
        dropout_rng: &mut dyn RngCore,
    ) -> Result<f64> {
        self.step_at(inputs, targets, train, dropout_rng, StepLocation::default())
    }

    fn step_at(
        &mut self,
        inputs: ArrayView2<'_, f64>,
        targets: &Targets,
        train: &TrainConfig,
        dropout_rng: &mut dyn RngCore,
        at: StepLocation,
    ) -> Result<f64> {
        train.validate()?;
        let (value, grads) = self.loss_and_gradients(inputs, targets, train.loss, Mode::Train(dropout_rng), None)?;
        if !value.is_finite() {
            return Err(Error::Divergence(at));
        }
        let lr = train.learning_rate;
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            layer.weights.scaled_add(-lr, gw);
            layer.bias.scaled_add(-lr, gb);
        }
        Ok(value)
    }

    /// Minibatch SGD for `epochs` passes. Returns the mean pre-update batch
    /// loss of every epoch.
    pub fn train(&mut self, inputs: ArrayView2<'_, f64>, targets: &Targets, train: &TrainConfig) -> Result<Vec<f64>> {
        train.validate()?;
        let n = inputs.nrows();
        if n == 0 {
            return Err(Error::Input("training set is empty".into()));
        }
        if targets.len() != n {
            return Err(Error::Shape(format!("{n} inputs but {} targets", targets.len())));
        }
        let mut history = Vec::with_capacity(train.epochs);
        let mut order: Vec<usize> = (0..n).collect();
        let shuffle_seed = seed::split(train.seed, seed::stream::SHUFFLE);
        let dropout_seed = seed::split(train.seed, seed::stream::DROPOUT);
        for epoch in 0..train.epochs {
            order.sort_unstable();
            order.shuffle(&mut seed::rng(seed::split(shuffle_seed, epoch as u64)));
            let mut dropout_rng = seed::rng(seed::split(dropout_seed, epoch as u64));
            let mut total = 0.0;
            let mut batches = 0;
            for (batch, idx) in order.chunks(train.batch_size).enumerate() {
                let xb = inputs.select(Axis(0), idx);
                let tb = targets.select(idx);
                let at = StepLocation {
                    epoch: Some(epoch),
                    batch: Some(batch),
                };
                total += self.step_at(xb.view(), &tb, train, &mut dropout_rng, at)?;
                batches += 1;
            }
            history.push(total / batches as f64);
        }
        Ok(history)
    }

    fn check_mask(&self, mask: &MaskSelection) -> Result<()> {
        if mask.layers.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "mask has {} layers, model has {}",
                mask.layers.len(),
                self.layers.len()
            )));
        }
        for (i, (m, l)) in mask.layers.iter().zip(&self.layers).enumerate() {
            if m.rows.len() != l.weights.nrows() || m.cols.len() != l.weights.ncols() {
                return Err(Error::Shape(format!(
                    "mask layer {i}: rows {} cols {} vs weights {:?}",
                    m.rows.len(),
                    m.cols.len(),
                    l.weights.dim()
                )));
            }
        }
        Ok(())
    }

    fn forward_impl(
        &self,
        inputs: ArrayView2<'_, f64>,
        mut mode: Mode<'_>,
        mask: Option<&MaskSelection>,
        keep: bool,
    ) -> Result<(Array2<f64>, Vec<LayerCache>)> {
        if inputs.ncols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "expected input dim {}, got {}",
                self.config.input_dim,
                inputs.ncols()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite input value".into()));
        }
        if let Some(m) = mask {
            self.check_mask(m)?;
        }
        let last = self.layers.len() - 1;
        let p = self.config.dropout_p;
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut act = inputs.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let lm = mask.map(|m| &m.layers[i]);
            let masked_input = lm.map(|lm| &act * &lm.cols);
            let src = masked_input.as_ref().unwrap_or(&act);
            let mut linear = src.dot(&layer.weights.t());
            linear += &layer.bias;
            let pre = match lm {
                Some(lm) => &linear * &lm.rows,
                None => linear.clone(),
            };
            let (out, dropout) = if i == last {
                let head = self.config.output_activation;
                (pre.mapv(|z| head.apply(z)), None)
            } else {
                let hidden = self.config.hidden_activation;
                let mut h = pre.mapv(|z| hidden.apply(z));
                let dropout = match &mut mode {
                    Mode::Train(rng) if p > 0.0 => {
                        let keep_scale = 1.0 / (1.0 - p);
                        let d = Array2::from_shape_simple_fn(h.raw_dim(), || {
                            if rng.random::<f64>() < p {
                                0.0
                            } else {
                                keep_scale
                            }
                        });
                        h *= &d;
                        Some(d)
                    }
                    _ => None,
                };
                (h, dropout)
            };
            if keep {
                caches.push(LayerCache {
                    input: std::mem::replace(&mut act, out),
                    masked_input,
                    linear,
                    pre,
                    dropout,
                });
            } else {
                act = out;
            }
        }
        Ok((act, caches))
    }

    fn backward(&self, caches: Vec<LayerCache>, d_out: Array2<f64>, mask: Option<&MaskSelection>) -> Gradients {
        let n_layers = self.layers.len();
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        let mut mask_rows = Vec::new();
        let mut mask_cols = Vec::new();

        let head = self.config.output_activation;
        let hidden = self.config.hidden_activation;
        let last = &caches[n_layers - 1];
        let mut dz = d_out;
        Zip::from(&mut dz)
            .and(&last.pre)
            .for_each(|g, &z| *g *= head.derivative(z));

        for (i, cache) in caches.iter().enumerate().rev() {
            let layer = &self.layers[i];
            let lm = mask.map(|m| &m.layers[i]);
            let du = match lm {
                Some(lm) => {
                    mask_rows.push((&dz * &cache.linear).sum_axis(Axis(0)));
                    &dz * &lm.rows
                }
                None => dz,
            };
            let src = cache.masked_input.as_ref().unwrap_or(&cache.input);
            weights.push(du.t().dot(src));
            biases.push(du.sum_axis(Axis(0)));
            if i == 0 && lm.is_none() {
                break;
            }
            let d_masked = du.dot(&layer.weights);
            let d_in = match lm {
                Some(lm) => {
                    mask_cols.push((&d_masked * &cache.input).sum_axis(Axis(0)));
                    &d_masked * &lm.cols
                }
                None => d_masked,
            };
            if i == 0 {
                break;
            }
            let prev = &caches[i - 1];
            let mut d_hidden = d_in;
            if let Some(d) = &prev.dropout {
                d_hidden *= d;
            }
            Zip::from(&mut d_hidden)
                .and(&prev.pre)
                .for_each(|g, &z| *g *= hidden.derivative(z));
            dz = d_hidden;
        }
        weights.reverse();
        biases.reverse();
        mask_rows.reverse();
        mask_cols.reverse();
        Gradients {
            weights,
            biases,
            mask_rows,
            mask_cols,
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean batch loss and its gradient with respect to the network outputs.
fn loss_gradient(outputs: &Array2<f64>, targets: &Targets, loss: Loss) -> Result<(f64, Array2<f64>)> {
    let n = outputs.nrows() as f64;
    match (loss, targets) {
        (Loss::CrossEntropy, Targets::Classes(labels)) => {
            let classes = outputs.ncols();
            if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
            }
            let mut grad = softmax_rows(outputs);
            let mut total = 0.0;
            for ((row, mut g), &label) in outputs.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
                total += log_sum_exp(row.iter().copied()) - row[label];
                g[label] -= 1.0;
            }
            grad /= n;
            Ok((total / n, grad))
        }
        (Loss::MeanSquaredError, Targets::Values(values)) => {
            if values.dim() != outputs.dim() {
                return Err(Error::Shape(format!(
                    "targets {:?} vs outputs {:?}",
                    values.dim(),
                    outputs.dim()
                )));
            }
            let count = outputs.len() as f64;
            let diff = outputs - values;
            let value = diff.iter().map(|d| d * d).sum::<f64>() / count;
            Ok((value, diff * (2.0 / count)))
        }
        (Loss::CrossEntropy, Targets::Values(_)) => Err(Error::Input("cross-entropy needs class-index targets".into())),
        (Loss::MeanSquaredError, Targets::Classes(_)) => {
            Err(Error::Input("mean squared error needs real-valued targets".into()))
        }
    }
}
