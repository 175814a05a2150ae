//! Implicit ensemble extraction from a single trained model: relaxed
//! row/column weight masks trained for low loss and high mask diversity, and
//! pooled sub-models built from per-tile logits.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::stack_member_logits;
use crate::error::{Error, Result};
use crate::nn::{LayerMask, Loss, MaskSelection, Mlp, Mode, Targets};
use crate::seed;
use crate::uncertainty::EnsemblePrediction;

pub const LOGIT_CLAMP: f64 = 30.0;
pub const INIT_LOGIT: f64 = 2.0;
pub const INIT_NOISE: f64 = 0.1;

fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary entropy of `sigmoid(l)` computed from the logit.
fn binary_entropy_logit(l: f64) -> f64 {
    let p = sigmoid(l);
    // ln p = -softplus(-l), ln q = -softplus(l)
    p * softplus(-l) + (1.0 - p) * softplus(l)
}

fn binary_entropy(p: f64, q: f64) -> f64 {
    let term = |v: f64| if v > 0.0 { -v * v.ln() } else { 0.0 };
    term(p) + term(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    Soft,
    /// Inclusion probabilities thresholded at 0.5.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskOptimizer {
    Sgd,
    #[default]
    Adam,
}

/// Row/column mask logits for every member and linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    /// `logits[k][layer]`; rows have the layer's output dim, cols its input dim.
    pub logits: Vec<Vec<LayerMask>>,
}

impl MaskSet {
    pub fn member_count(&self) -> usize {
        self.logits.len()
    }

    pub fn position_count(&self) -> usize {
        self.logits
            .first()
            .map_or(0, |m| m.iter().map(|l| l.rows.len() + l.cols.len()).sum())
    }

    /// Every logit set to `value`, for all `k` members.
    pub fn constant(model: &Mlp, k: usize, value: f64) -> MaskSet {
        let ones = MaskSelection::ones(model);
        let member: Vec<LayerMask> = ones
            .layers
            .iter()
            .map(|l| LayerMask {
                rows: Array1::from_elem(l.rows.len(), value),
                cols: Array1::from_elem(l.cols.len(), value),
            })
            .collect();
        MaskSet {
            logits: vec![member; k],
        }
    }

    pub fn validate(&self, model: &Mlp) -> Result<()> {
        if self.logits.is_empty() {
            return Err(Error::Shape("mask set has no members".into()));
        }
        for (k, member) in self.logits.iter().enumerate() {
            if member.len() != model.layers().len() {
                return Err(Error::Shape(format!(
                    "member {k} has {} layer masks, model has {} layers",
                    member.len(),
                    model.layers().len()
                )));
            }
            for (i, (m, layer)) in member.iter().zip(model.layers()).enumerate() {
                if m.rows.len() != layer.weights.nrows() || m.cols.len() != layer.weights.ncols() {
                    return Err(Error::Shape(format!(
                        "member {k} layer {i} mask does not match weights"
                    )));
                }
                if m.rows.iter().chain(m.cols.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Domain(format!("member {k} layer {i} has a non-finite logit")));
                }
            }
        }
        Ok(())
    }

    /// Inclusion multipliers of member `k`.
    pub fn selection(&self, k: usize, mode: MaskMode) -> MaskSelection {
        let map = |l: f64| match mode {
            MaskMode::Soft => sigmoid(l),
            MaskMode::Hard => {
                if sigmoid(l) >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        MaskSelection {
            layers: self.logits[k]
                .iter()
                .map(|l| LayerMask {
                    rows: l.rows.mapv(map),
                    cols: l.cols.mapv(map),
                })
                .collect(),
        }
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.logits
            .iter_mut()
            .flatten()
            .flat_map(|l| l.rows.iter_mut().chain(l.cols.iter_mut()))
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.logits
            .iter()
            .flatten()
            .flat_map(|l| l.rows.iter().chain(l.cols.iter()))
    }

    fn clamp(&mut self) {
        for v in self.values_mut() {
            *v = v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        }
    }

    /// Per-member flat view of the logits, positions in layer order (rows then cols).
    fn flat_members(&self) -> Vec<Vec<f64>> {
        self.logits
            .iter()
            .map(|m| {
                m.iter()
                    .flat_map(|l| l.rows.iter().chain(l.cols.iter()).copied())
                    .collect()
            })
            .collect()
    }
}

/// Logits at `INIT_LOGIT + U(-INIT_NOISE, INIT_NOISE)`, seed-deterministic.
pub fn init_masks(model: &Mlp, k: usize, seed: u64) -> Result<MaskSet> {
    if k < 2 {
        return Err(Error::Config("extraction needs at least two members".into()));
    }
    let mut masks = MaskSet::constant(model, k, INIT_LOGIT);
    let mut rng = seed::rng(seed::split(seed, seed::stream::MASKS));
    for v in masks.values_mut() {
        *v += rng.random_range(-INIT_NOISE..INIT_NOISE);
    }
    Ok(masks)
}

/// Member `k` of the masked model; the model itself is untouched.
pub fn masked_forward(
    model: &Mlp,
    masks: &MaskSet,
    k: usize,
    inputs: ArrayView2<'_, f64>,
    mode: MaskMode,
) -> Result<Array2<f64>> {
    if k >= masks.member_count() {
        return Err(Error::Shape(format!("member {k} of {}", masks.member_count())));
    }
    masks.validate(model)?;
    model.forward(inputs, Mode::Eval, Some(&masks.selection(k, mode)))
}

/// Mean over positions of the Bernoulli mask / member-index mutual information.
pub fn mask_diversity_mi(masks: &MaskSet) -> f64 {
    diversity_terms(masks, false).0
}

/// Diversity MI and its gradient with respect to every logit.
pub fn mask_diversity_mi_with_grad(masks: &MaskSet) -> (f64, MaskSet) {
    let (value, grad) = diversity_terms(masks, true);
    (value, grad.expect("gradient requested"))
}

fn diversity_terms(masks: &MaskSet, want_grad: bool) -> (f64, Option<MaskSet>) {
    let flat = masks.flat_members();
    let k = flat.len();
    let positions = flat.first().map_or(0, Vec::len);
    if k == 0 || positions == 0 {
        return (0.0, want_grad.then(|| masks.clone()));
    }
    let kf = k as f64;
    let mut total = 0.0;
    let mut grads = vec![vec![0.0; positions]; k];
    for i in 0..positions {
        let mut p_bar = 0.0;
        let mut q_bar = 0.0;
        let mut h_mean = 0.0;
        for member in &flat {
            let l = member[i];
            p_bar += sigmoid(l);
            q_bar += sigmoid(-l);
            h_mean += binary_entropy_logit(l);
        }
        p_bar /= kf;
        q_bar /= kf;
        h_mean /= kf;
        total += (binary_entropy(p_bar, q_bar) - h_mean).max(0.0);
        if want_grad {
            // d/dl_k [H(p̄) − mean H(p_k)] = (1/K)(ln(q̄/p̄) + l_k) p_k q_k
            let log_ratio = q_bar.ln() - p_bar.ln();
            for (g, member) in grads.iter_mut().zip(&flat) {
                let l = member[i];
                g[i] = (log_ratio + l) * sigmoid(l) * sigmoid(-l) / kf;
            }
        }
    }
    let pf = positions as f64;
    let grad = want_grad.then(|| {
        let mut out = masks.clone();
        for (member, g) in out.logits.iter_mut().zip(&grads) {
            let mut it = g.iter().map(|v| v / pf);
            for l in member.iter_mut() {
                for v in l.rows.iter_mut().chain(l.cols.iter_mut()) {
                    *v = it.next().expect("position count");
                }
            }
        }
        out
    });
    (total / pf, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub member_count: usize,
    pub diversity_weight: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_mask_mode: MaskMode,
    pub optimizer: MaskOptimizer,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            member_count: 10,
            diversity_weight: 2.0,
            learning_rate: 0.05,
            steps: 3000,
            batch_size: 128,
            seed: 0,
            eval_mask_mode: MaskMode::Soft,
            optimizer: MaskOptimizer::Adam,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.member_count < 2 {
            return Err(Error::Config("member_count must be at least 2".into()));
        }
        if !(self.diversity_weight >= 0.0 && self.diversity_weight.is_finite()) {
            return Err(Error::Config(format!(
                "invalid diversity weight {}",
                self.diversity_weight
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    /// Mean member cross-entropy on the step's batch, before the update.
    pub cross_entropy: f64,
    pub diversity_mi: f64,
    /// `cross_entropy − λ · diversity_mi`.
    pub objective: f64,
}

/// Objective value parts and the gradient of `mean_k CE_k − λ · MI` with
/// respect to every mask logit (soft masks, model in eval mode).
pub fn objective_gradient(
    model: &Mlp,
    masks: &MaskSet,
    inputs: ArrayView2<'_, f64>,
    labels: &[usize],
    diversity_weight: f64,
) -> Result<(f64, f64, MaskSet)> {
    masks.validate(model)?;
    let targets = Targets::Classes(labels.to_vec());
    let k = masks.member_count();
    let per_member = (0..k)
        .into_par_iter()
        .map(|m| {
            let sel = masks.selection(m, MaskMode::Soft);
            let (ce, g) = model.loss_and_gradients(inputs, &targets, Loss::CrossEntropy, Mode::Eval, Some(&sel))?;
            let layers: Vec<LayerMask> = g
                .mask_rows
                .into_iter()
                .zip(g.mask_cols)
                .zip(&sel.layers)
                .map(|((gr, gc), s)| LayerMask {
                    rows: gr * &s.rows.mapv(|r| r * (1.0 - r) / k as f64),
                    cols: gc * &s.cols.mapv(|c| c * (1.0 - c) / k as f64),
                })
                .collect();
            Ok((ce, layers))
        })
        .collect::<Result<Vec<_>>>()?;
    let ce = per_member.iter().map(|(c, _)| c).sum::<f64>() / k as f64;
    let (mi, div_grad) = mask_diversity_mi_with_grad(masks);
    let mut grad = MaskSet {
        logits: per_member.into_iter().map(|(_, l)| l).collect(),
    };
    for (g, d) in grad.values_mut().zip(div_grad.values()) {
        *g -= diversity_weight * d;
    }
    Ok((ce, mi, grad))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Trains mask logits jointly on shared minibatches. The model is only read.
pub fn extract(
    model: &Mlp,
    inputs: ArrayView2<'_, f64>,
    labels: &[usize],
    config: &ExtractionConfig,
) -> Result<(MaskSet, Vec<TraceStep>)> {
    config.validate()?;
    let n = inputs.nrows();
    if n == 0 || labels.len() != n {
        return Err(Error::Input(format!("{n} inputs with {} labels", labels.len())));
    }
    let mut masks = init_masks(model, config.member_count, config.seed)?;
    let mut rng = seed::rng(seed::split(config.seed, seed::stream::TRAIN));
    let size = masks.values().count();
    let mut adam = Adam {
        m: vec![0.0; size],
        v: vec![0.0; size],
        t: 0,
    };
    let batch = config.batch_size.min(n);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let idx = rand::seq::index::sample(&mut rng, n, batch).into_vec();
        let xb = inputs.select(Axis(0), &idx);
        let lb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (ce, mi, grad) = objective_gradient(model, &masks, xb.view(), &lb, config.diversity_weight)?;
        let objective = ce - config.diversity_weight * mi;
        if !objective.is_finite() || grad.values().any(|g| !g.is_finite()) {
            return Err(Error::Extraction { step });
        }
        trace.push(TraceStep {
            step,
            cross_entropy: ce,
            diversity_mi: mi,
            objective,
        });
        let lr = config.learning_rate;
        match config.optimizer {
            MaskOptimizer::Sgd => {
                for (v, g) in masks.values_mut().zip(grad.values()) {
                    *v -= lr * g;
                }
            }
            MaskOptimizer::Adam => {
                adam.t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(adam.t);
                let c2 = 1.0 - ADAM_BETA2.powi(adam.t);
                for (((v, g), m), s) in masks
                    .values_mut()
                    .zip(grad.values())
                    .zip(adam.m.iter_mut())
                    .zip(adam.v.iter_mut())
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *s = ADAM_BETA2 * *s + (1.0 - ADAM_BETA2) * g * g;
                    *v -= lr * (*m / c1) / ((*s / c2).sqrt() + ADAM_EPS);
                }
            }
        }
        masks.clamp();
    }
    Ok((masks, trace))
}

/// One prediction per input from the `K` masked members.
pub fn extracted_predict(
    model: &Mlp,
    masks: &MaskSet,
    inputs: ArrayView2<'_, f64>,
    mode: MaskMode,
) -> Result<Vec<EnsemblePrediction>> {
    masks.validate(model)?;
    let outputs = (0..masks.member_count())
        .into_par_iter()
        .map(|k| model.forward(inputs, Mode::Eval, Some(&masks.selection(k, mode))))
        .collect::<Result<Vec<_>>>()?;
    stack_member_logits(&outputs)
}

const PTLG_MAGIC: &[u8; 4] = b"PTLG";
const PTLB_MAGIC: &[u8; 4] = b"PTLB";
const PTLG_VERSION: u32 = 1;

/// Class logits per spatial tile, `N × H × W × C`, input-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PerTileLogits {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    values: Vec<f32>,
    pub source: String,
}

impl PerTileLogits {
    pub fn new(shape: (usize, usize, usize, usize), values: Vec<f32>, source: impl Into<String>) -> Result<Self> {
        let (n, h, w, c) = shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Shape(format!("tile grid {h}x{w} with {c} classes")));
        }
        if values.len() != n * h * w * c {
            return Err(Error::Shape(format!(
                "{} values for shape {n}x{h}x{w}x{c}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite tile logit".into()));
        }
        Ok(PerTileLogits {
            n,
            h,
            w,
            c,
            values,
            source: source.into(),
        })
    }

    /// `(N, H, W, C)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }

    pub fn class_count(&self) -> usize {
        self.c
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn tile(&self, input: usize, row: usize, col: usize) -> &[f32] {
        let start = ((input * self.h + row) * self.w + col) * self.c;
        &self.values[start..start + self.c]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.values.len());
        out.extend_from_slice(PTLG_MAGIC);
        for v in [PTLG_VERSION, self.n as u32, self.h as u32, self.w as u32, self.c as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: impl Into<String>) -> Result<Self> {
        if bytes.get(..4) != Some(PTLG_MAGIC.as_slice()) {
            return Err(Error::format("logits.magic", "expected \"PTLG\""));
        }
        let word = |i: usize, field: &str| -> Result<u32> {
            bytes
                .get(4 + 4 * i..8 + 4 * i)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| Error::format(field, "file truncated"))
        };
        let version = word(0, "logits.version")?;
        if version != PTLG_VERSION {
            return Err(Error::format(
                "logits.version",
                format!("unsupported version {version}"),
            ));
        }
        let n = word(1, "logits.n")? as usize;
        let h = word(2, "logits.h")? as usize;
        let w = word(3, "logits.w")? as usize;
        let c = word(4, "logits.c")? as usize;
        let count = n
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::format("logits.n", "dimensions overflow"))?;
        let body = &bytes[24.min(bytes.len())..];
        if body.len() != 4 * count {
            return Err(Error::format(
                "logits.values",
                format!("expected {} bytes of values, found {}", 4 * count, body.len()),
            ));
        }
        let values = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        PerTileLogits::new((n, h, w, c), values, source).map_err(|e| Error::format("logits.values", e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        PerTileLogits::from_bytes(&fs::read(path)?, path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }
}

pub fn tile_labels_to_bytes(labels: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * labels.len());
    out.extend_from_slice(PTLB_MAGIC);
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    for l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn tile_labels_from_bytes(bytes: &[u8]) -> Result<Vec<u32>> {
    if bytes.get(..4) != Some(PTLB_MAGIC.as_slice()) {
        return Err(Error::format("labels.magic", "expected \"PTLB\""));
    }
    let n = bytes
        .get(4..8)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| Error::format("labels.count", "file truncated"))?;
    let body = &bytes[8..];
    if body.len() != 4 * n {
        return Err(Error::format(
            "labels.values",
            format!("expected {n} labels, found {} bytes", body.len()),
        ));
    }
    Ok(body
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn read_tile_labels(path: &Path) -> Result<Vec<u32>> {
    tile_labels_from_bytes(&fs::read(path)?)
}

pub fn write_tile_labels(labels: &[u32], path: &Path) -> Result<()> {
    Ok(fs::write(path, tile_labels_to_bytes(labels))?)
}

/// `g × len` weights: output cell `a` averages the stretch
/// `[a·len/g, (a+1)·len/g)` of the tile axis, each tile weighted by the
/// fraction of the stretch it covers.
fn pooling_weights(len: usize, g: usize) -> Array2<f64> {
    Array2::from_shape_fn((g, len), |(a, i)| {
        // Work in units of 1/g tile so all boundaries are integers.
        let lo = (a * len).max(i * g);
        let hi = ((a + 1) * len).min((i + 1) * g);
        hi.saturating_sub(lo) as f64 / len as f64
    })
}

/// Adaptive average pooling of the tile grid to `g × g`; each pooled logit
/// vector (divided by `temperature`) is one ensemble member.
pub fn pool_tiles(logits: &PerTileLogits, g: usize, temperature: f64) -> Result<Vec<EnsemblePrediction>> {
    let (n, h, w, c) = logits.shape();
    if g == 0 || g > h.min(w) {
        return Err(Error::Domain(format!("pool size {g} outside [1, {}]", h.min(w))));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let wr = pooling_weights(h, g);
    let wc = pooling_weights(w, g);
    (0..n)
        .map(|input| {
            let mut members = Array2::<f64>::zeros((g * g, c));
            for a in 0..g {
                for b in 0..g {
                    let mut row = members.row_mut(a * g + b);
                    for i in 0..h {
                        let wa = wr[[a, i]];
                        if wa == 0.0 {
                            continue;
                        }
                        for j in 0..w {
                            let weight = wa * wc[[b, j]];
                            if weight == 0.0 {
                                continue;
                            }
                            for (o, &v) in row.iter_mut().zip(logits.tile(input, i, j)) {
                                *o += weight * v as f64;
                            }
                        }
                    }
                }
            }
            members /= temperature;
            EnsemblePrediction::from_logits(members)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{HiddenActivation, MlpConfig, OutputActivation};
    use crate::uncertainty::mutual_information;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_model(seed: u64) -> Mlp {
        let config = MlpConfig {
            input_dim: 3,
            hidden_dims: vec![4],
            width_multiplier: 1.0,
            output_dim: 2,
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::SoftmaxLogits,
            dropout_p: 0.0,
        };
        Mlp::init(config, seed).unwrap()
    }

    fn random_masks(model: &Mlp, k: usize, seed: u64, spread: f64) -> MaskSet {
        let mut m = MaskSet::constant(model, k, 0.0);
        let mut rng = crate::seed::rng(seed);
        for v in m.values_mut() {
            *v = rng.random_range(-spread..spread);
        }
        m
    }

    #[test]
    fn init_shapes_and_determinism() {
        let model = small_model(0);
        let m = init_masks(&model, 10, 5).unwrap();
        assert_eq!(m.member_count(), 10);
        assert!(m.logits.iter().all(|l| l.len() == 2));
        assert_eq!(m.logits[0][0].rows.len(), 4);
        assert_eq!(m.logits[0][0].cols.len(), 3);
        assert_eq!(m, init_masks(&model, 10, 5).unwrap());
        assert!(m.values().all(|v| (v - 2.0).abs() <= 0.1));
        assert!((sigmoid(2.0) - 0.8808).abs() < 1e-4);
        assert!(init_masks(&model, 1, 5).is_err());
    }

    #[test]
    fn saturated_masks_reproduce_the_model() {
        let model = small_model(1);
        let masks = MaskSet::constant(&model, 2, 1e6);
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let mut clamped = masks.clone();
        clamped.clamp();
        let plain = model.forward(x.view(), Mode::Eval, None).unwrap();
        let masked = masked_forward(&model, &clamped, 1, x.view(), MaskMode::Soft).unwrap();
        assert!((&plain - &masked).iter().all(|d| d.abs() < 1e-6));
    }

    #[test]
    fn hard_zero_masks_give_uniform_output() {
        let model = small_model(2);
        let masks = MaskSet::constant(&model, 2, -5.0);
        let x = Array2::from_elem((3, 3), 0.7);
        let out = masked_forward(&model, &masks, 0, x.view(), MaskMode::Hard).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        let p = crate::nn::softmax_rows(&out);
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn masked_forward_rejects_bad_shapes() {
        let model = small_model(2);
        let mut masks = MaskSet::constant(&model, 2, 1.0);
        masks.logits[1][0].cols = Array1::zeros(5);
        let x = Array2::zeros((1, 3));
        assert!(matches!(
            masked_forward(&model, &masks, 0, x.view(), MaskMode::Soft),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn diversity_examples() {
        let model = small_model(0);
        assert_eq!(mask_diversity_mi(&MaskSet::constant(&model, 4, 1.3)), 0.0);
        let mut split = MaskSet::constant(&model, 2, LOGIT_CLAMP);
        for v in split.logits[1]
            .iter_mut()
            .flat_map(|l| l.rows.iter_mut().chain(l.cols.iter_mut()))
        {
            *v = -LOGIT_CLAMP;
        }
        assert!((mask_diversity_mi(&split) - 2f64.ln()).abs() < 1e-9);
    }

    /// Per position: joint over (index uniform on K, bit) with entropies summed directly.
    fn enumeration_mi(masks: &MaskSet) -> f64 {
        let flat = masks.flat_members();
        let k = flat.len() as f64;
        let positions = flat[0].len();
        let mut total = 0.0;
        for i in 0..positions {
            let mut joint = Vec::new();
            let mut marginal = [0.0; 2];
            for member in &flat {
                let p = 1.0 / (1.0 + (-member[i]).exp());
                for (bit, pb) in [(0, 1.0 - p), (1, p)] {
                    joint.push((bit, pb / k));
                    marginal[bit] += pb / k;
                }
            }
            let mut mi = 0.0;
            for (bit, pj) in joint {
                if pj > 0.0 {
                    mi += pj * (pj / (marginal[bit] * (1.0 / k))).ln();
                }
            }
            total += mi;
        }
        total / positions as f64
    }

    #[test]
    fn diversity_matches_enumeration() {
        let model = small_model(0);
        for s in 0..10 {
            let m = random_masks(&model, 3, s, 4.0);
            assert!((mask_diversity_mi(&m) - enumeration_mi(&m)).abs() < 1e-12);
        }
    }

    #[test]
    fn diversity_gradient_matches_finite_differences() {
        let model = small_model(0);
        let m = random_masks(&model, 3, 7, 3.0);
        let (_, grad) = mask_diversity_mi_with_grad(&m);
        let analytic: Vec<f64> = grad.values().copied().collect();
        let eps = 1e-5;
        for (idx, &a) in analytic.iter().enumerate() {
            let mut plus = m.clone();
            let mut minus = m.clone();
            *plus.values_mut().nth(idx).unwrap() += eps;
            *minus.values_mut().nth(idx).unwrap() -= eps;
            let fd = (mask_diversity_mi(&plus) - mask_diversity_mi(&minus)) / (2.0 * eps);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "position {idx}: {a} vs {fd}");
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let model = small_model(3);
        let m = random_masks(&model, 3, 11, 2.0);
        let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let labels = vec![0, 1, 1, 0, 1, 0];
        let (_, _, grad) = objective_gradient(&model, &m, x.view(), &labels, 2.0).unwrap();
        let f = |ms: &MaskSet| {
            let (ce, mi, _) = objective_gradient(&model, ms, x.view(), &labels, 2.0).unwrap();
            ce - 2.0 * mi
        };
        let eps = 1e-5;
        for (idx, &a) in grad.values().enumerate() {
            let mut plus = m.clone();
            let mut minus = m.clone();
            *plus.values_mut().nth(idx).unwrap() += eps;
            *minus.values_mut().nth(idx).unwrap() -= eps;
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "logit {idx}: {a} vs {fd}");
        }
    }

    fn blobs() -> (Array2<f64>, Vec<usize>) {
        let x = Array2::from_shape_fn((40, 3), |(i, j)| {
            let c = (i % 2) as f64;
            (c * 2.0 - 1.0) * (j as f64 + 1.0) * 0.5 + ((i * 7 + j) as f64).sin() * 0.2
        });
        let y = (0..40).map(|i| i % 2).collect();
        (x, y)
    }

    #[test]
    fn extract_leaves_model_bitwise_unchanged() {
        let model = small_model(4);
        let before = model.clone();
        let (x, y) = blobs();
        let cfg = ExtractionConfig {
            member_count: 3,
            steps: 20,
            batch_size: 16,
            ..Default::default()
        };
        let (masks, trace) = extract(&model, x.view(), &y, &cfg).unwrap();
        assert_eq!(model, before);
        assert_eq!(trace.len(), 20);
        assert!(masks.values().all(|v| v.abs() <= LOGIT_CLAMP));
    }

    #[test]
    fn zero_steps_keep_initial_masks() {
        let model = small_model(4);
        let (x, y) = blobs();
        let cfg = ExtractionConfig {
            member_count: 3,
            steps: 0,
            seed: 9,
            ..Default::default()
        };
        let (masks, trace) = extract(&model, x.view(), &y, &cfg).unwrap();
        assert!(trace.is_empty());
        assert_eq!(masks, init_masks(&model, 3, 9).unwrap());
    }

    #[test]
    fn extract_is_deterministic() {
        let model = small_model(5);
        let (x, y) = blobs();
        let cfg = ExtractionConfig {
            member_count: 4,
            steps: 15,
            batch_size: 8,
            seed: 2,
            ..Default::default()
        };
        let a = extract(&model, x.view(), &y, &cfg).unwrap();
        let b = extract(&model, x.view(), &y, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn extracted_predict_matches_loop() {
        let model = small_model(6);
        let masks = random_masks(&model, 4, 3, 2.0);
        let (x, _) = blobs();
        let preds = extracted_predict(&model, &masks, x.view(), MaskMode::Soft).unwrap();
        for k in 0..4 {
            let out = masked_forward(&model, &masks, k, x.view(), MaskMode::Soft).unwrap();
            for (i, p) in preds.iter().enumerate() {
                assert_eq!(p.member_logits().unwrap().row(k), out.row(i));
            }
        }
        let same = MaskSet::constant(&model, 4, LOGIT_CLAMP);
        for p in extracted_predict(&model, &same, x.view(), MaskMode::Soft).unwrap() {
            assert_eq!(mutual_information(&p).unwrap(), 0.0);
        }
    }

    fn fixture(n: usize, h: usize, w: usize, c: usize, seed: u64) -> PerTileLogits {
        let mut rng = crate::seed::rng(seed);
        let values = (0..n * h * w * c).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        PerTileLogits::new((n, h, w, c), values, "fixture").unwrap()
    }

    #[test]
    fn pooling_extremes() {
        let t = fixture(3, 7, 7, 4, 1);
        let global = pool_tiles(&t, 1, 1.0).unwrap();
        for (i, p) in global.iter().enumerate() {
            assert_eq!(p.member_count(), 1);
            for cls in 0..4 {
                let mut s = 0.0;
                for r in 0..7 {
                    for c in 0..7 {
                        s += t.tile(i, r, c)[cls] as f64;
                    }
                }
                assert!((p.member_logits().unwrap()[[0, cls]] - s / 49.0).abs() < 1e-5);
            }
        }
        let raw = pool_tiles(&t, 7, 1.0).unwrap();
        for (i, p) in raw.iter().enumerate() {
            for r in 0..7 {
                for c in 0..7 {
                    for cls in 0..4 {
                        assert_eq!(
                            p.member_logits().unwrap()[[r * 7 + c, cls]],
                            t.tile(i, r, c)[cls] as f64
                        );
                    }
                }
            }
        }
        for g in 2..=7 {
            assert_eq!(pool_tiles(&t, g, 1.0).unwrap()[0].member_count(), g * g);
        }
        assert!(matches!(pool_tiles(&t, 0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(pool_tiles(&t, 8, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn even_blocks_are_plain_averages() {
        let t = fixture(1, 4, 4, 2, 3);
        let p = pool_tiles(&t, 2, 1.0).unwrap();
        let l = p[0].member_logits().unwrap();
        let expect: f64 = [(0, 2), (0, 3), (1, 2), (1, 3)]
            .iter()
            .map(|&(r, c)| t.tile(0, r, c)[1] as f64)
            .sum::<f64>()
            / 4.0;
        assert!((l[[1, 1]] - expect).abs() < 1e-12);
    }

    #[test]
    fn temperature_divides_logits() {
        let t = fixture(1, 2, 2, 3, 4);
        let a = pool_tiles(&t, 2, 1.0).unwrap();
        let b = pool_tiles(&t, 2, 2.0).unwrap();
        let la = a[0].member_logits().unwrap();
        let lb = b[0].member_logits().unwrap();
        assert!((la / 2.0 - lb).iter().all(|d| d.abs() < 1e-15));
        assert!(pool_tiles(&t, 1, 0.0).is_err());
    }

    #[test]
    fn ptlg_round_trip_and_errors() {
        let t = fixture(2, 3, 2, 4, 5);
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], b"PTLG");
        assert_eq!(PerTileLogits::from_bytes(&bytes, "fixture").unwrap(), t);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(PerTileLogits::from_bytes(&bad, ""), Err(Error::Format { .. })));
        let short = &bytes[..bytes.len() - 1];
        assert!(matches!(
            PerTileLogits::from_bytes(short, ""),
            Err(Error::Format { .. })
        ));

        let labels = vec![3, 0, 7];
        assert_eq!(tile_labels_from_bytes(&tile_labels_to_bytes(&labels)).unwrap(), labels);
        assert!(tile_labels_from_bytes(b"PTLB\x02\0\0\0\0\0\0\0").is_err());
    }

    proptest! {
        #[test]
        fn pooled_member_mean_equals_global(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
            let t = fixture(2, h, w, 3, seed);
            let global = pool_tiles(&t, 1, 1.0).unwrap();
            for g in 1..=h.min(w) {
                for (p, q) in pool_tiles(&t, g, 1.0).unwrap().iter().zip(&global) {
                    let mean = p.member_logits().unwrap().mean_axis(Axis(0)).unwrap();
                    for (a, b) in mean.iter().zip(q.member_logits().unwrap().row(0)) {
                        prop_assert!((a - b).abs() < 1e-5);
                    }
                }
            }
        }

        #[test]
        fn diversity_is_bounded(seed in any::<u64>(), k in 2usize..6) {
            let model = small_model(0);
            let m = random_masks(&model, k, seed, 30.0);
            let v = mask_diversity_mi(&m);
            prop_assert!(v >= 0.0 && v <= (k as f64).ln() + 1e-12);
        }
    }
}
