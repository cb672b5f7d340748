//! Small ReLU multilayer perceptrons with hand-written backpropagation and
//! SGD with momentum. These stand in for the teacher and student backbones.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::{argmax, matmul, matmul_transpose, seeded_rng, transpose_matmul, Matrix};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// One affine layer: `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self {
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layer_dims: Vec<usize>,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

/// Gradients (or velocities) laid out like [`MlpParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
}

impl ParamGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) -> Result<()> {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_assign(&b.weights)?;
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.layers.iter().fold(0.0, |m, l| {
            let b = l.bias.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            m.max(l.weights.max_abs()).max(b)
        })
    }
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two dims")
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Flat view of every parameter, layer by layer (weights then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.data().len() + l.bias.len()).sum()
    }

    /// Mutable access to the `i`-th parameter in [`Self::flatten`] order.
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            if i < nw {
                return &mut l.weights.data_mut()[i];
            }
            i -= nw;
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }
}

/// He-initialized MLP: weights `N(0, 2/fan_in)`, zero biases.
pub fn init_mlp(layer_dims: &[usize], seed: u64) -> Result<MlpParams> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(Error::InvalidParam(format!(
            "layer dims {layer_dims:?}: need at least two dims, all >= 1"
        )));
    }
    let mut rng = seeded_rng(seed);
    let layers = layer_dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            Layer {
                weights: Matrix::from_fn(fan_out, fan_in, |_, _| rng.normal(0.0, std)),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(MlpParams {
        layer_dims: layer_dims.to_vec(),
        layers,
        seed,
    })
}

/// Inputs to each layer, kept for the backward pass. `inputs[0]` is the batch,
/// `inputs[l]` for `l > 0` the ReLU output of hidden layer `l − 1`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
}

pub fn forward(params: &MlpParams, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if batch.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} features, network expects {}",
            batch.cols(),
            params.input_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut x = batch.clone();
    let last = params.layers.len() - 1;
    for (li, layer) in params.layers.iter().enumerate() {
        let mut h = matmul_transpose(&x, &layer.weights)?;
        for r in 0..h.rows() {
            for (v, b) in h.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
                if li < last && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        inputs.push(std::mem::replace(&mut x, h));
    }
    Ok((x, ForwardCache { inputs }))
}

/// Logits only, evaluated in chunks to bound memory.
pub fn predict(params: &MlpParams, features: &Matrix) -> Result<Matrix> {
    const CHUNK: usize = 1024;
    let n = features.rows();
    let mut data = Vec::with_capacity(n * params.output_dim());
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (logits, _) = forward(params, &features.select_rows(&idx))?;
        data.extend_from_slice(logits.data());
        start = end;
    }
    Ok(Matrix::from_raw(n, params.output_dim(), data))
}

pub fn backward(params: &MlpParams, cache: &ForwardCache, grad_logits: &Matrix) -> Result<ParamGrads> {
    if cache.inputs.len() != params.layers.len() {
        return Err(Error::Shape("forward cache does not match network depth".into()));
    }
    let batch = cache.inputs[0].rows();
    if grad_logits.shape() != (batch, params.output_dim()) {
        return Err(Error::Shape(format!(
            "grad_logits is {}x{}, expected {batch}x{}",
            grad_logits.rows(),
            grad_logits.cols(),
            params.output_dim()
        )));
    }
    let mut grads: Vec<Layer> = Vec::with_capacity(params.layers.len());
    let mut delta = grad_logits.clone();
    for li in (0..params.layers.len()).rev() {
        let input = &cache.inputs[li];
        let layer = &params.layers[li];
        if input.cols() != layer.weights.cols() {
            return Err(Error::Shape(format!("stale cache at layer {li}")));
        }
        let dw = transpose_matmul(&delta, input)?;
        let mut db = vec![0.0; layer.bias.len()];
        for r in 0..delta.rows() {
            db.iter_mut().zip(delta.row(r)).for_each(|(a, d)| *a += d);
        }
        grads.push(Layer { weights: dw, bias: db });
        if li > 0 {
            let mut next = matmul(&delta, &layer.weights)?;
            // ReLU: the cached input is the activation, zero where it was clamped.
            for (g, &a) in next.data_mut().iter_mut().zip(input.data()) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = next;
        }
    }
    grads.reverse();
    Ok(ParamGrads { layers: grads })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: ParamGrads,
}

impl SgdState {
    pub fn new(params: &MlpParams, learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !(0.0..1.0).contains(&momentum) || !(weight_decay >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "sgd: lr={learning_rate} momentum={momentum} weight_decay={weight_decay}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: ParamGrads::zeros_like(params),
        })
    }
}

/// `v ← μ·v + g + wd·p; p ← p − lr·v` on every weight and bias.
pub fn sgd_step(params: &mut MlpParams, grads: &ParamGrads, state: &mut SgdState) -> Result<()> {
    if grads.layers.len() != params.layers.len() || state.velocity.layers.len() != params.layers.len() {
        return Err(Error::Shape("gradient/velocity depth mismatch".into()));
    }
    let (lr, mu, wd) = (state.learning_rate, state.momentum, state.weight_decay);
    let update = |p: &mut [f64], g: &[f64], v: &mut [f64]| {
        for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = mu * *v + g + wd * *p;
            *p -= lr * *v;
        }
    };
    for ((layer, g), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.velocity.layers.iter_mut())
    {
        if layer.weights.shape() != g.weights.shape() || layer.weights.shape() != v.weights.shape() {
            return Err(Error::Shape("gradient shape does not match parameters".into()));
        }
        update(layer.weights.data_mut(), g.weights.data(), v.weights.data_mut());
        update(&mut layer.bias, &g.bias, &mut v.bias);
    }
    Ok(())
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate_accuracy(params: &MlpParams, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluate_accuracy dataset"));
    }
    let logits = predict(params, &dataset.features)?;
    let correct = logits
        .row_iter()
        .zip(dataset.labels.iter())
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointLayer {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    layer_dims: Vec<usize>,
    seed: u64,
    layers: Vec<CheckpointLayer>,
}

impl MlpParams {
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            layer_dims: self.layer_dims.clone(),
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    weights: l.weights.data().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                ck.format_version
            )));
        }
        let dims = &ck.layer_dims;
        if dims.len() < 2 || dims.contains(&0) || ck.layers.len() != dims.len() - 1 {
            return Err(Error::Checkpoint(format!("inconsistent layer_dims {dims:?}")));
        }
        let layers = ck
            .layers
            .into_iter()
            .zip(dims.windows(2))
            .enumerate()
            .map(|(i, (l, w))| {
                if l.bias.len() != w[1] || l.bias.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Checkpoint(format!("layer {i}: bad bias")));
                }
                let weights = Matrix::new(w[1], w[0], l.weights)
                    .map_err(|e| Error::Checkpoint(format!("layer {i}: {e}")))?;
                Ok(Layer { weights, bias: l.bias })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layer_dims: ck.layer_dims,
            layers,
            seed: ck.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}
