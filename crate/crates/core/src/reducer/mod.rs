//! Encoder–decoder network compressing `[line; module]` embeddings.
//!
//! Every hidden block is `Linear → BatchNorm → LeakyReLU → Dropout`, the
//! latent block drops the dropout, and the output layer is a bare linear map.
//! Backpropagation is written out by hand in double precision; trained
//! parameters are rounded to `f32`, the storage precision of bundles.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub mod gradcheck;

pub use gradcheck::{
    analytic_gradients, check_gradients, finite_difference, gradient_check, GradCheckOptions,
    GradCheckReport,
    GradMismatch,
};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum ReducerError {
    #[error("shape mismatch: expected width {expected}, got {got}")]
    Width { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite value in input row {0}")]
    NonFiniteInput(usize),
    #[error("{rows} rows is fewer than the batch size {batch}")]
    TooFewRows { rows: usize, batch: usize },
    #[error("model is in train mode; switch to infer mode first")]
    TrainMode,
    #[error("invalid reducer config: {0}")]
    Config(String),
    #[error("tensor `{name}`: {reason}")]
    Tensor { name: String, reason: String },
}

pub type Result<T> = std::result::Result<T, ReducerError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReducerConfig {
    pub latent_dim: usize,
    /// Widths of the two hidden layers on each side of the latent.
    pub hidden: [usize; 2],
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for ReducerConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            hidden: [4096, 1024],
            epochs: 200,
            batch_size: 128,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            dropout: 0.3,
            leaky_slope: 0.01,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl ReducerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ReducerError::Config(m.to_owned()));
        if self.latent_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2 for batch normalization");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 || self.leaky_slope < 0.0 {
            return bad("learning rate must be positive; weight decay and slope non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `inputs × outputs`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub norm: Option<BatchNorm>,
    pub activation: bool,
    pub dropout: bool,
}

impl Layer {
    fn xavier(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        Array2::from_shape_fn((inputs, outputs), |_| rng.gen_range(-a..a))
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

/// Per-layer gradients, mirroring `Layer` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

impl LayerGrads {
    /// Flat views in the same order as `Autoencoder::param_slices`.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ];
        if let (Some(g), Some(b)) = (&self.gamma, &self.beta) {
            out.push(g.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ];
        if let (Some(g), Some(b)) = (&mut self.gamma, &mut self.beta) {
            out.push(g.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

struct LayerCache {
    input: Array2<f64>,
    normalized: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    pre_activation: Array2<f64>,
    dropout_mask: Option<Array2<f64>>,
}

#[derive(Clone, Copy)]
pub(crate) struct TrainPass {
    pub dropout: bool,
    pub update_stats: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    /// Three encoder layers followed by three decoder layers.
    pub layers: Vec<Layer>,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
    pub mode: Mode,
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

impl Autoencoder {
    /// Fresh Xavier-uniform initialised model (zero biases, unit γ) in infer mode.
    pub fn new(input_dim: usize, cfg: &ReducerConfig) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(ReducerError::Config("input width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let [h1, h2] = cfg.hidden;
        let d = cfg.latent_dim;
        // (inputs, outputs, norm+activation, dropout)
        let plan = [
            (input_dim, h1, true, true),
            (h1, h2, true, true),
            (h2, d, true, false),
            (d, h2, true, true),
            (h2, h1, true, true),
            (h1, input_dim, false, false),
        ];
        let layers = plan
            .iter()
            .map(|&(i, o, normed, dropout)| Layer {
                weight: Layer::xavier(i, o, &mut rng),
                bias: Array1::zeros(o),
                norm: normed.then(|| BatchNorm::new(o)),
                activation: normed,
                dropout,
            })
            .collect();
        Ok(Self {
            layers,
            leaky_slope: cfg.leaky_slope,
            dropout_rate: cfg.dropout,
            mode: Mode::Infer,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn latent_dim(&self) -> usize {
        self.layers[2].outputs()
    }

    fn leaky(&self, v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            self.leaky_slope * v
        }
    }

    fn check_width(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(ReducerError::Width {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn infer_layers(&self, x: ArrayView2<f64>, layers: &[Layer]) -> Array2<f64> {
        let mut a = x.to_owned();
        for layer in layers {
            let mut u = a.dot(&layer.weight) + &layer.bias;
            if let Some(bn) = &layer.norm {
                let scale = bn
                    .running_var
                    .mapv(|v| 1.0 / (v + BN_EPS).sqrt())
                    * &bn.gamma;
                u = (u - &bn.running_mean) * &scale + &bn.beta;
            }
            if layer.activation {
                u.mapv_inplace(|v| self.leaky(v));
            }
            a = u;
        }
        a
    }

    fn require_infer(&self) -> Result<()> {
        match self.mode {
            Mode::Infer => Ok(()),
            Mode::Train => Err(ReducerError::TrainMode),
        }
    }

    pub fn encode_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.require_infer()?;
        self.check_width(&x)?;
        Ok(self.infer_layers(x, &self.layers[..3]))
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.encode_batch(view)?.into_raw_vec_and_offset().0)
    }

    pub fn reconstruct_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.require_infer()?;
        self.check_width(&x)?;
        Ok(self.infer_layers(x, &self.layers))
    }

    /// Reconstruction and its mean squared error against `x`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let out = self.reconstruct_batch(view)?.into_raw_vec_and_offset().0;
        let mse = mse(x, &out);
        Ok((out, mse))
    }

    /// Mean squared reconstruction error over all rows and coordinates.
    pub fn reconstruction_mse(&self, x: ArrayView2<f64>) -> Result<f64> {
        let out = self.reconstruct_batch(x)?;
        Ok((&out - &x).mapv(|v| v * v).mean().unwrap_or(0.0))
    }

    /// Training-mode forward pass; batch statistics, optional dropout.
    fn forward_train(
        &mut self,
        x: ArrayView2<f64>,
        pass: TrainPass,
        rng: &mut ChaCha8Rng,
    ) -> (Array2<f64>, Vec<LayerCache>) {
        let n = x.nrows() as f64;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let slope = self.leaky_slope;
        let rate = self.dropout_rate;
        for layer in &mut self.layers {
            let u = a.dot(&layer.weight) + &layer.bias;
            let (v, normalized, inv_std) = match &mut layer.norm {
                Some(bn) => {
                    let mean = u.mean_axis(Axis(0)).expect("non-empty batch");
                    let centered = &u - &mean;
                    let var = centered.mapv(|c| c * c).mean_axis(Axis(0)).expect("non-empty");
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let xhat = &centered * &inv_std;
                    let v = &xhat * &bn.gamma + &bn.beta;
                    if pass.update_stats {
                        let unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var.clone() };
                        bn.running_mean =
                            &bn.running_mean * (1.0 - BN_MOMENTUM) + &mean * BN_MOMENTUM;
                        bn.running_var =
                            &bn.running_var * (1.0 - BN_MOMENTUM) + &unbiased * BN_MOMENTUM;
                    }
                    (v, Some(xhat), Some(inv_std))
                }
                None => (u, None, None),
            };
            let mut out = if layer.activation {
                v.mapv(|z| if z > 0.0 { z } else { slope * z })
            } else {
                v.clone()
            };
            let dropout_mask = (layer.dropout && pass.dropout && rate > 0.0).then(|| {
                let m = dropout_mask(out.nrows(), out.ncols(), rate, rng);
                out *= &m;
                m
            });
            caches.push(LayerCache {
                input: std::mem::replace(&mut a, out),
                normalized,
                inv_std,
                pre_activation: v,
                dropout_mask,
            });
        }
        (a, caches)
    }

    fn backward(&self, caches: &[LayerCache], grad_out: Array2<f64>) -> Vec<LayerGrads> {
        let n = grad_out.nrows() as f64;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out;
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            if let Some(m) = &cache.dropout_mask {
                g *= m;
            }
            if layer.activation {
                let slope = self.leaky_slope;
                g.zip_mut_with(&cache.pre_activation, |gi, &v| {
                    if v <= 0.0 {
                        *gi *= slope
                    }
                });
            }
            let (dgamma, dbeta) = match (&layer.norm, &cache.normalized, &cache.inv_std) {
                (Some(bn), Some(xhat), Some(inv_std)) => {
                    let dgamma = (&g * xhat).sum_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0));
                    let dxhat = &g * &bn.gamma;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                    g = ((&dxhat * n - &sum_dxhat) - &(xhat * &sum_dxhat_xhat)) * &(inv_std / n);
                    (Some(dgamma), Some(dbeta))
                }
                _ => (None, None),
            };
            let dweight = cache.input.t().dot(&g);
            let dbias = g.sum_axis(Axis(0));
            let next = g.dot(&layer.weight.t());
            grads.push(LayerGrads {
                weight: dweight,
                bias: dbias,
                gamma: dgamma,
                beta: dbeta,
            });
            g = next;
        }
        grads.reverse();
        grads
    }

    /// Training-mode MSE loss and its gradients for one batch.
    pub(crate) fn loss_and_grads(
        &mut self,
        x: ArrayView2<f64>,
        pass: TrainPass,
        rng: &mut ChaCha8Rng,
    ) -> (f64, Vec<LayerGrads>) {
        let (out, caches) = self.forward_train(x, pass, rng);
        let diff = &out - &x;
        let count = diff.len() as f64;
        let loss = diff.mapv(|v| v * v).sum() / count;
        let grads = self.backward(&caches, diff * (2.0 / count));
        (loss, grads)
    }

    /// Training-mode loss without dropout and without touching running
    /// statistics.
    pub(crate) fn batch_loss(&mut self, x: ArrayView2<f64>) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = TrainPass {
            dropout: false,
            update_stats: false,
        };
        let (out, _) = self.forward_train(x, pass, &mut rng);
        (&out - &x).mapv(|v| v * v).mean().unwrap_or(0.0)
    }

    /// Flat mutable parameter views: per layer weight, bias, then γ and β
    /// when normalized.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
            if let Some(bn) = &mut layer.norm {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    /// Names matching `param_slices_mut` order.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push(format!("layer{i}.weight"));
            out.push(format!("layer{i}.bias"));
            if layer.norm.is_some() {
                out.push(format!("layer{i}.gamma"));
                out.push(format!("layer{i}.beta"));
            }
        }
        out
    }

    /// Round every parameter and running statistic to `f32`.
    pub fn round_to_f32(&mut self) {
        let round = |v: &mut f64| *v = *v as f32 as f64;
        for layer in &mut self.layers {
            layer.weight.map_inplace(round);
            layer.bias.map_inplace(round);
            if let Some(bn) = &mut layer.norm {
                bn.gamma.map_inplace(round);
                bn.beta.map_inplace(round);
                bn.running_mean.map_inplace(round);
                bn.running_var.map_inplace(round);
            }
        }
    }

    /// Named tensors in storage order, as `f32`.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let f = |a: &[f64]| a.iter().map(|&v| v as f32).collect::<Vec<f32>>();
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let shape = vec![layer.inputs(), layer.outputs()];
            out.push((
                format!("layer{i}.weight"),
                shape,
                f(layer.weight.as_slice().expect("standard layout")),
            ));
            let o = vec![layer.outputs()];
            out.push((format!("layer{i}.bias"), o.clone(), f(layer.bias.as_slice().unwrap())));
            if let Some(bn) = &layer.norm {
                for (name, t) in [
                    ("gamma", &bn.gamma),
                    ("beta", &bn.beta),
                    ("running_mean", &bn.running_mean),
                    ("running_var", &bn.running_var),
                ] {
                    out.push((format!("layer{i}.{name}"), o.clone(), f(t.as_slice().unwrap())));
                }
            }
        }
        out
    }

    /// Rebuild from `tensors()` output and the architecture description.
    pub fn from_tensors(
        input_dim: usize,
        cfg: &ReducerConfig,
        tensors: &[(String, Vec<usize>, Vec<f32>)],
    ) -> Result<Self> {
        let mut model = Self::new(input_dim, cfg)?;
        let expected = model.tensors();
        if expected.len() != tensors.len() {
            return Err(ReducerError::Tensor {
                name: "*".into(),
                reason: format!("expected {} tensors, got {}", expected.len(), tensors.len()),
            });
        }
        for ((ename, eshape, _), (name, shape, data)) in expected.iter().zip(tensors) {
            if ename != name || eshape != shape || data.len() != shape.iter().product::<usize>() {
                return Err(ReducerError::Tensor {
                    name: name.clone(),
                    reason: format!("expected `{ename}` with shape {eshape:?}, got {shape:?}"),
                });
            }
        }
        let mut it = tensors.iter().map(|(_, _, d)| d);
        let mut load = |dst: &mut [f64]| {
            let src = it.next().expect("counted above");
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s as f64;
            }
        };
        for layer in &mut model.layers {
            load(layer.weight.as_slice_mut().unwrap());
            load(layer.bias.as_slice_mut().unwrap());
            if let Some(bn) = &mut layer.norm {
                load(bn.gamma.as_slice_mut().unwrap());
                load(bn.beta.as_slice_mut().unwrap());
                load(bn.running_mean.as_slice_mut().unwrap());
                load(bn.running_var.as_slice_mut().unwrap());
            }
        }
        for layer in &model.layers {
            if let Some(bn) = &layer.norm {
                if bn.running_var.iter().any(|&v| !(v > 0.0)) {
                    return Err(ReducerError::Tensor {
                        name: "running_var".into(),
                        reason: "entries must be positive".into(),
                    });
                }
            }
        }
        Ok(model)
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_mse: Vec<f64>,
    /// Infer-mode MSE on the held-out rows; empty when nothing was held out.
    pub validation_mse: Vec<f64>,
    pub epochs: usize,
    pub best_validation_epoch: Option<usize>,
    pub seed: u64,
    pub config: ReducerConfig,
}

struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
    lr: f64,
    weight_decay: f64,
}

impl AdamW {
    fn new(model: &mut Autoencoder, lr: f64, weight_decay: f64) -> Self {
        let sizes: Vec<usize> = model.param_slices_mut().iter().map(|s| s.len()).collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            lr,
            weight_decay,
        }
    }

    fn update(&mut self, model: &mut Autoencoder, grads: &[LayerGrads]) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step);
        let grad_slices = grads.iter().flat_map(|g| g.slices());
        for (((p, g), m), v) in model
            .param_slices_mut()
            .into_iter()
            .zip(grad_slices)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                p[i] -= self.lr * self.weight_decay * p[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Train on the rows of `x` (`N × 2k`). The returned model is in infer mode
/// with parameters rounded to `f32`; the final epoch's model is returned
/// even when an earlier epoch had lower validation loss.
pub fn train_autoencoder(x: ArrayView2<f64>, cfg: &ReducerConfig) -> Result<(Autoencoder, TrainLog)> {
    cfg.validate()?;
    let n = x.nrows();
    if n < cfg.batch_size {
        return Err(ReducerError::TooFewRows {
            rows: n,
            batch: cfg.batch_size,
        });
    }
    if let Some(row) = x.outer_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(ReducerError::NonFiniteInput(row));
    }

    let mut model = Autoencoder::new(x.ncols(), cfg)?;
    let mut split_rng = stream_rng(cfg.seed, 1);
    let mut shuffle_rng = stream_rng(cfg.seed, 2);
    let mut dropout_rng = stream_rng(cfg.seed, 3);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut split_rng);
    let mut n_val = (n as f64 * cfg.validation_fraction).floor() as usize;
    if n - n_val < 2 {
        n_val = 0;
    }
    let mut val_rows = order[..n_val].to_vec();
    val_rows.sort_unstable();
    let mut train_rows = order[n_val..].to_vec();
    train_rows.sort_unstable();
    let validation = x.select(Axis(0), &val_rows);
    let batch = cfg.batch_size.min(train_rows.len());

    let mut opt = AdamW::new(&mut model, cfg.learning_rate, cfg.weight_decay);
    let mut log = TrainLog {
        train_mse: Vec::with_capacity(cfg.epochs),
        validation_mse: Vec::new(),
        epochs: cfg.epochs,
        best_validation_epoch: None,
        seed: cfg.seed,
        config: cfg.clone(),
    };
    let pass = TrainPass {
        dropout: true,
        update_stats: true,
    };
    let mut best = f64::INFINITY;
    for epoch in 0..cfg.epochs {
        model.mode = Mode::Train;
        train_rows.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in train_rows.chunks(batch).enumerate() {
            // a single row cannot be batch-normalized
            if chunk.len() < 2 {
                continue;
            }
            let xb = x.select(Axis(0), chunk);
            let (loss, grads) = model.loss_and_grads(xb.view(), pass, &mut dropout_rng);
            if !loss.is_finite() {
                return Err(ReducerError::NonFiniteLoss { epoch, batch: b });
            }
            opt.update(&mut model, &grads);
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        log.train_mse.push(total / seen as f64);
        model.mode = Mode::Infer;
        if n_val > 0 {
            let v = model.reconstruction_mse(validation.view())?;
            if v < best {
                best = v;
                log.best_validation_epoch = Some(epoch);
            }
            log.validation_mse.push(v);
        }
    }
    model.mode = Mode::Infer;
    model.round_to_f32();
    Ok((model, log))
}

/// Stack equal-width rows into a matrix.
pub fn rows_to_matrix(rows: &[Vec<f64>], width: usize) -> Result<Array2<f64>> {
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(ReducerError::Width {
            expected: width,
            got: r.len(),
        });
    }
    Ok(Array2::from_shape_vec((rows.len(), width), rows.concat()).expect("checked widths"))
}
