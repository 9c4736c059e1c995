//! Small fully connected regression network.
//!
//! `7 → hidden… → 3`, tanh on hidden layers and a linear output layer,
//! trained with Adam on `½·mean‖y − ŷ‖²`. Inputs are standardized with
//! per-feature statistics stored alongside the weights. Everything is
//! single-threaded and bit-deterministic for a given seed.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_NAMES, N_FEATURES};
use crate::linalg::Vec3;

const MAGIC: &[u8; 4] = b"DWNN";
const VERSION: u32 = 1;
const N_OUT: usize = 3;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("not a network file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported network file version {0}")]
    BadVersion(u32),
    #[error("layer shapes are inconsistent: {0}")]
    Shape(String),
    #[error("feature order mismatch: file has {found:?}, expected {expected:?}")]
    FeatureOrder { found: Vec<String>, expected: Vec<String> },
    #[error("network file is truncated or corrupt")]
    Truncated,
    #[error("only tanh networks can be saved")]
    UnsupportedActivation,
    #[error("training set and validation set must be non-empty")]
    EmptyData,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (learning rate {lr})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },
    #[error("invalid Adam configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(std::io::Error),
}

impl From<std::io::Error> for NetError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            NetError::Truncated
        } else {
            NetError::Io(e)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation value `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub feature_order: Vec<String>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self, NetError> {
        if layer_sizes.len() < 3 {
            return Err(NetError::Spec("need at least one hidden layer".into()));
        }
        if layer_sizes[0] != N_FEATURES || *layer_sizes.last().expect("non-empty") != N_OUT {
            return Err(NetError::Spec(format!("layers must start at {N_FEATURES} and end at {N_OUT}, got {layer_sizes:?}")));
        }
        if layer_sizes.contains(&0) {
            return Err(NetError::Spec("layer sizes must be positive".into()));
        }
        Ok(Self { layer_sizes, activation, feature_order: FEATURE_NAMES.iter().map(|s| s.to_string()).collect() })
    }

    /// `hidden` tanh layers of `width` neurons.
    pub fn tanh(hidden: usize, width: usize) -> Self {
        let mut sizes = vec![N_FEATURES];
        sizes.extend(std::iter::repeat_n(width, hidden));
        sizes.push(N_OUT);
        Self::new(sizes, Activation::Tanh).expect("valid by construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

/// Xavier-uniform weights, zero biases.
pub fn init_weights(spec: &MlpSpec, seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .layer_sizes
        .windows(2)
        .map(|io| {
            let (fan_in, fan_out) = (io[0], io[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-a..a));
            Layer { w, b: DVector::zeros(fan_out) }
        })
        .collect();
    Mlp { spec: spec.clone(), layers }
}

impl Mlp {
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self, NetError> {
        check_shapes(&spec.layer_sizes, &layers)?;
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters, layer by layer: weights (column-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    /// Forward pass on columns of `x` (`in × batch`); returns every layer's activations.
    fn forward_all(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * &acts[k];
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            if k < last {
                z.apply(|v| *v = self.spec.activation.apply(*v));
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_all(x).pop().expect("at least one layer")
    }

    pub fn forward(&self, x: &FeatureVector) -> Vec3 {
        let out = self.forward_batch(&DMatrix::from_column_slice(N_FEATURES, 1, x));
        Vec3::new(out[0], out[1], out[2])
    }

    /// Loss `½·mean‖ŷ − y‖²` and its gradient with respect to every parameter.
    pub fn backward(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<Layer>) {
        let acts = self.forward_all(x);
        let batch = x.ncols() as f64;
        let mut delta = acts.last().expect("output") - y;
        let loss = 0.5 * delta.norm_squared() / batch;
        delta /= batch;
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let gw = &delta * acts[k].transpose();
            let gb = delta.column_sum();
            if k > 0 {
                let mut next = self.layers[k].w.transpose() * &delta;
                next.zip_apply(&acts[k], |d, a| *d *= self.spec.activation.derivative_from_output(a));
                delta = next;
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        (loss, grads)
    }
}

fn check_shapes(sizes: &[usize], layers: &[Layer]) -> Result<(), NetError> {
    if layers.len() + 1 != sizes.len() {
        return Err(NetError::Shape(format!("{} layers for sizes {sizes:?}", layers.len())));
    }
    for (k, l) in layers.iter().enumerate() {
        if l.w.ncols() != sizes[k] || l.w.nrows() != sizes[k + 1] || l.b.len() != sizes[k + 1] {
            return Err(NetError::Shape(format!(
                "layer {k} is {}×{} with {} biases, expected {}×{}",
                l.w.nrows(),
                l.w.ncols(),
                l.b.len(),
                sizes[k + 1],
                sizes[k]
            )));
        }
    }
    Ok(())
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.w.as_slice());
        out.extend_from_slice(l.b.as_slice());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, batch: 1024, epochs: 10, seed: 0 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.lr > 0.0) {
            return Err(NetError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NetError::Config("decay rates must lie in [0, 1)".into()));
        }
        if self.batch == 0 {
            return Err(NetError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        params[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Per-feature mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean: FeatureVector,
    pub std: FeatureVector,
}

impl Standardization {
    pub fn identity() -> Self {
        Self { mean: [0.0; N_FEATURES], std: [1.0; N_FEATURES] }
    }

    /// Constant features (std < 1e-12) keep unit scale.
    pub fn fit<'a>(xs: impl Iterator<Item = &'a FeatureVector>) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0; N_FEATURES];
        let mut sq = [0.0; N_FEATURES];
        for x in xs {
            n += 1;
            for k in 0..N_FEATURES {
                sum[k] += x[k];
                sq[k] += x[k] * x[k];
            }
        }
        let n = n.max(1) as f64;
        let mut mean = [0.0; N_FEATURES];
        let mut std = [1.0; N_FEATURES];
        for k in 0..N_FEATURES {
            mean[k] = sum[k] / n;
            let var = (sq[k] / n - mean[k] * mean[k]).max(0.0);
            let s = var.sqrt();
            std[k] = if s < 1e-12 { 1.0 } else { s };
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &FeatureVector) -> FeatureVector {
        std::array::from_fn(|k| (x[k] - self.mean[k]) / self.std[k])
    }
}

/// A trained network: weights plus input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub mlp: Mlp,
    pub standardization: Standardization,
}

impl Network {
    pub fn predict(&self, x: &FeatureVector) -> Vec3 {
        self.mlp.forward(&self.standardization.apply(x))
    }

    /// Batched prediction; columns of the result follow `xs`.
    pub fn predict_batch(&self, xs: &[FeatureVector]) -> Vec<Vec3> {
        if xs.is_empty() {
            return Vec::new();
        }
        let m = feature_matrix(xs.iter(), &self.standardization);
        let out = self.mlp.forward_batch(&m);
        out.column_iter().map(|c| Vec3::new(c[0], c[1], c[2])).collect()
    }
}

fn feature_matrix<'a>(xs: impl Iterator<Item = &'a FeatureVector>, s: &Standardization) -> DMatrix<f64> {
    let data: Vec<f64> = xs.flat_map(|x| s.apply(x)).collect();
    DMatrix::from_vec(N_FEATURES, data.len() / N_FEATURES, data)
}

/// Anything usable as a supervised example.
pub trait Example {
    fn features(&self) -> &FeatureVector;
    fn target(&self) -> Vec3;
}

impl Example for (FeatureVector, Vec3) {
    fn features(&self) -> &FeatureVector {
        &self.0
    }

    fn target(&self) -> Vec3 {
        self.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub last: Network,
    pub best: Network,
    /// Epoch 0 is the untrained network.
    pub history: Vec<EpochLoss>,
}

/// Mean squared error per output component.
pub fn mse<E: Example>(net: &Network, data: &[E]) -> f64 {
    const CHUNK: usize = 4096;
    let mut total = 0.0;
    for chunk in data.chunks(CHUNK) {
        let x = feature_matrix(chunk.iter().map(Example::features), &net.standardization);
        let out = net.mlp.forward_batch(&x);
        for (c, e) in out.column_iter().zip(chunk) {
            let t = e.target();
            total += (c[0] - t.x).powi(2) + (c[1] - t.y).powi(2) + (c[2] - t.z).powi(2);
        }
    }
    total / (3 * data.len().max(1)) as f64
}

pub fn train<E: Example>(spec: &MlpSpec, train_set: &[E], val_set: &[E], cfg: &AdamConfig) -> Result<TrainResult, NetError> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NetError::EmptyData);
    }
    let standardization = Standardization::fit(train_set.iter().map(Example::features));
    let mut net = Network { mlp: init_weights(spec, cfg.seed), standardization };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut state = AdamState::new(net.mlp.n_params());
    let mut params = net.mlp.params();
    let mut history = vec![EpochLoss { epoch: 0, train_mse: mse(&net, train_set), val_mse: mse(&net, val_set) }];
    let mut best = net.clone();
    let mut best_val = history[0].val_mse;
    log::info!("epoch 0: train {:.6e} val {:.6e}", history[0].train_mse, history[0].val_mse);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (batch_idx, idx) in order.chunks(cfg.batch).enumerate() {
            let x = feature_matrix(idx.iter().map(|&i| train_set[i].features()), &standardization);
            let y = DMatrix::from_fn(N_OUT, idx.len(), |r, c| train_set[idx[c]].target()[r]);
            let (loss, grads) = net.mlp.backward(&x, &y);
            if !loss.is_finite() {
                return Err(NetError::NonFiniteLoss { epoch, batch: batch_idx, lr: cfg.lr });
            }
            adam_step(&mut params, &flatten(&grads), &mut state, cfg);
            net.mlp.set_params(&params);
        }
        let entry = EpochLoss { epoch, train_mse: mse(&net, train_set), val_mse: mse(&net, val_set) };
        if !entry.train_mse.is_finite() || !entry.val_mse.is_finite() {
            return Err(NetError::NonFiniteLoss { epoch, batch: order.len().div_ceil(cfg.batch), lr: cfg.lr });
        }
        log::info!("epoch {epoch}: train {:.6e} val {:.6e}", entry.train_mse, entry.val_mse);
        if entry.val_mse < best_val {
            best_val = entry.val_mse;
            best = net.clone();
        }
        history.push(entry);
    }
    Ok(TrainResult { last: net, best, history })
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, NetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64, NetError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn save_network<W: Write>(mut w: W, net: &Network) -> Result<(), NetError> {
    if net.mlp.spec.activation != Activation::Tanh {
        return Err(NetError::UnsupportedActivation);
    }
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, net.mlp.layers.len() as u32)?;
    for l in &net.mlp.layers {
        put_u32(&mut w, l.w.nrows() as u32)?;
        put_u32(&mut w, l.w.ncols() as u32)?;
        for r in 0..l.w.nrows() {
            for c in 0..l.w.ncols() {
                put_f64(&mut w, l.w[(r, c)])?;
            }
        }
        for &b in l.b.iter() {
            put_f64(&mut w, b)?;
        }
    }
    for k in 0..N_FEATURES {
        put_f64(&mut w, net.standardization.mean[k])?;
        put_f64(&mut w, net.standardization.std[k])?;
    }
    let order = &net.mlp.spec.feature_order;
    put_u32(&mut w, order.len() as u32)?;
    for name in order {
        put_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
    }
    Ok(())
}

const MAX_LAYER_DIM: u32 = 1 << 16;

pub fn load_network<R: Read>(mut r: R) -> Result<Network, NetError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NetError::BadMagic(magic));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(NetError::BadVersion(version));
    }
    let n_layers = get_u32(&mut r)?;
    if n_layers == 0 || n_layers > 1024 {
        return Err(NetError::Shape(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers as usize);
    let mut sizes = Vec::new();
    for k in 0..n_layers {
        let rows = get_u32(&mut r)?;
        let cols = get_u32(&mut r)?;
        if rows == 0 || cols == 0 || rows > MAX_LAYER_DIM || cols > MAX_LAYER_DIM {
            return Err(NetError::Shape(format!("layer {k} has shape {rows}×{cols}")));
        }
        let (rows, cols) = (rows as usize, cols as usize);
        if k == 0 {
            sizes.push(cols);
        } else if sizes[k as usize] != cols {
            return Err(NetError::Shape(format!("layer {k} expects {cols} inputs but receives {}", sizes[k as usize])));
        }
        sizes.push(rows);
        let mut w = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                w[(i, j)] = get_f64(&mut r)?;
            }
        }
        let mut b = DVector::zeros(rows);
        for i in 0..rows {
            b[i] = get_f64(&mut r)?;
        }
        layers.push(Layer { w, b });
    }
    let mut mean = [0.0; N_FEATURES];
    let mut std = [0.0; N_FEATURES];
    for k in 0..N_FEATURES {
        mean[k] = get_f64(&mut r)?;
        std[k] = get_f64(&mut r)?;
    }
    let count = get_u32(&mut r)?;
    if count > 64 {
        return Err(NetError::Truncated);
    }
    let mut order = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = get_u32(&mut r)?;
        if len > 256 {
            return Err(NetError::Truncated);
        }
        let mut buf = vec![0u8; len as usize];
        r.read_exact(&mut buf)?;
        order.push(String::from_utf8(buf).map_err(|_| NetError::Truncated)?);
    }
    let expected: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    if order != expected {
        return Err(NetError::FeatureOrder { found: order, expected });
    }
    let spec = MlpSpec::new(sizes, Activation::Tanh).map_err(|e| NetError::Shape(e.to_string()))?;
    let all_finite = layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
        && mean.iter().chain(std.iter()).all(|v| v.is_finite());
    if !all_finite {
        return Err(NetError::Truncated);
    }
    Ok(Network { mlp: Mlp::from_layers(spec, layers)?, standardization: Standardization { mean, std } })
}
