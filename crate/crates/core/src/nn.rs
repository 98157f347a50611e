//! Minimal fully connected network with exact reverse-mode gradients with
//! respect to both parameters and inputs, plus an AdamW optimizer.
//!
//! The input gradient is a first-class output of [`Mlp::backward`]: the
//! MPC layer chains it through multi-step rollouts to differentiate a
//! trajectory cost with respect to the action sequence.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected network. Hidden layers use ReLU, the output layer is
/// linear. Weight matrices are stored row-major, one flat vector per
/// layer: `weights[l]` has shape `layer_dims[l + 1] x layer_dims[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    hidden_activation: Activation,
    output_activation: Activation,
}

/// Per-layer pre-activations and activations from one forward pass,
/// consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_dims: Vec<usize>,
    /// `activations[0]` is the input; `activations[l + 1]` the output of
    /// layer `l`.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache has >= 2 levels")
    }

    /// Pre-activation vectors per layer, useful for checking how close a
    /// forward pass runs to the ReLU kinks.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre_activations
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

/// Parameter gradients with the same shapes as [`Mlp`] weights/biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            for x in w {
                *x *= factor;
            }
        }
        for b in &mut self.biases {
            for x in b {
                *x *= factor;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    /// Initialize with weights uniform in `±sqrt(6 / fan_in)` and zero
    /// biases. Deterministic for a given seed.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        Self::validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
        })
    }

    /// Build from explicit parameters (e.g., loaded from disk).
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::validate_dims(&layer_dims)?;
        let layers = layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::Dim(format!(
                "expected {layers} weight/bias layers, got {}/{}",
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in layer_dims.windows(2).enumerate() {
            if weights[l].len() != pair[0] * pair[1] {
                return Err(Error::Dim(format!(
                    "layer {l} weights have {} entries, expected {}",
                    weights[l].len(),
                    pair[0] * pair[1]
                )));
            }
            if biases[l].len() != pair[1] {
                return Err(Error::Dim(format!(
                    "layer {l} biases have {} entries, expected {}",
                    biases[l].len(),
                    pair[1]
                )));
            }
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
        })
    }

    fn validate_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least input and output dims, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {layer_dims:?}")));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated dims")
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn params_finite(&self) -> bool {
        self.weights.iter().flatten().all(|x| x.is_finite())
            && self.biases.iter().flatten().all(|x| x.is_finite())
    }

    /// Copy all parameters into one flat vector, layer by layer, weights
    /// before biases. Inverse of [`Mlp::assign_params`].
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn assign_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dim(format!(
                "flat parameter vector has {} entries, net has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let nw = w.len();
            w.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = b.len();
            b.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    fn activation_for_layer(&self, layer: usize) -> Activation {
        if layer + 2 == self.layer_dims.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.output().to_vec())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::Dim(format!(
                "input has {} entries, net expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut activations = vec![x.to_vec()];
        let mut pre_activations = Vec::with_capacity(self.weights.len());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let input = activations.last().expect("non-empty");
            let mut z = b.clone();
            for row in 0..n_out {
                let mut acc = 0.0;
                let w_row = &w[row * n_in..(row + 1) * n_in];
                for (wi, xi) in w_row.iter().zip(input) {
                    acc += wi * xi;
                }
                z[row] += acc;
            }
            let act = self.activation_for_layer(l);
            let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardCache {
            layer_dims: self.layer_dims.clone(),
            activations,
            pre_activations,
        })
    }

    /// Reverse-mode gradients of `y . dy` for a forward pass recorded in
    /// `cache`. Returns parameter gradients and the gradient with respect
    /// to the network input.
    pub fn backward(&self, cache: &ForwardCache, dy: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        if cache.layer_dims != self.layer_dims {
            return Err(Error::Dim(format!(
                "cache built for dims {:?}, net has {:?}",
                cache.layer_dims, self.layer_dims
            )));
        }
        if dy.len() != self.output_dim() {
            return Err(Error::Dim(format!(
                "output gradient has {} entries, net produces {}",
                dy.len(),
                self.output_dim()
            )));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut g = dy.to_vec();
        for l in (0..self.weights.len()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let act = self.activation_for_layer(l);
            let z = &cache.pre_activations[l];
            let input = &cache.activations[l];
            let gz: Vec<f64> = g
                .iter()
                .zip(z)
                .map(|(&gi, &zi)| gi * act.grad(zi))
                .collect();
            for (row, &gzi) in gz.iter().enumerate() {
                grads.biases[l][row] = gzi;
                let w_row = &mut grads.weights[l][row * n_in..(row + 1) * n_in];
                for (col, slot) in w_row.iter_mut().enumerate() {
                    *slot = gzi * input[col];
                }
            }
            let mut g_prev = vec![0.0; n_in];
            let w = &self.weights[l];
            for row in 0..n_out {
                let w_row = &w[row * n_in..(row + 1) * n_in];
                for (col, wi) in w_row.iter().enumerate() {
                    g_prev[col] += wi * gz[row];
                }
            }
            g = g_prev;
        }
        Ok((grads, g))
    }
}

/// First/second moment accumulators and hyperparameters for AdamW.
/// `weight_decay = 0` recovers plain Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamWState {
    pub fn new(param_len: usize) -> Self {
        Self {
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }

    pub fn with_weight_decay(param_len: usize, weight_decay: f64) -> Self {
        Self {
            weight_decay,
            ..Self::new(param_len)
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One decoupled-weight-decay Adam update with bias correction, in place.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamWState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dim(format!(
            "adamw shapes disagree: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * (m_hat / (v_hat.sqrt() + state.epsilon) + state.weight_decay * params[i]);
    }
    Ok(())
}

/// Supervised pairs with uniform dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl RegressionDataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Dim(format!(
                "{} inputs vs {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|x| x.len() != first.len()) {
                return Err(Error::Dim("ragged input dimensions".into()));
            }
        }
        if let Some(first) = targets.first() {
            if targets.iter().any(|t| t.len() != first.len()) {
                return Err(Error::Dim("ragged target dimensions".into()));
            }
        }
        if inputs.iter().flatten().any(|x| !x.is_finite())
            || targets.iter().flatten().any(|t| !t.is_finite())
        {
            return Err(Error::NonFinite(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

/// Mini-batch MSE training with seeded shuffling each epoch. Returns one
/// mean-epoch-loss entry per epoch.
pub fn train_regression(
    net: &mut Mlp,
    data: &RegressionDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Empty("regression dataset is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config(format!(
            "epochs and batch_size must be positive, got {} and {}",
            cfg.epochs, cfg.batch_size
        )));
    }
    if data.inputs[0].len() != net.input_dim() || data.targets[0].len() != net.output_dim() {
        return Err(Error::Dim(format!(
            "dataset dims {}->{} vs net dims {}->{}",
            data.inputs[0].len(),
            data.targets[0].len(),
            net.input_dim(),
            net.output_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AdamWState::with_weight_decay(net.param_count(), cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let out_dim = net.output_dim() as f64;
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = MlpGrads::zeros_like(net);
            for &i in batch {
                let cache = net.forward_cached(&data.inputs[i])?;
                let residual: Vec<f64> = cache
                    .output()
                    .iter()
                    .zip(&data.targets[i])
                    .map(|(y, t)| y - t)
                    .collect();
                loss_sum += residual.iter().map(|r| r * r).sum::<f64>() / out_dim;
                let dy: Vec<f64> = residual.iter().map(|r| 2.0 * r / out_dim).collect();
                let (g, _) = net.backward(&cache, &dy)?;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            let mut flat = net.flatten_params();
            adamw_step(&mut flat, &grads.flatten(), &mut state, cfg.lr)?;
            net.assign_params(&flat)?;
        }
        if !net.params_finite() {
            return Err(Error::NonFinite(
                "training produced non-finite parameters".into(),
            ));
        }
        history.push(loss_sum / data.len() as f64);
    }
    Ok(history)
}
