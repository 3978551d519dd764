//! Trainable classifier head: three dense layers (ReLU, ReLU, softmax),
//! weighted cross-entropy, analytic gradients and Adam.
//!
//! Parameters are stored as six flat arrays in declaration order
//! `W1, b1, W2, b2, W3, b3`; weight matrices are `outputs x inputs`, row-major.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::ClassWeights;
use crate::derive_seed;
use crate::error::{Error, Result};

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` inside the loss.
pub const PROB_CLIP: f64 = 1e-12;
pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HeadDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
}

impl HeadDims {
    pub fn new(input: usize, hidden1: usize, hidden2: usize, classes: usize) -> Self {
        Self {
            input,
            hidden1,
            hidden2,
            classes,
        }
    }

    /// `(inputs, outputs)` of each dense layer.
    pub fn layers(&self) -> [(usize, usize); 3] {
        [
            (self.input, self.hidden1),
            (self.hidden1, self.hidden2),
            (self.hidden2, self.classes),
        ]
    }

    /// Array lengths in declaration order.
    pub fn array_lens(&self) -> [usize; 6] {
        let [a, b, c] = self.layers();
        [a.0 * a.1, a.1, b.0 * b.1, b.1, c.0 * c.1, c.1]
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden1 == 0 || self.hidden2 == 0 || self.classes == 0 {
            return Err(Error::Parameter(format!("head dims must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// `(D_in + 1) H1 + (H1 + 1) H2 + (H2 + 1) C`.
pub fn count_trainable_params(dims: HeadDims) -> usize {
    (dims.input + 1) * dims.hidden1 + (dims.hidden1 + 1) * dims.hidden2 + (dims.hidden2 + 1) * dims.classes
}

/// Parameter-shaped arrays (gradients, Adam moments).
pub type ParamArrays = Vec<Vec<f64>>;

fn zero_arrays(dims: HeadDims) -> ParamArrays {
    dims.array_lens().iter().map(|&n| vec![0.0; n]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub dims: HeadDims,
    pub params: ParamArrays,
}

struct Activations {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    probs: Vec<f64>,
}

fn dense(weights: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    weights
        .chunks_exact(x.len())
        .zip(bias)
        .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
        .collect()
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|v| v.max(0.0)).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl ClassifierHead {
    pub fn zeros(dims: HeadDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            params: zero_arrays(dims),
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: HeadDims, seed: u64) -> Result<Self> {
        let mut head = Self::zeros(dims)?;
        for (l, (fan_in, fan_out)) in dims.layers().into_iter().enumerate() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, l as u64));
            for w in head.params[2 * l].iter_mut() {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(head)
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.params[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.params[2 * layer + 1]
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims.input {
            return Err(Error::Shape(format!(
                "head expects {} inputs, got {}",
                self.dims.input,
                x.len()
            )));
        }
        Ok(())
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let z1 = dense(self.weights(0), self.bias(0), x);
        let a1 = relu(&z1);
        let z2 = dense(self.weights(1), self.bias(1), &a1);
        let a2 = relu(&z2);
        let probs = softmax(&dense(self.weights(2), self.bias(2), &a2));
        Activations {
            input: x.to_vec(),
            z1,
            a1,
            z2,
            a2,
            probs,
        }
    }

    /// Class probabilities for one feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x).probs)
    }
}

pub fn one_hot(label: usize, classes: usize) -> Result<Vec<f64>> {
    if label >= classes {
        return Err(Error::Label(format!("label {label} outside [0, {classes})")));
    }
    let mut y = vec![0.0; classes];
    y[label] = 1.0;
    Ok(y)
}

fn one_hot_index(y: &[f64]) -> Result<usize> {
    let ones: Vec<usize> = y.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect();
    if ones.len() != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Label(format!("label vector {y:?} is not one-hot")));
    }
    Ok(ones[0])
}

/// Weighted cross-entropy summed over classes:
/// `sum_c -w_c y_c ln p_c - (1 - y_c) ln(1 - p_c)`, with `p` clipped.
pub fn wce_loss(p: &[f64], y: &[f64], omega: &ClassWeights) -> Result<f64> {
    if p.len() != y.len() || p.len() != omega.len() {
        return Err(Error::Shape(format!(
            "loss inputs disagree: {} probabilities, {} labels, {} weights",
            p.len(),
            y.len(),
            omega.len()
        )));
    }
    one_hot_index(y)?;
    Ok(p.iter()
        .zip(y)
        .zip(&omega.omega)
        .map(|((&p, &y), &w)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -w * y * p.ln() - (1.0 - y) * (1.0 - p).ln()
        })
        .sum())
}

fn outer_acc(grad: &mut [f64], delta: &[f64], input: &[f64]) {
    for (row, d) in grad.chunks_exact_mut(input.len()).zip(delta) {
        for (g, x) in row.iter_mut().zip(input) {
            *g += d * x;
        }
    }
}

fn backprop_delta(weights: &[f64], delta: &[f64], z_prev: &[f64]) -> Vec<f64> {
    let n = z_prev.len();
    let mut out = vec![0.0; n];
    for (row, d) in weights.chunks_exact(n).zip(delta) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * d;
        }
    }
    for (o, z) in out.iter_mut().zip(z_prev) {
        if *z <= 0.0 {
            *o = 0.0;
        }
    }
    out
}

/// Accumulates the gradient of one sample's loss into `grads`; returns the loss.
fn accumulate(head: &ClassifierHead, x: &[f64], label: usize, omega: &ClassWeights, grads: &mut ParamArrays) -> Result<f64> {
    head.check_input(x)?;
    let c = head.dims.classes;
    if omega.len() != c {
        return Err(Error::Shape(format!("{} class weights for {c} classes", omega.len())));
    }
    let y = one_hot(label, c)?;
    let act = head.activations(x);
    let loss = wce_loss(&act.probs, &y, omega)?;

    // dL/dp, zero where the clip is active.
    let dp: Vec<f64> = act
        .probs
        .iter()
        .zip(&y)
        .zip(&omega.omega)
        .map(|((&p, &y), &w)| {
            if p < PROB_CLIP || p > 1.0 - PROB_CLIP {
                0.0
            } else {
                -w * y / p + (1.0 - y) / (1.0 - p)
            }
        })
        .collect();
    let mean: f64 = dp.iter().zip(&act.probs).map(|(g, p)| g * p).sum();
    let d3: Vec<f64> = act.probs.iter().zip(&dp).map(|(p, g)| p * (g - mean)).collect();

    outer_acc(&mut grads[4], &d3, &act.a2);
    grads[5].iter_mut().zip(&d3).for_each(|(g, d)| *g += d);
    let d2 = backprop_delta(head.weights(2), &d3, &act.z2);
    outer_acc(&mut grads[2], &d2, &act.a1);
    grads[3].iter_mut().zip(&d2).for_each(|(g, d)| *g += d);
    let d1 = backprop_delta(head.weights(1), &d2, &act.z1);
    outer_acc(&mut grads[0], &d1, &act.input);
    grads[1].iter_mut().zip(&d1).for_each(|(g, d)| *g += d);
    Ok(loss)
}

/// Loss and analytic gradient of one sample.
pub fn head_gradients(head: &ClassifierHead, x: &[f64], label: usize, omega: &ClassWeights) -> Result<(f64, ParamArrays)> {
    let mut grads = zero_arrays(head.dims);
    let loss = accumulate(head, x, label, omega, &mut grads)?;
    Ok((loss, grads))
}

/// Mean loss, mean gradient and per-sample losses over a batch, summed in input order.
pub fn batch_gradients(
    head: &ClassifierHead,
    inputs: &[&[f64]],
    labels: &[usize],
    omega: &ClassWeights,
) -> Result<(Vec<f64>, ParamArrays)> {
    if inputs.len() != labels.len() || inputs.is_empty() {
        return Err(Error::Shape(format!(
            "batch of {} inputs and {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let mut grads = zero_arrays(head.dims);
    let losses = inputs
        .iter()
        .zip(labels)
        .map(|(x, &l)| accumulate(head, x, l, omega, &mut grads))
        .collect::<Result<Vec<f64>>>()?;
    let scale = 1.0 / inputs.len() as f64;
    grads.iter_mut().flatten().for_each(|g| *g *= scale);
    Ok((losses, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParamArrays,
    pub v: ParamArrays,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, dims: HeadDims) -> Self {
        Self {
            config,
            m: zero_arrays(dims),
            v: zero_arrays(dims),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut ParamArrays, grads: &ParamArrays) -> Result<()> {
    let shapes_match = params.len() == grads.len()
        && params.len() == state.m.len()
        && params
            .iter()
            .zip(grads)
            .zip(&state.m)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_match {
        return Err(Error::Shape("Adam state, parameters and gradients differ in shape".into()));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

const HEAD_VERSION: u16 = 1;

/// `HEAD` checkpoint: version u16, dims as 4 x u32, parameter arrays as f32,
/// then Adam first moments, second moments (same layout) and step count u64.
/// Everything little-endian.
pub fn encode_checkpoint(head: &ClassifierHead, state: &AdamState) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(b"HEAD");
    buf.extend_from_slice(&HEAD_VERSION.to_le_bytes());
    let d = head.dims;
    for v in [d.input, d.hidden1, d.hidden2, d.classes] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for arrays in [&head.params, &state.m, &state.v] {
        for v in arrays.iter().flatten() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&state.t.to_le_bytes());
    buf
}

pub fn decode_checkpoint(bytes: &[u8], config: AdamConfig) -> Result<(ClassifierHead, AdamState)> {
    let fail = |msg: &str| Error::Format(format!("checkpoint: {msg}"));
    if bytes.len() < 22 || &bytes[..4] != b"HEAD" {
        return Err(fail("missing HEAD magic"));
    }
    if u16::from_le_bytes([bytes[4], bytes[5]]) != HEAD_VERSION {
        return Err(fail("unsupported version"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    let dims = HeadDims::new(dim(0), dim(1), dim(2), dim(3));
    dims.validate()?;
    let n = count_trainable_params(dims);
    if bytes.len() != 22 + 3 * n * 4 + 8 {
        return Err(fail("payload length does not match dims"));
    }
    let mut floats = bytes[22..22 + 3 * n * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64);
    let mut read_arrays = || -> ParamArrays {
        dims.array_lens()
            .iter()
            .map(|&len| floats.by_ref().take(len).collect())
            .collect()
    };
    let params = read_arrays();
    let m = read_arrays();
    let v = read_arrays();
    let t = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    Ok((ClassifierHead { dims, params }, AdamState { config, m, v, t }))
}
