//! Small dense networks with explicit parameter and gradient buffers.
//!
//! Every learned component in the crate (view encoders, reasoners, decoders,
//! Q-functions) is a [`DenseNet`]. Parameters live in one flat vector; layer
//! `l` stores an `out × in` row-major weight block followed by `out` biases.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const PARAM_MAGIC: &[u8; 4] = b"DWP1";
const PARAM_VERSION: u32 = 1;

pub const ADAM_LR: f64 = 1e-3;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("bad network shape: {0}")]
    BadShape(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("corrupt parameter file: {0}")]
    CorruptParams(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ApproxError>;

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(ApproxError::ShapeMismatch { expected, got })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
            Activation::Sigmoid => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            2 => Activation::Identity,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }
}

/// Gradient of a scalar loss with respect to a net's flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer(Vec<f64>);

impl GradBuffer {
    pub fn zeros(len: usize) -> Self {
        GradBuffer(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn fill_zero(&mut self) {
        self.0.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

/// Post-activation values of every layer, recorded by [`DenseNet::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `layers[0]` is the input, `layers[last]` is the network output.
    layers: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("trace holds at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.layers[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    /// Offset of each layer's weight block inside `params`.
    layout: Vec<usize>,
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

fn validate_shape(layer_sizes: &[usize], activations: &[Activation]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(ApproxError::BadShape(format!(
            "need at least 2 layer widths, got {}",
            layer_sizes.len()
        )));
    }
    if let Some(i) = layer_sizes.iter().position(|&w| w == 0) {
        return Err(ApproxError::BadShape(format!("layer {i} has width 0")));
    }
    if activations.len() != layer_sizes.len() - 1 {
        return Err(ApproxError::BadShape(format!(
            "{} activations for {} weight layers",
            activations.len(),
            layer_sizes.len() - 1
        )));
    }
    Ok(())
}

fn layout_for(layer_sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(layer_sizes.len() - 1);
    let mut at = 0;
    for w in layer_sizes.windows(2) {
        offsets.push(at);
        at += (w[0] + 1) * w[1];
    }
    offsets
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases, deterministic per seed.
    pub fn init(layer_sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activations)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in 0..net.n_layers() {
            let (fan_in, fan_out) = (layer_sizes[layer], layer_sizes[layer + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let start = net.layout[layer];
            for p in &mut net.params[start..start + fan_in * fan_out] {
                *p = rng.gen_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        validate_shape(layer_sizes, activations)?;
        Ok(DenseNet {
            layer_sizes: layer_sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; param_count(layer_sizes)],
            layout: layout_for(layer_sizes),
        })
    }

    pub fn from_params(
        layer_sizes: &[usize],
        activations: &[Activation],
        params: Vec<f64>,
    ) -> Result<Self> {
        validate_shape(layer_sizes, activations)?;
        check_len(param_count(layer_sizes), params.len())?;
        Ok(DenseNet {
            layer_sizes: layer_sizes.to_vec(),
            activations: activations.to_vec(),
            params,
            layout: layout_for(layer_sizes),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grad(&self) -> GradBuffer {
        GradBuffer::zeros(self.params.len())
    }

    fn weight_index(&self, layer: usize, out: usize, input: usize) -> usize {
        self.layout[layer] + out * self.layer_sizes[layer] + input
    }

    fn bias_index(&self, layer: usize, out: usize) -> usize {
        self.layout[layer] + self.layer_sizes[layer] * self.layer_sizes[layer + 1] + out
    }

    pub fn weight(&self, layer: usize, out: usize, input: usize) -> f64 {
        self.params[self.weight_index(layer, out, input)]
    }

    pub fn set_weight(&mut self, layer: usize, out: usize, input: usize, value: f64) {
        let i = self.weight_index(layer, out, input);
        self.params[i] = value;
    }

    pub fn bias(&self, layer: usize, out: usize) -> f64 {
        self.params[self.bias_index(layer, out)]
    }

    pub fn set_bias(&mut self, layer: usize, out: usize, value: f64) {
        let i = self.bias_index(layer, out);
        self.params[i] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn layer_forward(&self, layer: usize, input: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let act = self.activations[layer];
        let w = &self.params[self.layout[layer]..];
        let bias = &w[n_in * n_out..n_in * n_out + n_out];
        (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                let pre = row.iter().zip(input).fold(bias[o], |acc, (a, b)| acc + a * b);
                act.apply(pre)
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_width(), x.len())?;
        let mut a = x.to_vec();
        for layer in 0..self.n_layers() {
            a = self.layer_forward(layer, &a);
        }
        Ok(a)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        check_len(self.input_width(), x.len())?;
        let mut layers = Vec::with_capacity(self.layer_sizes.len());
        layers.push(x.to_vec());
        for layer in 0..self.n_layers() {
            let next = self.layer_forward(layer, layers.last().unwrap());
            layers.push(next);
        }
        Ok(Trace { layers })
    }

    /// Reverse-mode pass over a recorded trace. Parameter gradients are
    /// *added* into `grads`; the gradient with respect to the input is returned.
    pub fn backward_into(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grads: &mut GradBuffer,
    ) -> Result<Vec<f64>> {
        check_len(self.output_width(), upstream.len())?;
        check_len(self.params.len(), grads.len())?;
        check_len(self.layer_sizes.len(), trace.layers.len())?;
        let mut delta = upstream.to_vec();
        for layer in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
            let act = self.activations[layer];
            let out = &trace.layers[layer + 1];
            let input = &trace.layers[layer];
            for (d, &y) in delta.iter_mut().zip(out) {
                *d *= act.derivative_from_output(y);
            }
            let start = self.layout[layer];
            let w = &self.params[start..start + n_in * n_out];
            let g = &mut grads.0[start..start + (n_in + 1) * n_out];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                let grow = &mut g[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += d * input[i];
                    next[i] += d * row[i];
                }
                g[n_in * n_out + o] += d;
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Gradients of `upstream · forward(x)` with respect to parameters and input.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(GradBuffer, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        let mut grads = self.zero_grad();
        let input_grad = self.backward_into(&trace, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PARAM_MAGIC)?;
        w.write_all(&PARAM_VERSION.to_le_bytes())?;
        w.write_all(&(self.layer_sizes.len() as u32).to_le_bytes())?;
        for &s in &self.layer_sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for a in &self.activations {
            w.write_all(&[a.code()])?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        fn corrupt(e: std::io::Error) -> ApproxError {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                ApproxError::CorruptParams("truncated".into())
            } else {
                ApproxError::Io(e)
            }
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(corrupt)?;
        if &magic != PARAM_MAGIC {
            return Err(ApproxError::CorruptParams("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(corrupt)?;
        let version = u32::from_le_bytes(b4);
        if version != PARAM_VERSION {
            return Err(ApproxError::CorruptParams(format!("unsupported version {version}")));
        }
        r.read_exact(&mut b4).map_err(corrupt)?;
        let n_sizes = u32::from_le_bytes(b4) as usize;
        if !(2..=1024).contains(&n_sizes) {
            return Err(ApproxError::CorruptParams(format!("{n_sizes} layer widths")));
        }
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            r.read_exact(&mut b4).map_err(corrupt)?;
            sizes.push(u32::from_le_bytes(b4) as usize);
        }
        let mut acts = Vec::with_capacity(n_sizes - 1);
        for _ in 0..n_sizes - 1 {
            let mut b = [0u8; 1];
            r.read_exact(&mut b).map_err(corrupt)?;
            acts.push(Activation::from_code(b[0]).ok_or_else(|| {
                ApproxError::CorruptParams(format!("unknown activation code {}", b[0]))
            })?);
        }
        validate_shape(&sizes, &acts).map_err(|e| ApproxError::CorruptParams(e.to_string()))?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(corrupt)?;
        let n_params = u64::from_le_bytes(b8) as usize;
        if n_params != param_count(&sizes) {
            return Err(ApproxError::CorruptParams(format!(
                "layout needs {} params, header says {n_params}",
                param_count(&sizes)
            )));
        }
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            r.read_exact(&mut b8).map_err(corrupt)?;
            params.push(f64::from_le_bytes(b8));
        }
        Self::from_params(&sizes, &acts, params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let net = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(ApproxError::CorruptParams(format!("{} trailing bytes", cursor.len())));
        }
        Ok(net)
    }
}

/// Mean squared error and its gradient `2(pred − target)/n`.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(pred.len(), target.len())?;
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Adam moments for one parameter vector. Hyperparameters are fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn for_net(net: &DenseNet) -> Self {
        Self::new(net.n_params())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len(self.m.len(), params.len())?;
        check_len(self.m.len(), grads.len())?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= ADAM_LR * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}

pub fn adam_step(net: &mut DenseNet, grads: &GradBuffer, state: &mut AdamState) -> Result<()> {
    state.update(&mut net.params, &grads.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(w: f64, b: f64) -> DenseNet {
        DenseNet::from_params(&[1, 1], &[Activation::Identity], vec![w, b]).unwrap()
    }

    #[test]
    fn init_two_by_one_has_three_params_and_zero_bias() {
        let net = DenseNet::init(&[2, 1], &[Activation::Identity], 7).unwrap();
        assert_eq!(net.n_params(), 3);
        assert_eq!(net.bias(0, 0), 0.0);
        let limit = (6.0f64 / 3.0).sqrt();
        assert!(net.params()[..2].iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let sizes = [4, 8, 3];
        let acts = [Activation::Tanh, Activation::Identity];
        let a = DenseNet::init(&sizes, &acts, 11).unwrap();
        let b = DenseNet::init(&sizes, &acts, 11).unwrap();
        let c = DenseNet::init(&sizes, &acts, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn bad_shapes_rejected() {
        assert!(matches!(
            DenseNet::init(&[3], &[], 0),
            Err(ApproxError::BadShape(_))
        ));
        assert!(matches!(
            DenseNet::init(&[3, 0], &[Activation::Relu], 0),
            Err(ApproxError::BadShape(_))
        ));
        assert!(matches!(
            DenseNet::init(&[3, 2], &[], 0),
            Err(ApproxError::BadShape(_))
        ));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = DenseNet::zeros(&[3, 4, 2], &[Activation::Identity; 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_weight_passes_input_through() {
        let mut net = DenseNet::zeros(&[3, 3], &[Activation::Identity]).unwrap();
        for i in 0..3 {
            net.set_weight(0, i, i, 1.0);
        }
        assert_eq!(net.forward(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn hand_set_sum() {
        let net =
            DenseNet::from_params(&[2, 1], &[Activation::Identity], vec![1.0, 1.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[2.0, 3.0]).unwrap(), vec![5.0]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = linear(1.0, 0.0);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(ApproxError::ShapeMismatch { expected: 1, got: 2 })
        ));
        assert!(net.backward(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn linear_backward_is_calculus() {
        let net = linear(3.0, -1.0);
        let (g, dx) = net.backward(&[2.5], &[1.0]).unwrap();
        assert_eq!(g.as_slice(), &[2.5, 1.0]);
        assert_eq!(dx, vec![3.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = DenseNet::init(&[3, 5, 2], &[Activation::Tanh, Activation::Sigmoid], 3).unwrap();
        let (g, dx) = net.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_basics() {
        let (l, g) = mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        let (l, g) = mse(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g, vec![1.0, 1.0]);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_grad_matches_finite_differences() {
        let pred = [0.3, -1.2, 2.0, 0.7];
        let target = [0.0, 0.5, 1.5, -0.2];
        let (_, g) = mse(&pred, &target).unwrap();
        let h = 1e-6;
        for i in 0..pred.len() {
            let mut p = pred;
            p[i] += h;
            let up = mse(&p, &target).unwrap().0;
            p[i] -= 2.0 * h;
            let down = mse(&p, &target).unwrap().0;
            let numeric = (up - down) / (2.0 * h);
            assert!((numeric - g[i]).abs() < 1e-8, "coord {i}: {numeric} vs {}", g[i]);
        }
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let mut net = DenseNet::init(&[2, 2], &[Activation::Tanh], 5).unwrap();
        let before = net.params().to_vec();
        let mut st = AdamState::for_net(&net);
        let zero = net.zero_grad();
        adam_step(&mut net, &zero, &mut st).unwrap();
        assert_eq!(net.params(), &before[..]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let mut net = DenseNet::from_params(
            &[2, 1],
            &[Activation::Identity],
            vec![0.5, -0.5, 0.1],
        )
        .unwrap();
        let before = net.params().to_vec();
        let grads = GradBuffer(vec![2.0, -0.01, 0.3]);
        let mut st = AdamState::for_net(&net);
        adam_step(&mut net, &grads, &mut st).unwrap();
        for i in 0..3 {
            let delta = net.params()[i] - before[i];
            let expected = -ADAM_LR * grads.0[i].signum();
            assert!((delta - expected).abs() < 1e-8, "{delta} vs {expected}");
        }
    }

    #[test]
    fn adam_rejects_misaligned() {
        let mut net = linear(1.0, 0.0);
        let mut st = AdamState::new(3);
        assert!(adam_step(&mut net, &GradBuffer::zeros(2), &mut st).is_err());
    }

    #[test]
    fn adam_fits_y_equals_2x() {
        // A hidden layer lets the slope move faster than the per-parameter
        // step bound of the learning rate.
        let mut net = DenseNet::init(&[1, 64, 1], &[Activation::Identity; 2], 1).unwrap();
        let mut st = AdamState::for_net(&net);
        let xs: Vec<f64> = (0..8).map(|i| -1.0 + i as f64 * 2.0 / 7.0).collect();
        let batch_loss = |net: &DenseNet| {
            xs.iter()
                .map(|&x| (net.forward(&[x]).unwrap()[0] - 2.0 * x).powi(2))
                .sum::<f64>()
                / xs.len() as f64
        };
        for _ in 0..200 {
            let mut g = net.zero_grad();
            for &x in &xs {
                let tr = net.forward_trace(&[x]).unwrap();
                let (_, up) = mse(tr.output(), &[2.0 * x]).unwrap();
                net.backward_into(&tr, &up, &mut g).unwrap();
            }
            g.scale(1.0 / xs.len() as f64);
            adam_step(&mut net, &g, &mut st).unwrap();
        }
        assert!(batch_loss(&net) < 1e-3, "loss {}", batch_loss(&net));
    }

    #[test]
    fn params_roundtrip_and_truncation() {
        let net = DenseNet::init(&[3, 4, 2], &[Activation::Relu, Activation::Sigmoid], 9).unwrap();
        let bytes = net.to_bytes();
        assert_eq!(&bytes[..4], b"DWP1");
        assert_eq!(DenseNet::from_bytes(&bytes).unwrap(), net);
        assert!(matches!(
            DenseNet::from_bytes(&bytes[..bytes.len() - 3]),
            Err(ApproxError::CorruptParams(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(DenseNet::from_bytes(&bad).is_err());
    }
}
