//! Small dense networks with hand-written reverse-mode gradients and Adam.
//!
//! Batches are row-major `(batch, features)` matrices. A forward pass returns
//! a [`Tape`] holding the layer inputs; the backward pass consumes it.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const LOG_STD_BIAS_INIT: f64 = -0.5;

const CHECKPOINT_FORMAT: &str = "mcf-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("tape does not belong to this network: {0}")]
    Usage(String),
    #[error("non-finite gradient in layer {layer}")]
    Divergence { layer: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Head {
    Linear,
    /// Output is `[mean; action_dim] ++ [log_std; action_dim]`, log-std clamped.
    Gaussian { action_dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(fan_in, fan_out)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { w: Array2::zeros((fan_in, fan_out)), b: Array1::zeros(fan_out) }
    }
}

/// ReLU multilayer perceptron with a linear or Gaussian output head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    pub layers: Vec<Dense>,
    head: Head,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to every layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Unclamped network output.
    raw: Array2<f64>,
}

/// Gradients shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Dense>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Grads {
            layers: net.layers.iter().map(|l| Dense::zeros(l.w.nrows(), l.w.ncols())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Fan-in scaled uniform initialization. For a Gaussian head the log-std
    /// biases start at [`LOG_STD_BIAS_INIT`].
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], head: Head, rng: &mut R) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output sizes");
        if let Head::Gaussian { action_dim } = head {
            assert_eq!(*layer_sizes.last().unwrap(), 2 * action_dim, "gaussian head needs 2 * action_dim outputs");
        }
        let layers = layer_sizes
            .windows(2)
            .map(|p| {
                let bound = 1.0 / (p[0] as f64).sqrt();
                Dense {
                    w: Array2::from_shape_fn((p[0], p[1]), |_| rng.gen_range(-bound..bound)),
                    b: Array1::from_shape_fn(p[1], |_| rng.gen_range(-bound..bound)),
                }
            })
            .collect();
        let mut net = Mlp { layer_sizes: layer_sizes.to_vec(), layers, head };
        if let Head::Gaussian { action_dim } = head {
            let last = net.layers.last_mut().unwrap();
            for k in action_dim..2 * action_dim {
                last.b[k] = LOG_STD_BIAS_INIT;
            }
        }
        net
    }

    pub fn from_layers(layers: Vec<Dense>, head: Head) -> Result<Self, NeuralError> {
        let mut sizes = vec![layers.first().map(|l| l.w.nrows()).unwrap_or(0)];
        for (i, l) in layers.iter().enumerate() {
            if l.w.nrows() != *sizes.last().unwrap() {
                return Err(NeuralError::Dimension { expected: *sizes.last().unwrap(), got: l.w.nrows() });
            }
            if l.b.len() != l.w.ncols() {
                return Err(NeuralError::Usage(format!("layer {i} bias length {} != fan_out {}", l.b.len(), l.w.ncols())));
            }
            sizes.push(l.w.ncols());
        }
        if let Head::Gaussian { action_dim } = head {
            if *sizes.last().unwrap() != 2 * action_dim {
                return Err(NeuralError::Dimension { expected: 2 * action_dim, got: *sizes.last().unwrap() });
            }
        }
        Ok(Mlp { layer_sizes: sizes, layers, head })
    }

    /// Single linear layer computing the identity.
    pub fn identity(n: usize) -> Self {
        Mlp::from_layers(vec![Dense { w: Array2::eye(n), b: Array1::zeros(n) }], Head::Linear).unwrap()
    }

    pub fn zeroed(&self) -> Self {
        let mut z = self.clone();
        for l in &mut z.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        z
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.layer_sizes == other.layer_sizes && self.head == other.head
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Tape), NeuralError> {
        if input.ncols() != self.input_dim() {
            return Err(NeuralError::Dimension { expected: self.input_dim(), got: input.ncols() });
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut x = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.dot(&layer.w);
            z += &layer.b;
            if i + 1 < n {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(x);
            x = z;
        }
        let raw = x;
        let out = self.apply_head(&raw);
        Ok((out, Tape { inputs, raw }))
    }

    /// Forward pass without keeping a tape.
    pub fn predict(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>, NeuralError> {
        if input.ncols() != self.input_dim() {
            return Err(NeuralError::Dimension { expected: self.input_dim(), got: input.ncols() });
        }
        let n = self.layers.len();
        let mut x = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.dot(&layer.w);
            z += &layer.b;
            if i + 1 < n {
                z.mapv_inplace(|v| v.max(0.0));
            }
            x = z;
        }
        Ok(self.apply_head(&x))
    }

    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        let view = ArrayView2::from_shape((1, input.len()), input).expect("row vector shape");
        Ok(self.predict(view)?.row(0).to_vec())
    }

    fn apply_head(&self, raw: &Array2<f64>) -> Array2<f64> {
        match self.head {
            Head::Linear => raw.clone(),
            Head::Gaussian { action_dim } => {
                let mut out = raw.clone();
                out.slice_mut(ndarray::s![.., action_dim..])
                    .mapv_inplace(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
                out
            }
        }
    }

    /// Reverse-mode pass. Returns parameter gradients and the gradient with
    /// respect to the network input.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<'_, f64>) -> Result<(Grads, Array2<f64>), NeuralError> {
        if tape.inputs.len() != self.layers.len() {
            return Err(NeuralError::Usage(format!(
                "tape has {} layers, network has {}",
                tape.inputs.len(),
                self.layers.len()
            )));
        }
        if upstream.dim() != tape.raw.dim() {
            return Err(NeuralError::Dimension { expected: tape.raw.ncols(), got: upstream.ncols() });
        }
        let mut g = upstream.to_owned();
        if let Head::Gaussian { action_dim } = self.head {
            let raw = tape.raw.slice(ndarray::s![.., action_dim..]);
            Zip::from(g.slice_mut(ndarray::s![.., action_dim..])).and(raw).for_each(|gv, &r| {
                if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&r) {
                    *gv = 0.0;
                }
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let x = &tape.inputs[i];
            let dw = x.t().dot(&g);
            let db = g.sum_axis(Axis(0));
            let mut gx = g.dot(&self.layers[i].w.t());
            if i > 0 {
                // x is a ReLU output, so x > 0 exactly where the unit was active.
                Zip::from(&mut gx).and(x).for_each(|gv, &xv| {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            grads.push(Dense { w: dw, b: db });
            g = gx;
        }
        grads.reverse();
        Ok((Grads { layers: grads }, g))
    }

    /// `self = tau * self + (1 - tau) * source`.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) {
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            Zip::from(&mut t.w).and(&s.w).for_each(|a, &b| *a = tau * *a + (1.0 - tau) * b);
            Zip::from(&mut t.b).and(&s.b).for_each(|a, &b| *a = tau * *a + (1.0 - tau) * b);
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NeuralError> {
        if flat.len() != self.param_count() {
            return Err(NeuralError::Dimension { expected: self.param_count(), got: flat.len() });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<(), NeuralError> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            activation: "relu".to_string(),
            head: self.head,
            param_count: self.param_count(),
            byte_order: "little".to_string(),
        };
        let line = serde_json::to_string(&header).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(8 * self.param_count());
        for v in self.flat_params() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self, NeuralError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| NeuralError::Checkpoint("missing header line".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| NeuralError::Checkpoint(format!("bad header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
            return Err(NeuralError::Checkpoint(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        if header.activation != "relu" || header.byte_order != "little" {
            return Err(NeuralError::Checkpoint("unsupported activation or byte order".into()));
        }
        let body = &bytes[nl + 1..];
        if body.len() != 8 * header.param_count {
            return Err(NeuralError::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                8 * header.param_count,
                body.len()
            )));
        }
        let layers = header.layer_sizes.windows(2).map(|p| Dense::zeros(p[0], p[1])).collect();
        let mut net = Mlp::from_layers(layers, header.head)?;
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        net.set_flat_params(&flat)?;
        Ok(net)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    activation: String,
    head: Head,
    param_count: usize,
    byte_order: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Adam { config, step: 0, m: Grads::zeros_like(net), v: Grads::zeros_like(net) }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) -> Result<(), NeuralError> {
        if grads.layers.len() != net.layers.len() {
            return Err(NeuralError::Dimension { expected: net.layers.len(), got: grads.layers.len() });
        }
        for (i, g) in grads.layers.iter().enumerate() {
            if g.w.dim() != net.layers[i].w.dim() || g.b.len() != net.layers[i].b.len() {
                return Err(NeuralError::Usage(format!("gradient shape mismatch in layer {i}")));
            }
            if !g.w.iter().chain(g.b.iter()).all(|v| v.is_finite()) {
                return Err(NeuralError::Divergence { layer: i });
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= learning_rate * mh / (vh.sqrt() + eps);
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.m.layers).zip(&mut self.v.layers) {
            Zip::from(&mut layer.w).and(&mut m.w).and(&mut v.w).and(&g.w).for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.b).and(&mut m.b).and(&mut v.b).and(&g.b).for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}
