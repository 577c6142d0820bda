//! Fully connected networks with cached forward passes and exact manual
//! backpropagation. Hidden layers use the smooth x*sigmoid(x) activation;
//! output layers are linear.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// out x in.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Feedforward network; hidden activations are silu, the last layer is
/// linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-layer inputs and pre-activations cached by a forward pass.
pub struct MlpCache {
    inputs: Vec<DMatrix<f64>>,
    pre_acts: Vec<DMatrix<f64>>,
}

/// Parameter gradients, one (dw, db) pair per layer.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            layers: net
                .layers
                .iter()
                .map(|l| (DMatrix::zeros(l.w.nrows(), l.w.ncols()), DVector::zeros(l.b.len())))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.0 += &b.0;
            a.1 += &b.1;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (w, b) in &mut self.layers {
            *w *= c;
            *b *= c;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl Mlp {
    /// Builds a network for the given `[input, hidden..., output]` sizes with
    /// uniform fan-in init and zero biases.
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let bound = (1.0 / fan_in as f64).sqrt();
                let w = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound));
                Linear {
                    w,
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    /// Shrinks the final layer weights; small output heads stabilize early
    /// policy updates.
    pub fn scale_last_layer(&mut self, c: f64) {
        let last = self.layers.last_mut().unwrap();
        last.w *= c;
        last.b *= c;
    }

    pub fn check_input(&self, dim: usize) -> Result<()> {
        if dim != self.input_dim() {
            return Err(Error::structural(format!(
                "observation dim {dim} does not match network input {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let x = DMatrix::from_row_slice(1, x.len(), x);
        let out = self.forward_batch(&x);
        out.row(0).iter().copied().collect()
    }

    /// Batched forward pass over rows.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &h * layer.w.transpose();
            for mut row in z.row_iter_mut() {
                row += layer.b.transpose();
            }
            h = if i < last { z.map(silu) } else { z };
        }
        h
    }

    /// Forward pass that caches per-layer inputs and pre-activations for
    /// [`Mlp::backward`].
    pub fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_acts: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            cache.inputs.push(h.clone());
            let mut z = &h * layer.w.transpose();
            for mut row in z.row_iter_mut() {
                row += layer.b.transpose();
            }
            cache.pre_acts.push(z.clone());
            h = if i < last { z.map(silu) } else { z };
        }
        (h, cache)
    }

    /// Exact gradients of a scalar loss given dL/d(output). Returns parameter
    /// gradients and dL/d(input).
    pub fn backward(&self, cache: &MlpCache, grad_out: &DMatrix<f64>) -> (MlpGrads, DMatrix<f64>) {
        let last = self.layers.len() - 1;
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i != last {
                delta.zip_apply(&cache.pre_acts[i], |d, z| *d *= silu_prime(z));
            }
            grads.layers[i].0 = delta.transpose() * &cache.inputs[i];
            grads.layers[i].1 = delta.row_sum().transpose();
            if i > 0 {
                delta *= &self.layers[i].w;
            }
        }
        let grad_in = delta * &self.layers[0].w;
        (grads, grad_in)
    }

    /// Gradient of the output (summed over units weighted by `out_weights`)
    /// with respect to the input, for a single row.
    pub fn input_gradient(&self, x: &[f64], out_weights: &[f64]) -> Vec<f64> {
        let xm = DMatrix::from_row_slice(1, x.len(), x);
        let (_, cache) = self.forward_cached(&xm);
        let go = DMatrix::from_row_slice(1, out_weights.len(), out_weights);
        let (_, gin) = self.backward(&cache, &go);
        gin.row(0).iter().copied().collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = flat[k];
                k += 1;
            }
            for v in l.b.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
        assert_eq!(k, flat.len());
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.w.nrows()));
        dims
    }
}

/// Gaussian policy: mean head plus a state-independent learned log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub mlp: Mlp,
    pub log_std: Vec<f64>,
}

impl PolicyNet {
    pub fn new(dims: &[usize], log_std_init: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut mlp = Mlp::new(dims, rng);
        mlp.scale_last_layer(0.01);
        PolicyNet {
            log_std: vec![log_std_init; *dims.last().unwrap()],
            mlp,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Deterministic mean action and the current log-std.
    pub fn forward(&self, obs: &[f64]) -> Result<(Vec<f64>, &[f64])> {
        self.mlp.check_input(obs.len())?;
        Ok((self.mlp.forward(obs), &self.log_std))
    }

    pub fn clamp_log_std(&mut self, lo: f64, hi: f64) {
        for v in &mut self.log_std {
            *v = v.clamp(lo, hi);
        }
    }
}

/// First-moment/second-moment optimizer state over a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, param_count: usize) -> Self {
        Optimizer {
            kind,
            lr,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.t += 1;
                let t = self.t as f64;
                let bc1 = 1.0 - B1.powf(t);
                let bc2 = 1.0 - B2.powf(t);
                for i in 0..params.len() {
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
    }
}
