//! Dense layers over sparse inputs, and AdamW.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Nonzero `(index, value)` pairs of a dense vector.
pub fn nonzeros(x: &[f64]) -> Vec<(usize, f64)> {
    x.iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &v)| (i, v))
        .collect()
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

/// Round every value to the nearest `f32`.
pub(crate) fn quantize(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

/// Affine map `y = W x + b`. The weight is stored input-major: row `i`
/// holds the `out_dim` weights leaving input `i`, so sparse inputs touch
/// contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Dense {
        Dense {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform in `±sqrt(6 / in_dim)`, zero bias.
    pub fn he_uniform<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Dense {
        let limit = (6.0 / in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Dense {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weight[i * self.out_dim..(i + 1) * self.out_dim]
    }

    /// Weight from input `i` to output `j`.
    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.weight[i * self.out_dim + j]
    }

    pub fn forward(&self, x: &[(usize, f64)]) -> Vec<f64> {
        let mut y = self.bias.clone();
        for &(i, v) in x {
            for (yj, w) in y.iter_mut().zip(self.row(i)) {
                *yj += v * w;
            }
        }
        y
    }

    pub fn forward_dense(&self, x: &[f64]) -> Vec<f64> {
        self.forward(&nonzeros(x))
    }

    /// Add this layer's parameter gradient for input `x` and output
    /// gradient `dy` into `grad`.
    pub(crate) fn accumulate(&self, x: &[(usize, f64)], dy: &[f64], grad: &mut Dense) {
        for &(i, v) in x {
            let row = &mut grad.weight[i * self.out_dim..(i + 1) * self.out_dim];
            for (g, d) in row.iter_mut().zip(dy) {
                *g += v * d;
            }
        }
        for (g, d) in grad.bias.iter_mut().zip(dy) {
            *g += d;
        }
    }

    /// Gradient with respect to input `i`.
    pub(crate) fn input_grad(&self, i: usize, dy: &[f64]) -> f64 {
        self.row(i).iter().zip(dy).map(|(w, d)| w * d).sum()
    }

    pub(crate) fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub(crate) fn params(&self) -> [&[f64]; 2] {
        [&self.weight, &self.bias]
    }
}

/// AdamW constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub hyper: AdamHyper,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptState {
    pub fn new(hyper: AdamHyper, sizes: &[usize]) -> OptState {
        OptState {
            hyper,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One decoupled-weight-decay Adam update over parallel parameter and
/// gradient lists.
///
/// # Panics
/// If the lists disagree in length or shape with each other or with `opt`.
pub fn adamw_update(params: Vec<&mut [f64]>, grads: Vec<&[f64]>, opt: &mut OptState) {
    assert_eq!(
        params.len(),
        grads.len(),
        "parameter/gradient count mismatch"
    );
    assert_eq!(params.len(), opt.m.len(), "optimizer state shape mismatch");
    opt.step += 1;
    let AdamHyper {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = opt.hyper;
    let t = opt.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
        assert_eq!(p.len(), g.len(), "tensor {k} shape mismatch");
        let (m, v) = (&mut opt.m[k], &mut opt.v[k]);
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * p[i]);
        }
    }
}
