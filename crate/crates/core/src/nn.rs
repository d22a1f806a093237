//! Minimal dense-network building blocks with hand-written backward passes,
//! shared by the denoiser and the toy classifiers.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::rng::{gaussian, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

/// Fully connected layer computing `x W + b` for row-major batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    /// He-style Gaussian init scaled by `1/sqrt(fan_in)`.
    pub fn init(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Self {
        let scale = (2.0 / fan_in as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || gaussian(rng) * scale);
        Self {
            w,
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        upstream: &Array2<f64>,
        grad: &mut Dense,
    ) -> Array2<f64> {
        grad.w += &x.t().dot(upstream);
        grad.b += &upstream.sum_axis(Axis(0));
        upstream.dot(&self.w.t())
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn params(&self) -> [&[f64]; 2] {
        [
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }
}

/// Adam with optional global-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

pub fn softmax_rows(logits: &Array2<f64>, temperature: f64) -> Array2<f64> {
    let mut out = logits / temperature;
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}
