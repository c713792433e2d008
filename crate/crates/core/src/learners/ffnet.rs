//! Fully connected ReLU network with a single sigmoid output, trained by
//! full-batch descent on class-weighted binary cross-entropy. No batch
//! normalization, no dropout.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

use super::TrainOptions;

pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;

/// Update rule applied to the full-batch gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum Optimizer {
    /// `theta -= lr * grad`.
    GradientDescent,
    /// Adam with the usual moment decay rates (0.9, 0.999).
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    fn fan_out(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfNet {
    /// Hidden layers followed by the 1-unit output layer.
    pub layers: Vec<Dense>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Cross-entropy of a logit against a 0/1 label.
pub(crate) fn bce_from_logit(z: f64, y: u8) -> f64 {
    if y == 1 {
        softplus(-z)
    } else {
        softplus(z)
    }
}

impl FfNet {
    /// `hidden_layers` ReLU layers of `units` each, Glorot-uniform weights
    /// in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(inputs: usize, hidden_layers: usize, units: usize, rng_seed: u64) -> Self {
        let mut rng = seed::rng(rng_seed);
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut fan_in = inputs;
        for l in 0..=hidden_layers {
            let fan_out = if l == hidden_layers { 1 } else { units };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect();
            layers.push(Dense {
                weights: Matrix::from_vec(fan_out, fan_in, data),
                bias: vec![0.0; fan_out],
            });
            fan_in = fan_out;
        }
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer: weights (row-major), then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "parameter vector has wrong length");
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.as_mut_slice();
            w.copy_from_slice(&flat[at..at + w.len()]);
            at += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    /// `(offset, len)` of each weight matrix and each bias vector inside
    /// [`FfNet::params`].
    pub fn param_blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut at = 0;
        for l in &self.layers {
            let w = l.weights.as_slice().len();
            out.push((at, w));
            at += w;
            out.push((at, l.bias.len()));
            at += l.bias.len();
        }
        out
    }

    /// Output logits plus every layer's pre-activations.
    fn forward(&self, x: &Matrix) -> (Vec<f64>, Vec<Matrix>, Vec<Matrix>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut input = x.clone();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let (out_dim, in_dim) = (layer.fan_out(), layer.fan_in());
            let mut z = Matrix::zeros(input.rows(), out_dim);
            for i in 0..input.rows() {
                let a = input.row(i);
                let zr = z.row_mut(i);
                for (o, zo) in zr.iter_mut().enumerate() {
                    let w = layer.weights.row(o);
                    let mut s = layer.bias[o];
                    for k in 0..in_dim {
                        s += w[k] * a[k];
                    }
                    *zo = s;
                }
            }
            let a = if li == last {
                z.clone()
            } else {
                let mut a = z.clone();
                a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                a
            };
            acts.push(std::mem::replace(&mut input, a));
            pre.push(z);
        }
        (input.as_slice().to_vec(), pre, acts)
    }

    pub fn logits(&self, x: &Matrix) -> Vec<f64> {
        self.forward(x).0
    }

    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        self.logits(x).into_iter().map(sigmoid).collect()
    }

    /// Mean class-weighted cross-entropy.
    pub fn loss(&self, x: &Matrix, y: &[u8], weights: (f64, f64)) -> f64 {
        weighted_bce(&self.logits(x), y, weights)
    }

    /// Loss and its gradient, laid out like [`FfNet::params`].
    pub fn loss_and_grad(&self, x: &Matrix, y: &[u8], weights: (f64, f64)) -> (f64, Vec<f64>) {
        let n = x.rows();
        let (logits, pre, acts) = self.forward(x);
        let loss = weighted_bce(&logits, y, weights);

        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.as_slice().len()], vec![0.0; l.bias.len()]))
            .collect();
        // dL/dz at the output
        let mut delta = Matrix::zeros(n, 1);
        for i in 0..n {
            let w = if y[i] == 1 { weights.1 } else { weights.0 };
            delta.set(i, 0, w * (sigmoid(logits[i]) - f64::from(y[i])) / n as f64);
        }
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let (out_dim, in_dim) = (layer.fan_out(), layer.fan_in());
            let a_in = &acts[li];
            let (gw, gb) = &mut grads[li];
            for i in 0..n {
                let d = delta.row(i);
                let a = a_in.row(i);
                for o in 0..out_dim {
                    if d[o] == 0.0 {
                        continue;
                    }
                    gb[o] += d[o];
                    let row = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for k in 0..in_dim {
                        row[k] += d[o] * a[k];
                    }
                }
            }
            if li > 0 {
                let z_prev = &pre[li - 1];
                let mut next = Matrix::zeros(n, in_dim);
                for i in 0..n {
                    let d = delta.row(i);
                    let zp = z_prev.row(i);
                    let nr = next.row_mut(i);
                    for (o, &dv) in d.iter().enumerate().take(out_dim) {
                        if dv == 0.0 {
                            continue;
                        }
                        let w = layer.weights.row(o);
                        for k in 0..in_dim {
                            nr[k] += w[k] * dv;
                        }
                    }
                    for k in 0..in_dim {
                        if zp[k] <= 0.0 {
                            nr[k] = 0.0;
                        }
                    }
                }
                delta = next;
            }
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        (loss, flat)
    }

    /// Runs `opts.epochs` full-batch updates and returns the final loss.
    pub fn fit(&mut self, x: &Matrix, y: &[u8], weights: (f64, f64), opts: &TrainOptions) -> Result<f64> {
        let mut theta = self.params();
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut last_loss = f64::NAN;
        for epoch in 0..opts.epochs {
            let (loss, grad) = self.loss_and_grad(x, y, weights);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, last_loss });
            }
            last_loss = loss;
            match opts.optimizer {
                Optimizer::GradientDescent => {
                    for (t, g) in theta.iter_mut().zip(&grad) {
                        *t -= opts.learning_rate * g;
                    }
                }
                Optimizer::Adam => {
                    let step = (epoch + 1) as i32;
                    let c1 = 1.0 - b1.powi(step);
                    let c2 = 1.0 - b2.powi(step);
                    for k in 0..theta.len() {
                        m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
                        v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
                        theta[k] -= opts.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                }
            }
            self.set_params(&theta);
        }
        let loss = self.loss(x, y, weights);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: opts.epochs,
                last_loss,
            });
        }
        Ok(loss)
    }
}

pub(crate) fn weighted_bce(logits: &[f64], y: &[u8], weights: (f64, f64)) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(y)
        .map(|(&z, &l)| {
            let w = if l == 1 { weights.1 } else { weights.0 };
            w * bce_from_logit(z, l)
        })
        .sum();
    total / logits.len() as f64
}
