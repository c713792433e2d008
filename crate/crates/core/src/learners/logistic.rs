use serde::{Deserialize, Serialize};

use super::ffnet::weighted_bce;
use super::Penalty;
use crate::matrix::{dot, Matrix};

pub(crate) const ITERATIONS: usize = 500;

/// Linear model `sigmoid(w . x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LogisticModel {
    /// Minimizes mean class-weighted cross-entropy plus
    /// `penalty(w) / (C * n)` by (proximal) gradient descent with a step
    /// of one over the loss's Lipschitz bound. Returns the model and its
    /// final data loss.
    pub fn fit(x: &Matrix, y: &[u8], weights: (f64, f64), penalty: Penalty, c: f64) -> (Self, f64) {
        let (n, d) = (x.rows(), x.cols());
        let lambda = 1.0 / (c * n as f64);
        let mean_sq: f64 = x.iter_rows().map(|r| dot(r, r)).sum::<f64>() / n as f64;
        let lipschitz = 0.25 * weights.0.max(weights.1) * (mean_sq + 1.0) + lambda;
        let lr = 1.0 / lipschitz;

        let mut m = Self {
            coef: vec![0.0; d],
            intercept: 0.0,
        };
        let mut grad = vec![0.0; d];
        for _ in 0..ITERATIONS {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (i, row) in x.iter_rows().enumerate() {
                let w = if y[i] == 1 { weights.1 } else { weights.0 };
                let p = sigmoid(dot(&m.coef, row) + m.intercept);
                let r = w * (p - f64::from(y[i])) / n as f64;
                gb += r;
                for (g, v) in grad.iter_mut().zip(row) {
                    *g += r * v;
                }
            }
            match penalty {
                Penalty::L2 => {
                    for (c, g) in m.coef.iter_mut().zip(&grad) {
                        *c -= lr * (g + lambda * *c);
                    }
                }
                Penalty::L1 => {
                    let shrink = lr * lambda;
                    for (c, g) in m.coef.iter_mut().zip(&grad) {
                        let v = *c - lr * g;
                        *c = v.signum() * (v.abs() - shrink).max(0.0);
                    }
                }
            }
            m.intercept -= lr * gb;
        }
        let loss = weighted_bce(&m.logits(x), y, weights);
        (m, loss)
    }

    pub fn logits(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows().map(|r| dot(&self.coef, r) + self.intercept).collect()
    }

    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        self.logits(x).into_iter().map(sigmoid).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
