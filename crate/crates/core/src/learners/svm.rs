//! Soft-margin SVM trained by sequential minimal optimization with an error
//! cache and per-class box constraints. Scores are the decision margin
//! mapped through a sigmoid fitted to the training margins.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Kernel;
use crate::matrix::{dot, squared_distance, Matrix};
use crate::seed;

pub const SVM_MAX_PASSES: usize = 100;
pub const SVM_TOLERANCE: f64 = 1e-3;

/// Largest training set whose full kernel matrix is precomputed.
const KERNEL_CACHE_ROWS: usize = 2500;
const POLY_DEGREE: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub gamma: f64,
    pub support: Matrix,
    /// `alpha_i * y_i` per support vector, `y` in {-1, +1}.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Sigmoid calibration `p = 1 / (1 + exp(a * f + b))`.
    pub platt: (f64, f64),
    /// Outer SMO sweeps performed.
    pub passes: usize,
}

fn kernel_value(kernel: Kernel, gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    match kernel {
        Kernel::Rbf => (-gamma * squared_distance(a, b)).exp(),
        Kernel::Sigmoid => (gamma * dot(a, b)).tanh(),
        Kernel::Polynomial => (gamma * dot(a, b)).powi(POLY_DEGREE),
    }
}

struct Smo<'a> {
    x: &'a Matrix,
    y: Vec<f64>,
    bound: Vec<f64>,
    kernel: Kernel,
    gamma: f64,
    cache: Option<Vec<f64>>,
    alpha: Vec<f64>,
    bias: f64,
    errors: Vec<f64>,
}

impl Smo<'_> {
    fn k(&self, i: usize, j: usize) -> f64 {
        match &self.cache {
            Some(c) => c[i * self.x.rows() + j],
            None => kernel_value(self.kernel, self.gamma, self.x.row(i), self.x.row(j)),
        }
    }

    fn non_bound(&self, i: usize) -> bool {
        self.alpha[i] > 0.0 && self.alpha[i] < self.bound[i]
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1, a2) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (c1, c2) = (self.bound[i1], self.bound[i2]);
        let (e1, e2) = (self.errors[i1], self.errors[i2]);
        let s = y1 * y2;
        let (lo, hi) = if s < 0.0 {
            ((a2 - a1).max(0.0), c2.min(c1 + a2 - a1))
        } else {
            ((a1 + a2 - c1).max(0.0), c2.min(a1 + a2))
        };
        if lo >= hi {
            return false;
        }
        let (k11, k12, k22) = (self.k(i1, i1), self.k(i1, i2), self.k(i2, i2));
        let eta = k11 + k22 - 2.0 * k12;
        let mut new2 = if eta > 0.0 {
            (a2 + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // Objective is linear or concave along the constraint line;
            // take the better endpoint.
            let f1 = y1 * e1 - a1 * k11 - s * a2 * k12;
            let f2 = y2 * e2 - s * a1 * k12 - a2 * k22;
            let objective = |a2n: f64| {
                let a1n = a1 + s * (a2 - a2n);
                a1n * f1 + a2n * f2 + 0.5 * a1n * a1n * k11 + 0.5 * a2n * a2n * k22 + s * a1n * a2n * k12
            };
            let (ol, oh) = (objective(lo), objective(hi));
            if ol < oh - 1e-12 {
                lo
            } else if ol > oh + 1e-12 {
                hi
            } else {
                a2
            }
        };
        if new2 < 1e-8 {
            new2 = 0.0;
        } else if new2 > c2 - 1e-8 {
            new2 = c2;
        }
        if (new2 - a2).abs() < SVM_TOLERANCE * (new2 + a2 + SVM_TOLERANCE) {
            return false;
        }
        let new1 = (a1 + s * (a2 - new2)).clamp(0.0, c1);
        let d1 = y1 * (new1 - a1);
        let d2 = y2 * (new2 - a2);
        let b1 = self.bias - e1 - d1 * k11 - d2 * k12;
        let b2 = self.bias - e2 - d1 * k12 - d2 * k22;
        let new_bias = if new1 > 0.0 && new1 < c1 {
            b1
        } else if new2 > 0.0 && new2 < c2 {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = new_bias - self.bias;
        for k in 0..self.x.rows() {
            self.errors[k] += d1 * self.k(i1, k) + d2 * self.k(i2, k) + db;
        }
        self.alpha[i1] = new1;
        self.alpha[i2] = new2;
        self.bias = new_bias;
        true
    }

    fn examine(&mut self, i2: usize, start: usize) -> bool {
        let n = self.x.rows();
        let (y2, a2, e2) = (self.y[i2], self.alpha[i2], self.errors[i2]);
        let r2 = e2 * y2;
        if !((r2 < -SVM_TOLERANCE && a2 < self.bound[i2]) || (r2 > SVM_TOLERANCE && a2 > 0.0)) {
            return false;
        }
        let mut best = None;
        let mut gap = -1.0;
        for i in (0..n).filter(|&i| self.non_bound(i)) {
            let g = (self.errors[i] - e2).abs();
            if g > gap {
                gap = g;
                best = Some(i);
            }
        }
        if let Some(i1) = best {
            if self.take_step(i1, i2) {
                return true;
            }
        }
        for off in 0..n {
            let i1 = (start + off) % n;
            if self.non_bound(i1) && self.take_step(i1, i2) {
                return true;
            }
        }
        for off in 0..n {
            let i1 = (start + off) % n;
            if !self.non_bound(i1) && self.take_step(i1, i2) {
                return true;
            }
        }
        false
    }
}

/// Fits `p = 1 / (1 + exp(a f + b))` to class-weighted margins by Newton's
/// method with backtracking, using smoothed targets.
fn fit_platt(f: &[f64], y: &[u8], weights: (f64, f64)) -> (f64, f64) {
    let pos: f64 = y.iter().filter(|&&v| v == 1).count() as f64;
    let neg = y.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    let target: Vec<f64> = y.iter().map(|&v| if v == 1 { hi } else { lo }).collect();
    let w: Vec<f64> = y.iter().map(|&v| if v == 1 { weights.1 } else { weights.0 }).collect();
    let nll = |a: f64, b: f64| -> f64 {
        f.iter()
            .zip(&target)
            .zip(&w)
            .map(|((&fi, &t), &wi)| {
                let z = a * fi + b;
                // -[t log p + (1-t) log(1-p)] with p = 1/(1+e^z)
                wi * if z >= 0.0 {
                    t * z + (1.0 + (-z).exp()).ln()
                } else {
                    (t - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((neg + 1.0) / (pos + 1.0)).ln());
    let mut value = nll(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for ((&fi, &t), &wi) in f.iter().zip(&target).zip(&w) {
            let z = a * fi + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = wi * p * q;
            h11 += fi * fi * d2;
            h22 += d2;
            h21 += fi * d2;
            let d1 = wi * (t - p);
            g1 += fi * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nv = nll(na, nb);
            if nv < value + 1e-4 * step * gd {
                a = na;
                b = nb;
                value = nv;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    (a, b)
}

impl SvmModel {
    /// Trains with box constraint `C * weight(class)` per row. Returns the
    /// model and whether SMO reached the KKT tolerance within
    /// [`SVM_MAX_PASSES`] sweeps.
    pub fn fit(x: &Matrix, y: &[u8], weights: (f64, f64), c: f64, kernel: Kernel, seed: u64) -> (Self, bool) {
        let (n, d) = (x.rows(), x.cols());
        let gamma = 1.0 / d.max(1) as f64;
        let cache = (n <= KERNEL_CACHE_ROWS).then(|| {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = kernel_value(kernel, gamma, x.row(i), x.row(j));
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
            m
        });
        let ys: Vec<f64> = y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect();
        let bound: Vec<f64> = y.iter().map(|&v| c * if v == 1 { weights.1 } else { weights.0 }).collect();
        let mut smo = Smo {
            x,
            errors: ys.iter().map(|v| -v).collect(),
            y: ys,
            bound,
            kernel,
            gamma,
            cache,
            alpha: vec![0.0; n],
            bias: 0.0,
        };
        let mut rng = seed::rng(seed);
        let mut passes = 0;
        let mut converged = false;
        let mut examine_all = true;
        while passes < SVM_MAX_PASSES {
            passes += 1;
            let mut changed = 0;
            for i in 0..n {
                if examine_all || smo.non_bound(i) {
                    let start = rng.random_range(0..n.max(1));
                    if smo.examine(i, start) {
                        changed += 1;
                    }
                }
            }
            if examine_all && changed == 0 {
                converged = true;
                break;
            }
            if examine_all {
                examine_all = false;
            } else if changed == 0 {
                examine_all = true;
            }
        }

        let sv: Vec<usize> = (0..n).filter(|&i| smo.alpha[i] > 0.0).collect();
        let mut model = Self {
            kernel,
            gamma,
            support: x.select_rows(&sv),
            coef: sv.iter().map(|&i| smo.alpha[i] * smo.y[i]).collect(),
            bias: smo.bias,
            platt: (0.0, 0.0),
            passes,
        };
        let margins = model.decision_function(x);
        model.platt = fit_platt(&margins, y, weights);
        (model, converged)
    }

    pub fn decision_function(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows()
            .map(|r| {
                self.support
                    .iter_rows()
                    .zip(&self.coef)
                    .map(|(s, c)| c * kernel_value(self.kernel, self.gamma, s, r))
                    .sum::<f64>()
                    + self.bias
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        let (a, b) = self.platt;
        self.decision_function(x).into_iter().map(|f| 1.0 / (1.0 + (a * f + b).exp())).collect()
    }
}
