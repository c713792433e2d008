//! Seeded synthetic datasets for benchmarks and tests.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::dataset::WarningDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

/// Generator seed of the bundled benchmark dataset.
pub const BENCHMARK_SEED: u64 = 20_240_601;
pub const BENCHMARK_ROWS: usize = 200;
pub const BENCHMARK_MINORITY: f64 = 0.4;
pub const BENCHMARK_SIGMA: f64 = 0.5;

fn minority_count(n: usize, minority_fraction: f64) -> Result<usize> {
    if !(minority_fraction > 0.0 && minority_fraction <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "minority fraction {minority_fraction} not in (0, 0.5]"
        )));
    }
    let m = (n as f64 * minority_fraction).round() as usize;
    if m == 0 || m == n {
        return Err(Error::TooFewRows { have: n, need: 2 });
    }
    Ok(m)
}

/// Two-dimensional XOR of Gaussians: class 1 (the minority) around
/// `(1, -1)` and `(-1, 1)`, class 0 around `(1, 1)` and `(-1, -1)`, each
/// with spread `sigma`. Timestamps are a random permutation of `0..n`, so a
/// time split is a random split.
pub fn xor_gaussians(project: &str, n: usize, minority_fraction: f64, sigma: f64, generator_seed: u64) -> Result<WarningDataset> {
    let m = minority_count(n, minority_fraction)?;
    let mut rng = seed::rng(generator_seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut x = Matrix::with_cols(2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = u8::from(i < m);
        let k = if label == 1 { i } else { i - m };
        let flip = if k % 2 == 0 { 1.0 } else { -1.0 };
        let center = if label == 1 { [flip, -flip] } else { [flip, flip] };
        x.push_row(&[center[0] + noise.sample(&mut rng), center[1] + noise.sample(&mut rng)]);
        labels.push(label);
    }
    let mut ts: Vec<i64> = (0..n as i64).collect();
    ts.shuffle(&mut rng);
    WarningDataset::new(project, x, vec!["x".into(), "y".into()], labels, ts)
}

/// The benchmark dataset: 200 rows, 40% minority, fixed generator seed.
pub fn benchmark() -> WarningDataset {
    xor_gaussians("xor", BENCHMARK_ROWS, BENCHMARK_MINORITY, BENCHMARK_SIGMA, BENCHMARK_SEED).expect("benchmark parameters are valid")
}

/// `centers` isotropic Gaussian blobs in `d` dimensions with unit spread and
/// centers drawn uniformly from `[-5, 5]^d`; blob `c` gets label `c % 2`.
pub fn gaussian_blobs(project: &str, n: usize, d: usize, centers: usize, generator_seed: u64) -> Result<WarningDataset> {
    if n == 0 || d == 0 || centers == 0 {
        return Err(Error::InvalidParameter("blobs need n, d and centers > 0".into()));
    }
    let mut rng = seed::rng(generator_seed);
    let unit = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let spread = rand_distr::Uniform::new(-5.0, 5.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mids: Vec<Vec<f64>> = (0..centers).map(|_| (0..d).map(|_| spread.sample(&mut rng)).collect()).collect();
    let mut x = Matrix::with_cols(d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % centers;
        let row: Vec<f64> = mids[c].iter().map(|m| m + unit.sample(&mut rng)).collect();
        x.push_row(&row);
        labels.push((c % 2) as u8);
    }
    let names = (0..d).map(|j| format!("f{j}")).collect();
    let ts = (0..n as i64).collect();
    WarningDataset::new(project, x, names, labels, ts)
}
