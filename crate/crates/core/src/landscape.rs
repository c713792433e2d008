//! Loss-surface slices along two filter-normalized random directions, a
//! neighbourhood-roughness smoothness score, and the SMOOTH stability
//! diagnostic.

use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{TrainTestSplit, WarningDataset};
use crate::error::{Error, Result};
use crate::evaluation::{fit_recipe, median, EvalOptions, Family, MedianPolicy, Recipe};
use crate::learners::{train, FfNet, LearnerConfig, Model, ModelBody};
use crate::matrix::{l1_distance, squared_distance, Matrix};
use crate::seed;
use crate::treatments::smooth_clusters;

pub const DEFAULT_GRID: usize = 25;
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Keeps smoothness finite on perfectly flat grids.
pub const ROUGHNESS_FLOOR: f64 = 1e-12;
pub const KMEANS_MAX_ITER: usize = 50;

/// A model whose loss can be evaluated at arbitrary parameter vectors.
pub trait LossModel: Sync {
    fn params(&self) -> Vec<f64>;
    /// `(offset, len)` blocks that are normalized separately.
    fn blocks(&self) -> Vec<(usize, usize)>;
    fn loss_at(&self, params: &[f64], data: &WarningDataset) -> f64;
}

/// A trained network with the class weights of its training loss.
pub struct NetLoss<'a> {
    pub net: &'a FfNet,
    pub weights: (f64, f64),
}

impl LossModel for NetLoss<'_> {
    fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    fn blocks(&self) -> Vec<(usize, usize)> {
        self.net.param_blocks()
    }

    fn loss_at(&self, params: &[f64], data: &WarningDataset) -> f64 {
        let mut net = self.net.clone();
        net.set_params(params);
        net.loss(&data.features, &data.labels, self.weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub g: usize,
    pub alpha: f64,
    /// Lattice coordinates, shared by both axes.
    pub coords: Vec<f64>,
    /// `losses[i * g + j]` is the loss at `(coords[i], coords[j])`.
    pub losses: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    /// Loss of the unperturbed parameters.
    pub center_loss: f64,
}

impl LandscapeGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.losses[i * self.g + j]
    }

    /// CSV with header `a,b,loss`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,b,loss\n");
        for i in 0..self.g {
            for j in 0..self.g {
                let _ = writeln!(out, "{},{},{}", self.coords[i], self.coords[j], self.at(i, j));
            }
        }
        out
    }

    /// Grayscale heatmap, dark for low loss, one square per cell.
    pub fn to_svg(&self, cell: usize) -> String {
        let lo = self.losses.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let size = self.g * cell;
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
        );
        for i in 0..self.g {
            for j in 0..self.g {
                let shade = (255.0 * (self.at(i, j) - lo) / span).round() as u8;
                // b grows upwards
                let y = (self.g - 1 - j) * cell;
                let _ = writeln!(
                    out,
                    "<rect x=\"{}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},{shade})\"/>",
                    i * cell
                );
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

/// `g` evenly spaced points on `[-alpha, alpha]`; the middle one is exactly
/// zero when `g` is odd.
pub fn lattice(g: usize, alpha: f64) -> Vec<f64> {
    if g == 1 {
        return vec![0.0];
    }
    let den = (g - 1) as f64;
    (0..g).map(|i| alpha * (2.0 * i as f64 - den) / den).collect()
}

/// A standard Gaussian direction with every block rescaled to the norm of
/// the same block of `params` (blocks of zero weights get a zero direction).
pub fn filter_normalized_direction(params: &[f64], blocks: &[(usize, usize)], rng: &mut seed::Rng) -> Vec<f64> {
    let mut d: Vec<f64> = (0..params.len()).map(|_| StandardNormal.sample(rng)).collect();
    for &(at, len) in blocks {
        let dn = d[at..at + len].iter().map(|v| v * v).sum::<f64>().sqrt();
        let pn = params[at..at + len].iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if dn > 0.0 { pn / dn } else { 0.0 };
        d[at..at + len].iter_mut().for_each(|v| *v *= scale);
    }
    d
}

/// Evaluates `loss(theta + a d1 + b d2)` on the `g x g` lattice over
/// `[-alpha, alpha]^2`.
pub fn loss_surface_with<M: LossModel>(model: &M, data: &WarningDataset, g: usize, alpha: f64, rng_seed: u64) -> Result<LandscapeGrid> {
    if g == 0 {
        return Err(Error::GridTooSmall(g));
    }
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let theta = model.params();
    let blocks = model.blocks();
    let mut rng = seed::rng(rng_seed);
    let d1 = filter_normalized_direction(&theta, &blocks, &mut rng);
    let d2 = filter_normalized_direction(&theta, &blocks, &mut rng);
    let coords = lattice(g, alpha);
    let losses: Vec<f64> = (0..g * g)
        .into_par_iter()
        .map(|cell| {
            let (a, b) = (coords[cell / g], coords[cell % g]);
            let p: Vec<f64> = theta.iter().zip(&d1).zip(&d2).map(|((t, x), y)| t + a * x + b * y).collect();
            model.loss_at(&p, data)
        })
        .collect();
    let center_loss = model.loss_at(&theta, data);
    if let Some(bad) = losses.iter().chain([&center_loss]).find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss { epoch: 0, last_loss: *bad });
    }
    Ok(LandscapeGrid {
        g,
        alpha,
        coords,
        losses,
        d1,
        d2,
        center_loss,
    })
}

/// Loss surface of a trained feedforward model.
pub fn loss_surface(model: &Model, data: &WarningDataset, g: usize, alpha: f64, rng_seed: u64) -> Result<LandscapeGrid> {
    let ModelBody::FeedForward(net) = &model.body else {
        return Err(Error::UnsupportedModel(model.kind().to_string()));
    };
    let lm = NetLoss {
        net,
        weights: model.class_weights,
    };
    loss_surface_with(&lm, data, g, alpha, rng_seed)
}

/// Mean over interior cells of `|L(cell) - mean of its 4 neighbours|`.
pub fn roughness(grid: &LandscapeGrid) -> Result<f64> {
    let g = grid.g;
    if g < 3 {
        return Err(Error::GridTooSmall(g));
    }
    let mut total = 0.0;
    for i in 1..g - 1 {
        for j in 1..g - 1 {
            let around = grid.at(i - 1, j) + grid.at(i + 1, j) + grid.at(i, j - 1) + grid.at(i, j + 1);
            total += (grid.at(i, j) - around / 4.0).abs();
        }
    }
    Ok(total / ((g - 2) * (g - 2)) as f64)
}

/// `1 / (roughness + 1e-12)`.
pub fn smoothness(grid: &LandscapeGrid) -> Result<f64> {
    Ok(1.0 / (roughness(grid)? + ROUGHNESS_FLOOR))
}

/// Percent change in smoothness from `before` to `after`.
pub fn smoothness_change(before: &LandscapeGrid, after: &LandscapeGrid) -> Result<f64> {
    smoothness_change_with(before, after, smoothness)
}

/// As [`smoothness_change`] with a caller-supplied smoothness metric.
pub fn smoothness_change_with(before: &LandscapeGrid, after: &LandscapeGrid, metric: impl Fn(&LandscapeGrid) -> Result<f64>) -> Result<f64> {
    if before.g != after.g {
        return Err(Error::GridMismatch(format!("grid sizes {} and {}", before.g, after.g)));
    }
    let (sb, sa) = (metric(before)?, metric(after)?);
    Ok(100.0 * (sa - sb) / sb)
}

/// Landscapes of a network before and after treatment.
#[derive(Debug, Clone)]
pub struct LandscapePair {
    pub before: LandscapeGrid,
    pub after: LandscapeGrid,
    pub smoothness_before: f64,
    pub smoothness_after: f64,
    pub change: f64,
    pub learner: String,
}

/// Treats `split.train` with the recipe's plan (always on a feedforward
/// network), then trains the chosen configuration twice: on the untreated
/// and on the treated training data. Each network is sliced on its own
/// training data using the same direction seed.
pub fn landscape_pair(split: &TrainTestSplit, plan: &Recipe, rng_seed: u64, opts: &EvalOptions, g: usize, alpha: f64) -> Result<LandscapePair> {
    let (scaled, _) = crate::dataset::normalize(split);
    let recipe = Recipe {
        plan: plan.plan.clone(),
        family: Family::FeedForward,
    };
    let fitted = fit_recipe(&scaled.train, &recipe, rng_seed, opts)?;
    let config = LearnerConfig::new(fitted.model.config.hyper, fitted.model.config.seed);
    let before_model = train(&scaled.train, &config, &opts.train)?;
    let dir_seed = seed::derive(rng_seed, &["directions"]);
    let before = loss_surface(&before_model, &scaled.train, g, alpha, dir_seed)?;
    let after = loss_surface(&fitted.model, &fitted.treated, g, alpha, dir_seed)?;
    let (sb, sa) = (smoothness(&before)?, smoothness(&after)?);
    Ok(LandscapePair {
        change: 100.0 * (sa - sb) / sb,
        smoothness_before: sb,
        smoothness_after: sa,
        learner: config.hyper.to_string(),
        before,
        after,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub repeats: usize,
    /// Leaf count of one SMOOTH clustering, used as k.
    pub k: usize,
    /// Per-leaf feature medians from every repeat (`repeats * k` rows).
    pub medians: Vec<Vec<f64>>,
    /// k-means cluster of each row of `medians`.
    pub assignments: Vec<usize>,
    /// Per cluster, the median of its members' L1 deviations from the
    /// cluster's feature-wise median.
    pub cluster_deviation: Vec<f64>,
    /// Entrywise L1 norm of the dataset.
    pub l1_norm: f64,
    /// Median deviation as a percentage of `l1_norm`.
    pub headline: f64,
}

/// Feature-wise (lower-middle) median of a set of rows.
pub fn featurewise_median(rows: &[&[f64]]) -> Vec<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    (0..d)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            median(&col, MedianPolicy::LowerMiddle).unwrap_or(0.0)
        })
        .collect()
}

/// k-means++ seeding followed by Lloyd iterations (at most
/// [`KMEANS_MAX_ITER`]). Returns the assignment of each point.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut seed::Rng) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let k = k.min(n);
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| squared_distance(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if t < *w {
                    pick = i;
                    break;
                }
                t -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
    }
    let nearest = |p: &[f64], centers: &[Vec<f64>]| -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (c, center) in centers.iter().enumerate() {
            let d = squared_distance(p, center);
            if d < bd {
                bd = d;
                best = c;
            }
        }
        best
    };
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..KMEANS_MAX_ITER {
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

/// Recomputes the deviations and headline from logged medians and their
/// cluster assignments.
pub fn stability_from_clusters(medians: &[Vec<f64>], assignments: &[usize], k: usize, l1_norm: f64) -> (Vec<f64>, f64) {
    let mut all = Vec::with_capacity(medians.len());
    let mut per_cluster = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<&[f64]> = medians
            .iter()
            .zip(assignments)
            .filter(|(_, &a)| a == c)
            .map(|(m, _)| m.as_slice())
            .collect();
        if members.is_empty() {
            per_cluster.push(0.0);
            continue;
        }
        let center = featurewise_median(&members);
        let devs: Vec<f64> = members.iter().map(|m| l1_distance(m, &center)).collect();
        per_cluster.push(median(&devs, MedianPolicy::LowerMiddle).unwrap_or(0.0));
        all.extend(devs);
    }
    let med = median(&all, MedianPolicy::LowerMiddle).unwrap_or(0.0);
    let headline = if l1_norm > 0.0 { 100.0 * med / l1_norm } else { 0.0 };
    (per_cluster, headline)
}

/// Runs SMOOTH's clustering `repeats` times, clusters the per-leaf medians
/// with k-means (k = leaf count) and reports how far medians stray from
/// their cluster's median, relative to the dataset's L1 norm.
pub fn smooth_stability(train: &WarningDataset, repeats: usize, rng_seed: u64) -> Result<StabilityResult> {
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be at least 1".into()));
    }
    let (_, probe) = smooth_clusters(train, &mut seed::rng(seed::derive(rng_seed, &["probe"])))?;
    let k = probe.leaves().len();
    if k < 2 {
        return Err(Error::TooFewLeaves(k));
    }
    let runs: Vec<Result<Vec<Vec<f64>>>> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(seed::derive(rng_seed, &["repeat", &r.to_string()]));
            let (sub, tree) = smooth_clusters(train, &mut rng)?;
            Ok(tree
                .leaves()
                .iter()
                .map(|leaf| {
                    let rows: Vec<&[f64]> = leaf.iter().map(|&i| sub.features.row(i)).collect();
                    featurewise_median(&rows)
                })
                .collect())
        })
        .collect();
    let mut medians = Vec::with_capacity(repeats * k);
    for r in runs {
        medians.extend(r?);
    }
    let assignments = kmeans(&medians, k, &mut seed::rng(seed::derive(rng_seed, &["kmeans"])));
    let l1_norm = entrywise_l1(&train.features);
    let (cluster_deviation, headline) = stability_from_clusters(&medians, &assignments, k, l1_norm);
    Ok(StabilityResult {
        repeats,
        k,
        medians,
        assignments,
        cluster_deviation,
        l1_norm,
        headline,
    })
}

/// Sum of absolute values of every entry.
pub fn entrywise_l1(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| v.abs()).sum()
}
