//! CART with gini or entropy impurity on class-weighted counts. Depth is
//! unbounded and leaves may hold a single row.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Criterion, Splitter};
use crate::matrix::Matrix;
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub criterion: Criterion,
    pub splitter: Splitter,
    /// Non-constant features examined per split; `None` examines all of
    /// them in index order.
    pub max_features: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        /// Weighted fraction of class 1 among the leaf's rows.
        score: f64,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

fn impurity(criterion: Criterion, w0: f64, w1: f64) -> f64 {
    let t = w0 + w1;
    if t <= 0.0 {
        return 0.0;
    }
    let (p0, p1) = (w0 / t, w1 / t);
    match criterion {
        Criterion::Gini => 1.0 - p0 * p0 - p1 * p1,
        Criterion::Entropy => [p0, p1].iter().filter(|&&p| p > 0.0).map(|p| -p * p.log2()).sum(),
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [u8],
    weights: (f64, f64),
    params: &'a TreeParams,
    nodes: Vec<TreeNode>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn weight(&self, i: usize) -> f64 {
        if self.y[i] == 1 {
            self.weights.1
        } else {
            self.weights.0
        }
    }

    fn totals(&self, idx: &[usize]) -> (f64, f64) {
        idx.iter().fold((0.0, 0.0), |(a, b), &i| {
            if self.y[i] == 1 {
                (a, b + self.weights.1)
            } else {
                (a + self.weights.0, b)
            }
        })
    }

    fn build(&mut self, idx: &mut [usize], rng: &mut Rng) -> usize {
        let id = self.nodes.len();
        let (w0, w1) = self.totals(idx);
        let leaf = TreeNode::Leaf {
            score: if w0 + w1 > 0.0 { w1 / (w0 + w1) } else { 0.5 },
        };
        if w0 == 0.0 || w1 == 0.0 || idx.len() < 2 {
            self.nodes.push(leaf);
            return id;
        }
        let Some(split) = self.choose_split(idx, rng) else {
            self.nodes.push(leaf);
            return id;
        };
        let x = self.x;
        let mut left: Vec<usize> = Vec::with_capacity(idx.len());
        let mut right: Vec<usize> = Vec::with_capacity(idx.len());
        for &i in idx.iter() {
            if x.get(i, split.feature) <= split.threshold {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        self.nodes.push(leaf);
        let l = self.build(&mut left, rng);
        let r = self.build(&mut right, rng);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn choose_split(&self, idx: &mut [usize], rng: &mut Rng) -> Option<SplitChoice> {
        let d = self.x.cols();
        let mut order: Vec<usize> = (0..d).collect();
        let quota = match self.params.max_features {
            Some(m) if m < d => {
                order.shuffle(rng);
                m
            }
            _ => d,
        };
        let mut best: Option<SplitChoice> = None;
        let mut visited = 0;
        for f in order {
            let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = self.x.get(i, f);
                (lo.min(v), hi.max(v))
            });
            if lo >= hi {
                continue;
            }
            let cand = match self.params.splitter {
                Splitter::Best => self.best_threshold(idx, f),
                Splitter::Random => {
                    let t = rng.random_range(lo..hi);
                    Some(self.score_threshold(idx, f, t))
                }
            };
            if let Some(c) = cand {
                if best.as_ref().is_none_or(|b| c.score < b.score) {
                    best = Some(c);
                }
            }
            visited += 1;
            if visited == quota {
                break;
            }
        }
        best
    }

    fn score_threshold(&self, idx: &[usize], f: usize, t: f64) -> SplitChoice {
        let (mut l0, mut l1, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0);
        for &i in idx {
            let w = self.weight(i);
            match (self.x.get(i, f) <= t, self.y[i] == 1) {
                (true, false) => l0 += w,
                (true, true) => l1 += w,
                (false, false) => r0 += w,
                (false, true) => r1 += w,
            }
        }
        let c = self.params.criterion;
        SplitChoice {
            feature: f,
            threshold: t,
            score: (l0 + l1) * impurity(c, l0, l1) + (r0 + r1) * impurity(c, r0, r1),
        }
    }

    fn best_threshold(&self, idx: &mut [usize], f: usize) -> Option<SplitChoice> {
        let x = self.x;
        idx.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
        let (t0, t1) = self.totals(idx);
        let (mut l0, mut l1) = (0.0, 0.0);
        let c = self.params.criterion;
        let mut best: Option<SplitChoice> = None;
        for p in 0..idx.len() - 1 {
            let i = idx[p];
            if self.y[i] == 1 {
                l1 += self.weights.1;
            } else {
                l0 += self.weights.0;
            }
            let (v, next) = (x.get(i, f), x.get(idx[p + 1], f));
            if v >= next {
                continue;
            }
            let (r0, r1) = (t0 - l0, t1 - l1);
            let score = (l0 + l1) * impurity(c, l0, l1) + (r0 + r1) * impurity(c, r0.max(0.0), r1.max(0.0));
            if best.as_ref().is_none_or(|b| score < b.score) {
                let mut threshold = 0.5 * (v + next);
                if threshold >= next {
                    threshold = v;
                }
                best = Some(SplitChoice {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
        best
    }
}

impl Tree {
    /// Fits on the rows listed in `idx` (duplicates allowed, as produced by
    /// bootstrapping).
    pub fn fit(x: &Matrix, y: &[u8], idx: &[usize], weights: (f64, f64), params: &TreeParams, rng: &mut Rng) -> Self {
        let mut b = Builder {
            x,
            y,
            weights,
            params,
            nodes: Vec::new(),
        };
        let mut idx = idx.to_vec();
        b.build(&mut idx, rng);
        Self { nodes: b.nodes }
    }

    pub fn score(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                TreeNode::Leaf { score } => return score,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], id: usize) -> usize {
            match nodes[id] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}
