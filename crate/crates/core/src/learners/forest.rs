use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{Tree, TreeParams};
use super::{Criterion, Splitter};
use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxFeatures {
    /// `max(1, floor(sqrt(d)))` features per split.
    Sqrt,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub criterion: Criterion,
    pub bootstrap: bool,
    pub max_features: MaxFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(x: &Matrix, y: &[u8], weights: (f64, f64), params: &ForestParams, seed: u64) -> Self {
        let (n, d) = (x.rows(), x.cols());
        let tree_params = TreeParams {
            criterion: params.criterion,
            splitter: Splitter::Best,
            max_features: match params.max_features {
                MaxFeatures::Sqrt => Some(((d as f64).sqrt().floor() as usize).max(1)),
                MaxFeatures::All => None,
            },
        };
        let trees = (0..params.n_estimators)
            .map(|t| {
                let mut rng = seed::rng(seed::derive(seed, &["tree", &t.to_string()]));
                let idx: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                Tree::fit(x, y, &idx, weights, &tree_params, &mut rng)
            })
            .collect();
        Self { trees }
    }

    /// Fraction of trees voting for class 1.
    pub fn score(&self, row: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.5;
        }
        let votes = self.trees.iter().filter(|t| t.score(row) >= 0.5).count();
        votes as f64 / self.trees.len() as f64
    }
}
