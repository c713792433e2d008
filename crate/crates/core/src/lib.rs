//! Pre-training data engineering for actionable static-analysis warning
//! detection.
//!
//! The crate bundles four data treatments and the harness that evaluates
//! them:
//!
//! - [`treatments`]: SMOTE (instance engineering), SMOOTH (label
//!   engineering on a `sqrt(n)` label budget), GHOST (boundary engineering
//!   with concentric boxes of minority points) and their composition into
//!   ordered plans.
//! - [`tuner`]: DODGE, an epsilon-domination hyper-parameter search.
//! - [`learners`]: a small feedforward network plus the traditional
//!   baselines (logistic regression, CART, random forest, SMO-trained SVM).
//! - [`evaluation`]: confusion counts, precision / recall / false alarm /
//!   AUC, the ablation treatment grid and report rendering.
//! - [`landscape`]: loss-surface slices along filter-normalized directions,
//!   a roughness based smoothness score and the SMOOTH stability check.
//!
//! Everything that draws random numbers takes an explicit seed, so a run is
//! a pure function of its inputs.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod landscape;
pub mod learners;
pub mod matrix;
pub mod seed;
pub mod synthetic;
pub mod treatments;
pub mod tuner;

pub use dataset::{NormParams, TrainTestSplit, WarningDataset};
pub use error::{Error, Result};
pub use matrix::Matrix;
