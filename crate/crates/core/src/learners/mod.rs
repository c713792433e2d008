//! Learners behind a single train / predict contract.
//!
//! The feedforward network is the learner of the recommended pipeline; the
//! traditional kinds (logistic regression, CART, random forest, SVM) are
//! the baselines. [`HyperParamSpace`] holds the tunable ranges and
//! [`LearnerConfig`] one point in them.

mod ffnet;
mod forest;
mod logistic;
mod space;
mod svm;
mod tree;

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ffnet::{FfNet, Optimizer, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE};
pub use forest::{Forest, ForestParams, MaxFeatures};
pub use logistic::LogisticModel;
pub use space::{HyperParamSpace, ParamDim, ParamValue};
pub use svm::{SvmModel, SVM_MAX_PASSES, SVM_TOLERANCE};
pub use tree::{Tree, TreeParams};

use crate::dataset::{NormParams, WarningDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LearnerKind {
    FeedForward,
    Logistic,
    DecisionTree,
    RandomForest,
    Svm,
}

impl LearnerKind {
    pub const TRADITIONAL: [LearnerKind; 4] = [
        LearnerKind::Logistic,
        LearnerKind::DecisionTree,
        LearnerKind::RandomForest,
        LearnerKind::Svm,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            LearnerKind::FeedForward => "ffnet",
            LearnerKind::Logistic => "logit",
            LearnerKind::DecisionTree => "dtree",
            LearnerKind::RandomForest => "rforest",
            LearnerKind::Svm => "svm",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Splitter {
    Best,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kernel {
    Sigmoid,
    Rbf,
    Polynomial,
}

/// One concrete value per hyper-parameter of a learner kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Hyper {
    FeedForward { layers: usize, units: usize },
    Logistic { penalty: Penalty, c: f64 },
    DecisionTree { criterion: Criterion, splitter: Splitter },
    RandomForest { criterion: Criterion, n_estimators: usize },
    Svm { c: f64, kernel: Kernel },
}

impl Hyper {
    pub fn kind(&self) -> LearnerKind {
        match self {
            Hyper::FeedForward { .. } => LearnerKind::FeedForward,
            Hyper::Logistic { .. } => LearnerKind::Logistic,
            Hyper::DecisionTree { .. } => LearnerKind::DecisionTree,
            Hyper::RandomForest { .. } => LearnerKind::RandomForest,
            Hyper::Svm { .. } => LearnerKind::Svm,
        }
    }
}

impl fmt::Display for Hyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyper::FeedForward { layers, units } => write!(f, "ffnet(layers={layers};units={units})"),
            Hyper::Logistic { penalty, c } => write!(f, "logit(penalty={penalty:?};C={c})"),
            Hyper::DecisionTree { criterion, splitter } => {
                write!(f, "dtree(criterion={criterion:?};splitter={splitter:?})")
            }
            Hyper::RandomForest { criterion, n_estimators } => {
                write!(f, "rforest(criterion={criterion:?};n_estimators={n_estimators})")
            }
            Hyper::Svm { c, kernel } => write!(f, "svm(C={c};kernel={kernel:?})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub hyper: Hyper,
    pub seed: u64,
    /// `(w0, w1)`; `None` means balanced weights `n / (2 * count(c))`
    /// computed from the training data.
    pub class_weights: Option<(f64, f64)>,
}

impl LearnerConfig {
    pub fn new(hyper: Hyper, seed: u64) -> Self {
        Self {
            hyper,
            seed,
            class_weights: None,
        }
    }

    pub fn kind(&self) -> LearnerKind {
        self.hyper.kind()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((w0, w1)) = self.class_weights {
            if !(w0 > 0.0 && w1 > 0.0 && w0.is_finite() && w1.is_finite()) {
                return Err(Error::InvalidParameter(format!("class weights ({w0}, {w1}) must be > 0")));
            }
        }
        if !HyperParamSpace::for_kind(self.kind()).contains(&self.hyper) {
            return Err(Error::InvalidParameter(format!("{} is outside the tuning ranges", self.hyper)));
        }
        Ok(())
    }

    /// Effective class weights for a training set.
    pub fn weights_for(&self, labels: &[u8]) -> (f64, f64) {
        self.class_weights.unwrap_or_else(|| balanced_weights(labels))
    }
}

/// `n / (2 * count(c))` per class; an absent class gets weight 1.
pub fn balanced_weights(labels: &[u8]) -> (f64, f64) {
    let n = labels.len() as f64;
    let ones = labels.iter().filter(|&&l| l == 1).count() as f64;
    let zeros = n - ones;
    let w = |c: f64| if c > 0.0 { n / (2.0 * c) } else { 1.0 };
    (w(zeros), w(ones))
}

/// Knobs for network training that sit outside the tuned space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            optimizer: Optimizer::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelBody {
    /// Single-class training data: every score is the training prior.
    Constant(f64),
    FeedForward(FfNet),
    Logistic(LogisticModel),
    Tree(Tree),
    Forest(Forest),
    Svm(SvmModel),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub final_loss: f64,
    /// Set when training stopped early without converging.
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: LearnerConfig,
    pub width: usize,
    pub body: ModelBody,
    /// When set, [`predict`] min-max scales raw features first.
    pub norm: Option<NormParams>,
    /// Class weights the model was trained with.
    pub class_weights: (f64, f64),
    pub meta: TrainMeta,
}

impl Model {
    pub fn kind(&self) -> LearnerKind {
        self.config.kind()
    }

    pub fn as_ffnet(&self) -> Option<&FfNet> {
        match &self.body {
            ModelBody::FeedForward(net) => Some(net),
            _ => None,
        }
    }

    /// SHA-256 of the serialized model.
    pub fn digest(&self) -> Result<[u8; 32]> {
        use sha2::{Digest, Sha256};
        Ok(Sha256::digest(self.to_bytes()?).into())
    }

    pub const MAGIC: &'static [u8; 4] = b"GH2M";
    pub const FORMAT_VERSION: u8 = 1;

    /// `GH2M`, a version byte, then a JSON payload. Floats are written in
    /// shortest round-trip form, so reading back is exact.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(1024);
        out.extend_from_slice(Self::MAGIC);
        out.push(Self::FORMAT_VERSION);
        serde_json::to_writer(&mut out, self)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 || &bytes[..4] != Self::MAGIC {
            return Err(Error::BadModelFile("missing GH2M header".into()));
        }
        if bytes[4] != Self::FORMAT_VERSION {
            return Err(Error::BadModelFile(format!("unsupported version {}", bytes[4])));
        }
        serde_json::from_slice(&bytes[5..]).map_err(|e| Error::BadModelFile(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// In `[0, 1]`; higher means more likely actionable.
    pub scores: Vec<f64>,
    /// `score >= 0.5`.
    pub labels: Vec<u8>,
}

pub fn predict(model: &Model, features: &Matrix) -> Result<Prediction> {
    if features.cols() != model.width {
        return Err(Error::WidthMismatch {
            expected: model.width,
            got: features.cols(),
        });
    }
    let scaled;
    let x = match &model.norm {
        Some(norm) => {
            scaled = norm.apply(features);
            &scaled
        }
        None => features,
    };
    let scores: Vec<f64> = match &model.body {
        ModelBody::Constant(p) => vec![*p; x.rows()],
        ModelBody::FeedForward(net) => net.predict_proba(x),
        ModelBody::Logistic(m) => m.predict_proba(x),
        ModelBody::Tree(t) => x.iter_rows().map(|r| t.score(r)).collect(),
        ModelBody::Forest(f) => x.iter_rows().map(|r| f.score(r)).collect(),
        ModelBody::Svm(m) => m.predict_proba(x),
    };
    let scores: Vec<f64> = scores
        .into_iter()
        .map(|s| if s.is_finite() { s.clamp(0.0, 1.0) } else { 0.5 })
        .collect();
    let labels = scores.iter().map(|&s| u8::from(s >= 0.5)).collect();
    Ok(Prediction { scores, labels })
}

fn constant_model(config: LearnerConfig, train: &WarningDataset) -> Model {
    let [_, ones] = train.class_counts();
    let prior = if train.n() == 0 { 0.5 } else { ones as f64 / train.n() as f64 };
    Model {
        config,
        width: train.d(),
        body: ModelBody::Constant(prior),
        norm: None,
        class_weights: config.weights_for(&train.labels),
        meta: TrainMeta::default(),
    }
}

/// Trains the feedforward network described by `config`.
pub fn ffnet_train(train: &WarningDataset, config: &LearnerConfig, opts: &TrainOptions) -> Result<Model> {
    let Hyper::FeedForward { layers, units } = config.hyper else {
        return Err(Error::InvalidParameter(format!("{} is not a feedforward config", config.hyper)));
    };
    config.validate()?;
    if !train.has_both_classes() {
        return Ok(constant_model(*config, train));
    }
    let weights = config.weights_for(&train.labels);
    let mut net = FfNet::new(train.d(), layers, units, config.seed);
    let final_loss = net.fit(&train.features, &train.labels, weights, opts)?;
    Ok(Model {
        config: *config,
        width: train.d(),
        body: ModelBody::FeedForward(net),
        norm: None,
        class_weights: weights,
        meta: TrainMeta {
            epochs: opts.epochs,
            final_loss,
            warning: None,
        },
    })
}

/// Trains one of the traditional baselines.
pub fn train_traditional(config: &LearnerConfig, train: &WarningDataset) -> Result<Model> {
    config.validate()?;
    if !train.has_both_classes() {
        return Ok(constant_model(*config, train));
    }
    let weights = config.weights_for(&train.labels);
    let x = &train.features;
    let y = &train.labels;
    let mut meta = TrainMeta::default();
    let body = match config.hyper {
        Hyper::FeedForward { .. } => {
            return Err(Error::InvalidParameter("feedforward is not a traditional learner".into()));
        }
        Hyper::Logistic { penalty, c } => {
            let (m, loss) = LogisticModel::fit(x, y, weights, penalty, c);
            meta.final_loss = loss;
            meta.epochs = logistic::ITERATIONS;
            ModelBody::Logistic(m)
        }
        Hyper::DecisionTree { criterion, splitter } => {
            let params = TreeParams {
                criterion,
                splitter,
                max_features: None,
            };
            let mut rng = crate::seed::rng(config.seed);
            let all: Vec<usize> = (0..train.n()).collect();
            ModelBody::Tree(Tree::fit(x, y, &all, weights, &params, &mut rng))
        }
        Hyper::RandomForest { criterion, n_estimators } => {
            let params = ForestParams {
                n_estimators,
                criterion,
                bootstrap: true,
                max_features: MaxFeatures::Sqrt,
            };
            ModelBody::Forest(Forest::fit(x, y, weights, &params, config.seed))
        }
        Hyper::Svm { c, kernel } => {
            let (m, converged) = SvmModel::fit(x, y, weights, c, kernel, config.seed);
            if !converged {
                let msg = format!("SMO did not converge within {SVM_MAX_PASSES} passes");
                log::warn!("{msg}");
                meta.warning = Some(msg);
            }
            meta.epochs = m.passes;
            ModelBody::Svm(m)
        }
    };
    Ok(Model {
        config: *config,
        width: train.d(),
        body,
        norm: None,
        class_weights: weights,
        meta,
    })
}

/// Trains any learner kind.
pub fn train(train_data: &WarningDataset, config: &LearnerConfig, opts: &TrainOptions) -> Result<Model> {
    match config.kind() {
        LearnerKind::FeedForward => ffnet_train(train_data, config, opts),
        _ => train_traditional(config, train_data),
    }
}
