use serde::{Deserialize, Serialize};

use super::{Criterion, Hyper, Kernel, LearnerKind, Penalty, Splitter};

/// Integer ranges wider than this are thinned to evenly spaced options.
pub const MAX_NUMERIC_OPTIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamValue {
    Int(usize),
    Real(f64),
    Choice(String),
}

/// One tunable hyper-parameter and its candidate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDim {
    pub name: String,
    pub options: Vec<ParamValue>,
    /// Inclusive bounds for integer ranges.
    pub range: Option<(usize, usize)>,
}

impl ParamDim {
    fn choices(name: &str, options: &[&str]) -> Self {
        Self {
            name: name.into(),
            options: options.iter().map(|s| ParamValue::Choice((*s).into())).collect(),
            range: None,
        }
    }

    fn reals(name: &str, options: &[f64]) -> Self {
        Self {
            name: name.into(),
            options: options.iter().map(|&v| ParamValue::Real(v)).collect(),
            range: None,
        }
    }

    fn int_range(name: &str, lo: usize, hi: usize) -> Self {
        Self {
            name: name.into(),
            options: discretize(lo, hi, MAX_NUMERIC_OPTIONS).into_iter().map(ParamValue::Int).collect(),
            range: Some((lo, hi)),
        }
    }

    fn int(&self, i: usize) -> usize {
        match &self.options[i] {
            ParamValue::Int(v) => *v,
            other => panic!("{} expects integers, got {other:?}", self.name),
        }
    }

    fn real(&self, i: usize) -> f64 {
        match &self.options[i] {
            ParamValue::Real(v) => *v,
            other => panic!("{} expects reals, got {other:?}", self.name),
        }
    }

    fn choice(&self, i: usize) -> &str {
        match &self.options[i] {
            ParamValue::Choice(v) => v,
            other => panic!("{} expects choices, got {other:?}", self.name),
        }
    }
}

/// At most `max` evenly spaced integers covering `[lo, hi]`, endpoints
/// included.
pub fn discretize(lo: usize, hi: usize, max: usize) -> Vec<usize> {
    let width = hi - lo;
    if width < max {
        return (lo..=hi).collect();
    }
    let mut out: Vec<usize> = (0..max)
        .map(|i| lo + ((i * width) as f64 / (max - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// The tunable ranges for one learner kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParamSpace {
    pub kind: LearnerKind,
    pub dims: Vec<ParamDim>,
}

impl HyperParamSpace {
    pub fn for_kind(kind: LearnerKind) -> Self {
        let dims = match kind {
            LearnerKind::FeedForward => vec![
                ParamDim::int_range("layers", 2, 6),
                ParamDim::int_range("units", 3, 20),
            ],
            LearnerKind::Logistic => vec![
                ParamDim::choices("penalty", &["l1", "l2"]),
                ParamDim::reals("C", &[0.1, 1.0, 10.0, 100.0]),
            ],
            LearnerKind::RandomForest => vec![
                ParamDim::choices("criterion", &["gini", "entropy"]),
                ParamDim::int_range("n_estimators", 10, 100),
            ],
            LearnerKind::DecisionTree => vec![
                ParamDim::choices("criterion", &["gini", "entropy"]),
                ParamDim::choices("splitter", &["best", "random"]),
            ],
            LearnerKind::Svm => vec![
                ParamDim::reals("C", &[0.1, 1.0, 10.0, 100.0]),
                ParamDim::choices("kernel", &["sigmoid", "rbf", "polynomial"]),
            ],
        };
        Self { kind, dims }
    }

    /// Number of distinct configurations.
    pub fn size(&self) -> usize {
        self.dims.iter().map(|d| d.options.len()).product()
    }

    /// The configuration picking option `choice[i]` on dimension `i`.
    pub fn hyper(&self, choice: &[usize]) -> Hyper {
        let d = &self.dims;
        match self.kind {
            LearnerKind::FeedForward => Hyper::FeedForward {
                layers: d[0].int(choice[0]),
                units: d[1].int(choice[1]),
            },
            LearnerKind::Logistic => Hyper::Logistic {
                penalty: if d[0].choice(choice[0]) == "l1" { Penalty::L1 } else { Penalty::L2 },
                c: d[1].real(choice[1]),
            },
            LearnerKind::RandomForest => Hyper::RandomForest {
                criterion: criterion(d[0].choice(choice[0])),
                n_estimators: d[1].int(choice[1]),
            },
            LearnerKind::DecisionTree => Hyper::DecisionTree {
                criterion: criterion(d[0].choice(choice[0])),
                splitter: if d[1].choice(choice[1]) == "best" { Splitter::Best } else { Splitter::Random },
            },
            LearnerKind::Svm => Hyper::Svm {
                c: d[0].real(choice[0]),
                kernel: match d[1].choice(choice[1]) {
                    "sigmoid" => Kernel::Sigmoid,
                    "rbf" => Kernel::Rbf,
                    _ => Kernel::Polynomial,
                },
            },
        }
    }

    /// Every configuration, in mixed-radix order (last dimension fastest).
    pub fn enumerate(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for dim in &self.dims {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..dim.options.len()).map(move |o| {
                        let mut v = prefix.clone();
                        v.push(o);
                        v
                    })
                })
                .collect();
        }
        out
    }

    /// Whether `hyper` is of this kind and inside the ranges. Integer
    /// ranges accept any value between their bounds, not only the
    /// discretized options.
    pub fn contains(&self, hyper: &Hyper) -> bool {
        if hyper.kind() != self.kind {
            return false;
        }
        let in_range = |dim: &ParamDim, v: usize| dim.range.is_some_and(|(lo, hi)| (lo..=hi).contains(&v));
        let has_real = |dim: &ParamDim, v: f64| dim.options.contains(&ParamValue::Real(v));
        match *hyper {
            Hyper::FeedForward { layers, units } => in_range(&self.dims[0], layers) && in_range(&self.dims[1], units),
            Hyper::Logistic { c, .. } => has_real(&self.dims[1], c),
            Hyper::RandomForest { n_estimators, .. } => in_range(&self.dims[1], n_estimators),
            Hyper::DecisionTree { .. } => true,
            Hyper::Svm { c, .. } => has_real(&self.dims[0], c),
        }
    }

    /// Untuned defaults: the midpoint of integer ranges (rounded down) and
    /// the first option of discrete sets.
    pub fn default_hyper(kind: LearnerKind) -> Hyper {
        let space = Self::for_kind(kind);
        let first: Vec<usize> = vec![0; space.dims.len()];
        let mid = |dim: &ParamDim| dim.range.map(|(lo, hi)| (lo + hi) / 2);
        match space.hyper(&first) {
            Hyper::FeedForward { .. } => Hyper::FeedForward {
                layers: mid(&space.dims[0]).unwrap_or(2),
                units: mid(&space.dims[1]).unwrap_or(3),
            },
            Hyper::RandomForest { criterion, .. } => Hyper::RandomForest {
                criterion,
                n_estimators: mid(&space.dims[1]).unwrap_or(10),
            },
            other => other,
        }
    }
}

fn criterion(name: &str) -> Criterion {
    if name == "gini" {
        Criterion::Gini
    } else {
        Criterion::Entropy
    }
}
