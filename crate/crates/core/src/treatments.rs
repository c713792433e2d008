//! Data treatments applied to a training set before a learner sees it.
//!
//! * [`smote`] interpolates new minority rows between a row and one of its
//!   same-label nearest neighbours until the classes are level.
//! * [`smooth`] keeps `ceil(sqrt(n))` random rows, clusters them with a
//!   KD-tree into leaves of `ceil(n^(1/4))` rows and overwrites each leaf's
//!   labels with the leaf mode.
//! * [`ghost`] surrounds every minority row with `floor(log2(1/p))`
//!   concentric L-infinity boxes of synthetic minority points, `p` being the
//!   minority fraction.
//!
//! A [`TreatmentPlan`] chains them; its text form is
//! `smooth>smote>ghost>ghost>smote+dodge`.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::WarningDataset;
use crate::error::{Error, Result};
use crate::geometry::{KdTree, SEARCH_LEAF_CAPACITY};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoteParams {
    pub k: usize,
}

impl Default for SmoteParams {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhostParams {
    /// Box radius step as a fraction of each feature's range.
    pub box_step: f64,
    /// Points per box; `None` means `2 * min(d, 8)`.
    pub points_per_box: Option<usize>,
}

impl Default for GhostParams {
    fn default() -> Self {
        Self {
            box_step: 0.01,
            points_per_box: None,
        }
    }
}

impl GhostParams {
    pub fn points_per_box_for(&self, d: usize) -> usize {
        self.points_per_box.unwrap_or(2 * d.min(8))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Treatment {
    Smooth,
    Smote(SmoteParams),
    Ghost(GhostParams),
}

impl Treatment {
    pub fn name(&self) -> &'static str {
        match self {
            Treatment::Smooth => "smooth",
            Treatment::Smote(_) => "smote",
            Treatment::Ghost(_) => "ghost",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Treatment::Smooth => Ok(()),
            Treatment::Smote(p) if p.k == 0 => Err(Error::InvalidParameter("smote k must be >= 1".into())),
            Treatment::Ghost(p) if !(p.box_step > 0.0 && p.box_step.is_finite()) => {
                Err(Error::InvalidParameter(format!("ghost box step {} must be > 0", p.box_step)))
            }
            Treatment::Ghost(GhostParams {
                points_per_box: Some(0),
                ..
            }) => Err(Error::InvalidParameter("ghost points per box must be >= 1".into())),
            _ => Ok(()),
        }
    }
}

/// Ordered treatment steps plus whether DODGE tunes the learner afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentPlan {
    pub steps: Vec<Treatment>,
    pub tune: bool,
}

impl TreatmentPlan {
    pub fn identity() -> Self {
        Self {
            steps: Vec::new(),
            tune: false,
        }
    }

    /// smooth -> smote -> ghost -> ghost -> smote, then DODGE.
    pub fn canonical() -> Self {
        "smooth>smote>ghost>ghost>smote+dodge".parse().expect("canonical plan parses")
    }

    pub fn uses_smooth(&self) -> bool {
        self.steps.contains(&Treatment::Smooth)
    }

    /// The plan with every step of the given kind removed.
    pub fn without(&self, name: &str) -> Self {
        Self {
            steps: self.steps.iter().filter(|s| s.name() != name).copied().collect(),
            tune: self.tune,
        }
    }
}

impl fmt::Display for TreatmentPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            f.write_str("none")?;
        } else {
            let names: Vec<&str> = self.steps.iter().map(Treatment::name).collect();
            f.write_str(&names.join(">"))?;
        }
        if self.tune {
            f.write_str("+dodge")?;
        }
        Ok(())
    }
}

impl FromStr for TreatmentPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (body, tune) = match s.split_once('+') {
            Some((body, tail)) if tail.trim() == "dodge" => (body.trim(), true),
            Some((_, tail)) => return Err(Error::InvalidPlan(format!("unknown suffix `+{tail}`"))),
            None => (s, false),
        };
        let mut steps = Vec::new();
        if !(body.is_empty() || body == "none") {
            for part in body.split('>') {
                steps.push(match part.trim() {
                    "smooth" => Treatment::Smooth,
                    "smote" => Treatment::Smote(SmoteParams::default()),
                    "ghost" => Treatment::Ghost(GhostParams::default()),
                    other => return Err(Error::InvalidPlan(format!("unknown step `{other}`"))),
                });
            }
        }
        Ok(Self { steps, tune })
    }
}

/// Smallest `c` with `c^p >= n`.
pub fn ceil_root(n: usize, p: u32) -> usize {
    let mut c = (n as f64).powf(1.0 / p as f64).floor() as usize;
    while c > 0 && c.checked_pow(p).is_none_or(|v| v >= n) {
        c -= 1;
    }
    while c.checked_pow(p).is_some_and(|v| v < n) {
        c += 1;
    }
    c
}

/// Number of GHOST boxes, `floor(log2(n / minority))`, computed in integers.
pub fn ghost_box_count(n: usize, minority: usize) -> usize {
    if minority == 0 {
        return 0;
    }
    let mut b = 0;
    while b < 62 && minority.checked_mul(1usize << (b + 1)).is_some_and(|v| v <= n) {
        b += 1;
    }
    b
}

/// Oversamples the minority class until both classes have the same count.
/// Already balanced input comes back unchanged.
pub fn smote(train: &WarningDataset, params: SmoteParams, rng_seed: u64) -> Result<WarningDataset> {
    Treatment::Smote(params).validate()?;
    let [c0, c1] = train.class_counts();
    if c0 == c1 {
        return Ok(train.clone());
    }
    let label = train.minority_label();
    let minority: Vec<usize> = (0..train.n()).filter(|&i| train.labels[i] == label).collect();
    if minority.len() < 2 {
        return Err(Error::TooFewMinority { count: minority.len() });
    }
    let need = c0.max(c1) - minority.len();
    let pts = train.features.select_rows(&minority);
    let tree = KdTree::build(&pts, SEARCH_LEAF_CAPACITY)?;
    let k = params.k.min(minority.len() - 1);

    let mut rng = seed::rng(rng_seed);
    let mut neighbours: Vec<Option<Vec<usize>>> = vec![None; minority.len()];
    let mut out = train.clone();
    let mut row = vec![0.0; train.d()];
    for _ in 0..need {
        let x = rng.random_range(0..minority.len());
        if neighbours[x].is_none() {
            neighbours[x] = Some(tree.knn(x, k, None)?);
        }
        let nn = neighbours[x].as_deref().unwrap_or_default();
        let r = nn[rng.random_range(0..nn.len())];
        let t = open_unit(&mut rng);
        let (px, pr) = (pts.row(x), pts.row(r));
        for j in 0..row.len() {
            row[j] = px[j] + t * (pr[j] - px[j]);
        }
        out.push(&row, label, train.timestamps[minority[x]]);
    }
    Ok(out)
}

/// Uniform in the open interval (0, 1).
fn open_unit(rng: &mut Rng) -> f64 {
    loop {
        let t: f64 = rng.random();
        if t > 0.0 {
            return t;
        }
    }
}

/// The label-engineering subsample: `ceil(sqrt(n))` rows drawn without
/// replacement (kept in original order) and the KD-tree of leaf capacity
/// `ceil(n^(1/4))` built over them.
pub fn smooth_clusters(train: &WarningDataset, rng: &mut Rng) -> Result<(WarningDataset, KdTree)> {
    let n = train.n();
    if n < 2 {
        return Err(Error::TooFewRows { have: n, need: 2 });
    }
    let keep = ceil_root(n, 2);
    let capacity = ceil_root(n, 4);
    let mut idx = sample(rng, n, keep).into_vec();
    idx.sort_unstable();
    let sub = train.subset(&idx);
    let tree = KdTree::build(&sub.features, capacity)?;
    Ok((sub, tree))
}

/// Keeps `ceil(sqrt(n))` random rows and relabels each KD-tree leaf with
/// its label mode (ties go to 0). Returns the relabelled rows and the
/// number of labels consulted.
pub fn smooth(train: &WarningDataset, rng_seed: u64) -> Result<(WarningDataset, usize)> {
    let mut rng = seed::rng(rng_seed);
    let (mut sub, tree) = smooth_clusters(train, &mut rng)?;
    for leaf in tree.leaves() {
        let ones = leaf.iter().filter(|&&i| sub.labels[i] == 1).count();
        let mode = u8::from(2 * ones > leaf.len());
        for &i in leaf {
            sub.labels[i] = mode;
        }
    }
    let used = sub.n();
    Ok((sub, used))
}

/// Adds concentric boxes of synthetic minority points around every
/// minority row. Box `i` has half-width `i * box_step * range_j` along
/// feature `j`, with points drawn uniformly over its surface.
///
/// The per-box count is `points_per_box`, raised when needed so that the
/// former minority ends up strictly larger than the former majority.
pub fn ghost(train: &WarningDataset, params: GhostParams, rng_seed: u64) -> Result<WarningDataset> {
    Treatment::Ghost(params).validate()?;
    if !train.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let label = train.minority_label();
    let counts = train.class_counts();
    let (n_min, n_maj) = (counts[label as usize], counts[1 - label as usize]);
    let boxes = ghost_box_count(train.n(), n_min);
    if boxes == 0 {
        return Ok(train.clone());
    }
    let d = train.d();
    let reversal = (n_maj - n_min + 1).div_ceil(n_min * boxes);
    let per_box = params.points_per_box_for(d).max(reversal);

    let mut step = vec![0.0; d];
    for (j, s) in step.iter_mut().enumerate() {
        let (lo, hi) = train
            .features
            .iter_rows()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])));
        *s = params.box_step * (hi - lo);
    }

    let mut rng = seed::rng(rng_seed);
    let mut out = train.clone();
    let mut half = vec![0.0; d];
    let mut point = vec![0.0; d];
    for i in (0..train.n()).filter(|&i| train.labels[i] == label) {
        let center = train.features.row(i);
        for b in 1..=boxes {
            for (h, s) in half.iter_mut().zip(&step) {
                *h = b as f64 * s;
            }
            for _ in 0..per_box {
                sample_box_surface(center, &half, &mut rng, &mut point);
                out.push(&point, label, train.timestamps[i]);
            }
        }
    }
    Ok(out)
}

/// Uniform sample from the surface of the axis-aligned box `center ± half`.
/// Face `j` has area proportional to `prod(half) / half[j]`. A box that is
/// flat along some axis is its own surface, so those axes stay at the
/// center and the rest are uniform.
fn sample_box_surface(center: &[f64], half: &[f64], rng: &mut Rng, out: &mut [f64]) {
    let flat: Vec<usize> = (0..half.len()).filter(|&j| half[j] <= 0.0).collect();
    let face = if flat.is_empty() {
        let total: f64 = half.iter().map(|h| 1.0 / h).sum();
        let mut u = rng.random::<f64>() * total;
        let mut face = half.len() - 1;
        for (j, h) in half.iter().enumerate() {
            u -= 1.0 / h;
            if u < 0.0 {
                face = j;
                break;
            }
        }
        Some(face)
    } else {
        None
    };
    for j in 0..half.len() {
        out[j] = if half[j] <= 0.0 {
            center[j]
        } else {
            center[j] + half[j] * rng.random_range(-1.0..=1.0)
        };
    }
    if let Some(j) = face {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        out[j] = center[j] + sign * half[j];
    }
}

/// Result of running a plan over a training set.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub data: WarningDataset,
    /// Labels consulted: the SMOOTH budget when SMOOTH ran, else `train.n`.
    pub labels_used: usize,
    /// Steps skipped in lenient mode, as `(position, error message)`.
    pub skipped: Vec<(usize, String)>,
}

/// Applies the plan's steps left to right. Step `i` draws from
/// `seed::derive(rng_seed, ["step", i])`. In lenient mode a failing step is
/// skipped with a warning instead of aborting the plan.
pub fn apply_plan(train: &WarningDataset, plan: &TreatmentPlan, rng_seed: u64, lenient: bool) -> Result<PlanOutcome> {
    let mut data = train.clone();
    let mut labels_used = train.n();
    let mut skipped = Vec::new();
    for (i, step) in plan.steps.iter().enumerate() {
        let s = seed::derive(rng_seed, &["step", &i.to_string()]);
        let res = match step {
            Treatment::Smooth => smooth(&data, s).map(|(d, used)| {
                labels_used = used;
                d
            }),
            Treatment::Smote(p) => smote(&data, *p, s),
            Treatment::Ghost(p) => ghost(&data, *p, s),
        };
        match res {
            Ok(d) => data = d,
            Err(e) if lenient => {
                warn!("skipping step {i} ({}) of plan `{plan}`: {e}", step.name());
                skipped.push((i, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PlanOutcome {
        data,
        labels_used,
        skipped,
    })
}
