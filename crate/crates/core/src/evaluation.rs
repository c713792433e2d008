//! Metrics, the ablation recipes, per-cell runs and report aggregation.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize, time_split, TrainTestSplit, WarningDataset};
use crate::error::{Error, Result};
use crate::learners::{predict, train, HyperParamSpace, LearnerConfig, LearnerKind, Model, TrainOptions};
use crate::seed;
use crate::treatments::{apply_plan, TreatmentPlan};
use crate::tuner::{dodge, inner_split, objective, DodgeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Counts with class 1 (actionable) as the positive class.
pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionCounts> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t == 1, p == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub false_alarm: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub false_alarm_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Precision `TP/(TP+FP)`, recall `TP/(TP+FN)` and false-alarm rate
/// `FP/(FP+TN)`. A zero denominator gives 0 and sets the matching flag.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    let (false_alarm, false_alarm_undefined) = ratio(c.fp, c.fp + c.tn);
    Metrics {
        precision,
        recall,
        false_alarm,
        precision_undefined,
        recall_undefined,
        false_alarm_undefined,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Auc {
    pub value: f64,
    /// One class is absent; `value` is then 0.5.
    pub undefined: bool,
}

/// Rank (Mann-Whitney) AUC: the share of positive/negative pairs where the
/// positive scores higher, ties counting one half.
pub fn auc(y_true: &[u8], scores: &[f64]) -> Result<Auc> {
    if y_true.len() != scores.len() {
        return Err(Error::LengthMismatch {
            left: y_true.len(),
            right: scores.len(),
        });
    }
    let pos = y_true.iter().filter(|&&y| y == 1).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(Auc {
            value: 0.5,
            undefined: true,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the Mann-Whitney U, kept integral so ties stay exact
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let (mut p, mut q) = (0u128, 0u128);
        for &k in &order[i..j] {
            if y_true[k] == 1 {
                p += 1;
            } else {
                q += 1;
            }
        }
        twice_u += p * (2 * neg_below + q);
        neg_below += q;
        i = j;
    }
    Ok(Auc {
        value: twice_u as f64 / (2 * pos as u128 * neg as u128) as f64,
        undefined: false,
    })
}

/// What AUC is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AucMode {
    /// Continuous learner scores.
    #[default]
    Scores,
    /// The 0/1 predictions.
    Labels,
}

impl FromStr for AucMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scores" => Ok(Self::Scores),
            "labels" => Ok(Self::Labels),
            _ => Err(Error::InvalidParameter(format!("unknown AUC mode `{s}`"))),
        }
    }
}

/// Which learners a recipe trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    FeedForward,
    /// Logistic regression, CART, random forest and SVM; the one with the
    /// best inner-validation objective is kept.
    Traditional,
}

/// A treatment plan plus a learner family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub plan: TreatmentPlan,
    pub family: Family,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TreatmentId {
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
    A7,
    B1,
    C1,
    D1,
}

impl TreatmentId {
    pub const ALL: [TreatmentId; 10] = [
        TreatmentId::A1,
        TreatmentId::A2,
        TreatmentId::A3,
        TreatmentId::A4,
        TreatmentId::A5,
        TreatmentId::A6,
        TreatmentId::A7,
        TreatmentId::B1,
        TreatmentId::C1,
        TreatmentId::D1,
    ];

    pub fn recipe(&self) -> Recipe {
        let a1 = TreatmentPlan::canonical();
        let (plan, family) = match self {
            TreatmentId::A1 => (a1, Family::FeedForward),
            TreatmentId::A2 => (a1.without("smote"), Family::FeedForward),
            TreatmentId::A3 => (TreatmentPlan { tune: false, ..a1 }, Family::FeedForward),
            TreatmentId::A4 => (a1.without("ghost"), Family::FeedForward),
            TreatmentId::A5 => (a1.without("smooth"), Family::FeedForward),
            TreatmentId::A6 => (a1.without("smooth"), Family::Traditional),
            TreatmentId::A7 => (a1, Family::Traditional),
            TreatmentId::B1 => (a1.without("ghost"), Family::Traditional),
            TreatmentId::C1 => (a1.without("ghost").without("smooth"), Family::Traditional),
            TreatmentId::D1 => (TreatmentPlan::identity(), Family::Traditional),
        };
        Recipe { plan, family }
    }

    pub fn description(&self) -> &'static str {
        match self {
            TreatmentId::A1 => "full recipe on a feedforward network, 10% labels",
            TreatmentId::A2 => "A1 without SMOTE",
            TreatmentId::A3 => "A1 without DODGE",
            TreatmentId::A4 => "A1 without GHOST",
            TreatmentId::A5 => "A1 without SMOOTH",
            TreatmentId::A6 => "A5 with traditional learners",
            TreatmentId::A7 => "A1 with traditional learners",
            TreatmentId::B1 => "A4 with traditional learners",
            TreatmentId::C1 => "A1 without GHOST or SMOOTH, traditional learners",
            TreatmentId::D1 => "untreated, untuned traditional learners",
        }
    }
}

impl fmt::Display for TreatmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for TreatmentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        Self::ALL
            .into_iter()
            .find(|t| t.to_string() == up)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown treatment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    pub dodge: DodgeParams,
    pub train: TrainOptions,
    pub auc_mode: AucMode,
    pub lenient: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellStatus {
    Ok,
    Error(String),
}

impl fmt::Display for CellStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellStatus::Ok => f.write_str("ok"),
            CellStatus::Error(_) => f.write_str("error"),
        }
    }
}

/// One (project, treatment, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub project: String,
    pub treatment: String,
    pub seed: u64,
    pub precision: f64,
    pub auc: f64,
    pub false_alarm: f64,
    pub recall: f64,
    pub labels_used: usize,
    pub status: CellStatus,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub auc_undefined: bool,
    /// Display form of the learner configuration finally trained.
    pub learner: String,
    pub warnings: Vec<String>,
    /// `(learner kind, evaluation log CSV)` for every DODGE run.
    pub tuning_logs: Vec<(String, String)>,
    pub runtime_ms: u128,
}

impl EvalReport {
    fn failed(project: &str, treatment: &str, seed: u64, err: &Error) -> Self {
        Self {
            project: project.into(),
            treatment: treatment.into(),
            seed,
            precision: 0.0,
            auc: 0.0,
            false_alarm: 0.0,
            recall: 0.0,
            labels_used: 0,
            status: CellStatus::Error(err.to_string()),
            counts: ConfusionCounts::default(),
            metrics: Metrics::default(),
            auc_undefined: false,
            learner: String::new(),
            warnings: Vec::new(),
            tuning_logs: Vec::new(),
            runtime_ms: 0,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    pub fn value(&self, m: Metric) -> f64 {
        match m {
            Metric::Precision => self.precision,
            Metric::Auc => self.auc,
            Metric::FalseAlarm => self.false_alarm,
            Metric::Recall => self.recall,
        }
    }
}

/// Output of training a recipe's learner on a treated training set.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Model,
    pub labels_used: usize,
    pub treated: WarningDataset,
    pub warnings: Vec<String>,
    pub tuning_logs: Vec<(String, String)>,
}

/// Treats a normalized training set and trains the recipe's learner on it.
pub fn fit_recipe(train_data: &WarningDataset, recipe: &Recipe, rng_seed: u64, opts: &EvalOptions) -> Result<Fitted> {
    let outcome = apply_plan(train_data, &recipe.plan, seed::derive(rng_seed, &["plan"]), opts.lenient)?;
    let treated = outcome.data;
    let mut warnings: Vec<String> = outcome.skipped.iter().map(|(i, e)| format!("skipped step {i}: {e}")).collect();
    let kinds: &[LearnerKind] = match recipe.family {
        Family::FeedForward => &[LearnerKind::FeedForward],
        Family::Traditional => &LearnerKind::TRADITIONAL,
    };
    let inner = if kinds.len() > 1 && !recipe.plan.tune {
        inner_split(&treated, seed::derive(rng_seed, &["select"]))
    } else {
        None
    };
    let mut tuning_logs = Vec::new();
    let mut best: Option<(crate::learners::Hyper, Option<f64>)> = None;
    for &kind in kinds {
        let kind_seed = seed::derive(rng_seed, &["tune", kind.short_name()]);
        let (hyper, score) = if recipe.plan.tune {
            let tuned = dodge(&HyperParamSpace::for_kind(kind), &treated, opts.dodge, kind_seed, &opts.train)?;
            warnings.extend(tuned.warning.clone());
            tuning_logs.push((kind.short_name().to_string(), tuned.state.log_csv()));
            (tuned.hyper, tuned.objective)
        } else {
            let hyper = HyperParamSpace::default_hyper(kind);
            let score = match &inner {
                Some(inner) if kinds.len() > 1 => Some(objective(hyper, inner, kind_seed, &opts.train)?),
                _ => None,
            };
            (hyper, score)
        };
        let better = match &best {
            None => true,
            Some((_, prev)) => score.unwrap_or(f64::NEG_INFINITY) > prev.unwrap_or(f64::NEG_INFINITY),
        };
        if better {
            best = Some((hyper, score));
        }
    }
    let (hyper, _) = best.ok_or(Error::EmptySpace)?;
    let config = LearnerConfig::new(hyper, seed::derive(rng_seed, &["final"]));
    let model = train(&treated, &config, &opts.train)?;
    warnings.extend(model.meta.warning.clone());
    Ok(Fitted {
        model,
        labels_used: outcome.labels_used,
        treated,
        warnings,
        tuning_logs,
    })
}

/// Normalizes the split, treats and fits on the training part only, then
/// scores once on the untouched test part.
pub fn run_recipe(split: &TrainTestSplit, name: &str, recipe: &Recipe, rng_seed: u64, opts: &EvalOptions) -> Result<EvalReport> {
    let started = Instant::now();
    let test_digest = split.test.digest();
    let (scaled, _) = normalize(split);
    let fitted = fit_recipe(&scaled.train, recipe, rng_seed, opts)?;
    let pred = predict(&fitted.model, &scaled.test.features)?;
    if split.test.digest() != test_digest {
        return Err(Error::InvalidDataset("test set changed during a run".into()));
    }
    let counts = confusion(&scaled.test.labels, &pred.labels)?;
    let m = metrics(&counts);
    let a = match opts.auc_mode {
        AucMode::Scores => auc(&scaled.test.labels, &pred.scores)?,
        AucMode::Labels => {
            let hard: Vec<f64> = pred.labels.iter().map(|&l| f64::from(l)).collect();
            auc(&scaled.test.labels, &hard)?
        }
    };
    Ok(EvalReport {
        project: split.test.project.clone(),
        treatment: name.into(),
        seed: rng_seed,
        precision: m.precision,
        auc: a.value,
        false_alarm: m.false_alarm,
        recall: m.recall,
        labels_used: fitted.labels_used,
        status: CellStatus::Ok,
        counts,
        metrics: m,
        auc_undefined: a.undefined,
        learner: fitted.model.config.hyper.to_string(),
        warnings: fitted.warnings,
        tuning_logs: fitted.tuning_logs,
        runtime_ms: started.elapsed().as_millis(),
    })
}

pub fn run_treatment(split: &TrainTestSplit, treatment: TreatmentId, rng_seed: u64, opts: &EvalOptions) -> Result<EvalReport> {
    run_recipe(split, &treatment.to_string(), &treatment.recipe(), rng_seed, opts)
}

/// One unit of work for [`run_cells`].
#[derive(Debug, Clone)]
pub struct Cell {
    pub dataset: usize,
    pub name: String,
    pub recipe: Recipe,
    pub master_seed: u64,
}

/// Per-cell seed: depends on the project, the treatment and the master seed
/// only, so adding projects or treatments leaves other cells unchanged.
pub fn cell_seed(master: u64, project: &str, treatment: &str) -> u64 {
    seed::derive(master, &["cell", project, treatment])
}

/// Runs every cell (concurrently on the current rayon pool) and returns the
/// reports in cell order. Failures become reports with an error status.
pub fn run_cells(datasets: &[WarningDataset], cells: &[Cell], train_fraction: f64, opts: &EvalOptions) -> Vec<EvalReport> {
    cells
        .par_iter()
        .map(|cell| {
            let data = &datasets[cell.dataset];
            let s = cell_seed(cell.master_seed, &data.project, &cell.name);
            let res = time_split(data, train_fraction).and_then(|split| run_recipe(&split, &cell.name, &cell.recipe, s, opts));
            match res {
                Ok(mut r) => {
                    r.seed = cell.master_seed;
                    r
                }
                Err(e) => {
                    log::error!("{} / {} / seed {}: {e}", data.project, cell.name, cell.master_seed);
                    EvalReport::failed(&data.project, &cell.name, cell.master_seed, &e)
                }
            }
        })
        .collect()
}

/// Every (dataset, treatment, seed) combination, datasets outermost.
pub fn ablation(datasets: &[WarningDataset], treatments: &[TreatmentId], seeds: &[u64], train_fraction: f64, opts: &EvalOptions) -> Vec<EvalReport> {
    let mut cells = Vec::new();
    for d in 0..datasets.len() {
        for t in treatments {
            for &s in seeds {
                cells.push(Cell {
                    dataset: d,
                    name: t.to_string(),
                    recipe: t.recipe(),
                    master_seed: s,
                });
            }
        }
    }
    run_cells(datasets, &cells, train_fraction, opts)
}

pub const RESULTS_HEADER: &str = "project,treatment,seed,precision,auc,false_alarm,recall,labels_used,status";

/// Reports as CSV under [`RESULTS_HEADER`].
pub fn results_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.project, r.treatment, r.seed, r.precision, r.auc, r.false_alarm, r.recall, r.labels_used, r.status
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Precision,
    Auc,
    FalseAlarm,
    Recall,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Precision, Metric::Auc, Metric::FalseAlarm, Metric::Recall];

    pub fn lower_is_better(&self) -> bool {
        *self == Metric::FalseAlarm
    }

    /// Whether `a` beats `b` strictly.
    pub fn better(&self, a: f64, b: f64) -> bool {
        if self.lower_is_better() {
            a < b
        } else {
            a > b
        }
    }

    pub fn title(&self) -> &'static str {
        match self {
            Metric::Precision => "Precision (higher is better)",
            Metric::Auc => "AUC (higher is better)",
            Metric::FalseAlarm => "False alarm rate (lower is better)",
            Metric::Recall => "Recall (higher is better)",
        }
    }
}

/// How a median of an even count is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MedianPolicy {
    /// The lower of the two middle values.
    #[default]
    LowerMiddle,
    /// The mean of the two middle values.
    MeanOfMiddles,
}

pub fn median(values: &[f64], policy: MedianPolicy) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        match policy {
            MedianPolicy::LowerMiddle => v[n / 2 - 1],
            MedianPolicy::MeanOfMiddles => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        }
    })
}

/// One metric block: per treatment, the per-project values (median over
/// seeds of the successful cells), their median, and how many projects beat
/// the reference treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricBlock {
    pub metric: Metric,
    pub rows: Vec<BlockRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockRow {
    pub treatment: String,
    pub values: Vec<Option<f64>>,
    pub median: Option<f64>,
    /// `None` when the reference treatment is absent.
    pub better_than_reference: Option<usize>,
    /// Per project: strictly worse than the reference.
    pub worse: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub projects: Vec<String>,
    pub treatments: Vec<String>,
    pub reference: String,
    pub blocks: Vec<MetricBlock>,
}

impl AblationTable {
    /// Projects and treatments keep their order of first appearance.
    pub fn build(reports: &[EvalReport], reference: &str, policy: MedianPolicy) -> Self {
        let mut projects: Vec<String> = Vec::new();
        let mut treatments: Vec<String> = Vec::new();
        for r in reports {
            if !projects.contains(&r.project) {
                projects.push(r.project.clone());
            }
            if !treatments.contains(&r.treatment) {
                treatments.push(r.treatment.clone());
            }
        }
        let cell = |m: Metric, t: &str, p: &str| -> Option<f64> {
            let vals: Vec<f64> = reports
                .iter()
                .filter(|r| r.is_ok() && r.treatment == t && r.project == p)
                .map(|r| r.value(m))
                .collect();
            median(&vals, policy)
        };
        let blocks = Metric::ALL
            .iter()
            .map(|&metric| {
                let reference_values: Option<Vec<Option<f64>>> = treatments
                    .iter()
                    .any(|t| t == reference)
                    .then(|| projects.iter().map(|p| cell(metric, reference, p)).collect());
                let rows = treatments
                    .iter()
                    .map(|t| {
                        let values: Vec<Option<f64>> = projects.iter().map(|p| cell(metric, t, p)).collect();
                        let present: Vec<f64> = values.iter().flatten().copied().collect();
                        let compare = |want_better: bool| -> Vec<bool> {
                            values
                                .iter()
                                .enumerate()
                                .map(|(i, v)| match (v, reference_values.as_ref().and_then(|r| r[i])) {
                                    (Some(v), Some(r)) => {
                                        if want_better {
                                            metric.better(*v, r)
                                        } else {
                                            metric.better(r, *v)
                                        }
                                    }
                                    _ => false,
                                })
                                .collect()
                        };
                        BlockRow {
                            treatment: t.clone(),
                            median: median(&present, policy),
                            better_than_reference: reference_values
                                .as_ref()
                                .map(|_| compare(true).into_iter().filter(|&b| b).count()),
                            worse: compare(false),
                            values,
                        }
                    })
                    .collect();
                MetricBlock { metric, rows }
            })
            .collect();
        Self {
            projects,
            treatments,
            reference: reference.into(),
            blocks,
        }
    }

    /// Markdown with one table per metric; `*` marks values worse than the
    /// reference treatment on that project.
    pub fn render(&self) -> String {
        let mut out = String::from("# Results\n");
        for block in &self.blocks {
            let _ = write!(out, "\n## {}\n\n| treatment |", block.metric.title());
            for p in &self.projects {
                let _ = write!(out, " {p} |");
            }
            let _ = writeln!(out, " median | better than {} |", self.reference);
            out.push_str("|---|");
            for _ in &self.projects {
                out.push_str("---:|");
            }
            out.push_str("---:|---:|\n");
            for row in &block.rows {
                let _ = write!(out, "| {} |", row.treatment);
                for (v, worse) in row.values.iter().zip(&row.worse) {
                    match v {
                        Some(v) => {
                            let _ = write!(out, " {v:.2}{} |", if *worse { "*" } else { "" });
                        }
                        None => out.push_str(" err |"),
                    }
                }
                match row.median {
                    Some(m) => {
                        let _ = write!(out, " {m:.2} |");
                    }
                    None => out.push_str(" err |"),
                }
                match row.better_than_reference {
                    Some(c) => {
                        let _ = writeln!(out, " {c} |");
                    }
                    None => out.push_str(" - |\n"),
                }
            }
        }
        let _ = writeln!(out, "\n`*` marks a value worse than {} on that project.", self.reference);
        out
    }
}
