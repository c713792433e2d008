//! DODGE: hyper-parameter search that treats outcomes within `±epsilon` of
//! an earlier outcome as redundant and steers away from the options that
//! produced them.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};

use crate::dataset::WarningDataset;
use crate::error::{Error, Result};
use crate::evaluation::{confusion, metrics};
use crate::learners::{predict, train, Hyper, HyperParamSpace, LearnerConfig, TrainOptions};
use crate::seed::{self, Rng};

pub const DEFAULT_BUDGET: usize = 30;
pub const DEFAULT_EPSILON: f64 = 0.2;
/// Share of each class kept for inner training.
pub const INNER_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DodgeParams {
    pub budget: usize,
    pub epsilon: f64,
}

impl Default for DodgeParams {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl DodgeParams {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidParameter("budget must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon {} must be > 0", self.epsilon)));
        }
        Ok(())
    }

    /// Iterations drawn uniformly before the weights steer the search.
    pub fn exploration(&self) -> usize {
        self.budget.div_ceil(3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    /// Option index per dimension.
    pub choice: Vec<usize>,
    pub label: String,
    pub objective: f64,
    /// Whether the outcome fell within `±epsilon` of an earlier one.
    pub tabu: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DodgeState {
    /// One weight per option per dimension.
    pub weights: Vec<Vec<i64>>,
    pub log: Vec<LogEntry>,
    pub params: DodgeParams,
}

impl DodgeState {
    pub fn new(dims: &[usize], params: DodgeParams) -> Self {
        Self {
            weights: dims.iter().map(|&n| vec![0; n]).collect(),
            log: Vec::new(),
            params,
        }
    }

    /// Highest logged objective; ties go to the earliest entry.
    pub fn best(&self) -> Option<&LogEntry> {
        self.log.iter().fold(None, |best: Option<&LogEntry>, e| match best {
            Some(b) if b.objective >= e.objective => Some(b),
            _ => Some(e),
        })
    }

    fn score(&self, choice: &[usize]) -> i64 {
        choice.iter().zip(&self.weights).map(|(&o, w)| w[o]).sum()
    }

    /// Logs one outcome and moves the weights of the options used: down by
    /// one when the outcome is within `±epsilon` of an earlier one, up by
    /// one otherwise.
    pub fn record(&mut self, choice: Vec<usize>, label: String, objective: f64) {
        let tabu = self.log.iter().any(|e| (e.objective - objective).abs() <= self.params.epsilon);
        let delta = if tabu { -1 } else { 1 };
        for (w, &o) in self.weights.iter_mut().zip(&choice) {
            w[o] += delta;
        }
        self.log.push(LogEntry {
            iteration: self.log.len(),
            choice,
            label,
            objective,
            tabu,
        });
    }

    /// The evaluation log as CSV with header `iteration,config,objective`.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iteration,config,objective\n");
        for e in &self.log {
            let _ = writeln!(out, "{},\"{}\",{}", e.iteration, e.label.replace('"', "\"\""), e.objective);
        }
        out
    }

    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.log_csv())?;
        Ok(())
    }
}

fn all_choices(dims: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in dims {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..n).map(move |o| {
                    let mut v = p.clone();
                    v.push(o);
                    v
                })
            })
            .collect();
    }
    out
}

/// Runs the search over a mixed-radix space with `dims[i]` options on
/// dimension `i`. Each configuration is evaluated at most once, so exactly
/// `min(budget, |space|)` calls are made to `evaluate`.
pub fn search<E>(dims: &[usize], params: DodgeParams, rng: &mut Rng, label: impl Fn(&[usize]) -> String, mut evaluate: E) -> Result<DodgeState>
where
    E: FnMut(&[usize]) -> Result<f64>,
{
    params.validate()?;
    let mut pending = all_choices(dims);
    if pending.is_empty() || dims.contains(&0) {
        return Err(Error::EmptySpace);
    }
    let mut state = DodgeState::new(dims, params);
    let explore = params.exploration();
    while state.log.len() < params.budget && !pending.is_empty() {
        let pick = if state.log.len() < explore {
            pending.choose(rng).cloned()
        } else {
            let top = pending.iter().map(|c| state.score(c)).max();
            let best: Vec<&Vec<usize>> = pending.iter().filter(|c| Some(state.score(c)) == top).collect();
            best.choose(rng).map(|c| (*c).clone())
        };
        let Some(choice) = pick else { break };
        pending.retain(|c| *c != choice);
        let objective = evaluate(&choice)?;
        let name = label(&choice);
        state.record(choice, name, objective);
    }
    Ok(state)
}

/// Fixed inner train/validation split of a treated training set.
#[derive(Debug, Clone)]
pub struct InnerSplit {
    pub train: WarningDataset,
    pub valid: WarningDataset,
    pub stratified: bool,
}

fn both_classes(d: &WarningDataset) -> bool {
    d.has_both_classes()
}

/// Stratified 80/20 shuffle split; falls back to an unstratified shuffle
/// when a side would miss a class, and to `None` when that fails too.
pub fn inner_split(data: &WarningDataset, seed: u64) -> Option<InnerSplit> {
    let mut rng = seed::rng(seed);
    let mut train_idx = Vec::new();
    let mut valid_idx = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..data.n()).filter(|&i| data.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let cut = (idx.len() as f64 * INNER_TRAIN_FRACTION).floor() as usize;
        train_idx.extend_from_slice(&idx[..cut]);
        valid_idx.extend_from_slice(&idx[cut..]);
    }
    train_idx.sort_unstable();
    valid_idx.sort_unstable();
    let split = InnerSplit {
        train: data.subset(&train_idx),
        valid: data.subset(&valid_idx),
        stratified: true,
    };
    if both_classes(&split.train) && both_classes(&split.valid) {
        return Some(split);
    }
    let mut idx: Vec<usize> = (0..data.n()).collect();
    idx.shuffle(&mut rng);
    let cut = (data.n() as f64 * INNER_TRAIN_FRACTION).floor() as usize;
    let (mut a, mut b) = (idx[..cut].to_vec(), idx[cut..].to_vec());
    a.sort_unstable();
    b.sort_unstable();
    let split = InnerSplit {
        train: data.subset(&a),
        valid: data.subset(&b),
        stratified: false,
    };
    (both_classes(&split.train) && both_classes(&split.valid)).then_some(split)
}

/// Recall minus false-alarm rate of `hyper` trained on the inner training
/// part and scored on the validation part. A network that diverges scores
/// the worst possible value, -1.
pub fn objective(hyper: Hyper, inner: &InnerSplit, seed: u64, opts: &TrainOptions) -> Result<f64> {
    let config = LearnerConfig::new(hyper, seed);
    let model = match train(&inner.train, &config, opts) {
        Ok(m) => m,
        Err(Error::NonFiniteLoss { .. }) => return Ok(-1.0),
        Err(e) => return Err(e),
    };
    let pred = predict(&model, &inner.valid.features)?;
    let m = metrics(&confusion(&inner.valid.labels, &pred.labels)?);
    Ok(m.recall - m.false_alarm)
}

#[derive(Debug, Clone)]
pub struct Tuned {
    pub hyper: Hyper,
    /// Inner-validation objective of `hyper`; `None` when no usable inner
    /// split existed.
    pub objective: Option<f64>,
    pub state: DodgeState,
    pub warning: Option<String>,
}

/// Tunes one learner kind on `treated_train` only.
pub fn dodge(space: &HyperParamSpace, treated_train: &WarningDataset, params: DodgeParams, seed: u64, opts: &TrainOptions) -> Result<Tuned> {
    params.validate()?;
    let dims: Vec<usize> = space.dims.iter().map(|d| d.options.len()).collect();
    let mut rng = seed::rng(seed::derive(seed, &["dodge"]));
    let Some(inner) = inner_split(treated_train, seed::derive(seed, &["inner"])) else {
        let all = space.enumerate();
        let pick = all.choose(&mut rng).ok_or(Error::EmptySpace)?;
        let msg = "inner split lacks a class; returning a random configuration".to_string();
        log::warn!("{msg}");
        return Ok(Tuned {
            hyper: space.hyper(pick),
            objective: None,
            state: DodgeState::new(&dims, params),
            warning: Some(msg),
        });
    };
    let fit_seed = seed::derive(seed, &["fit"]);
    let state = search(
        &dims,
        params,
        &mut rng,
        |c| space.hyper(c).to_string(),
        |c| objective(space.hyper(c), &inner, fit_seed, opts),
    )?;
    let best = state.best().ok_or(Error::EmptySpace)?;
    Ok(Tuned {
        hyper: space.hyper(&best.choice),
        objective: Some(best.objective),
        warning: None,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_config_space_is_evaluated_once() {
        let mut calls = 0;
        let state = search(&[1, 1], DodgeParams::default(), &mut seed::rng(0), |_| "only".into(), |_| {
            calls += 1;
            Ok(0.3)
        })
        .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(state.best().unwrap().choice, vec![0, 0]);
    }

    #[test]
    fn fits_never_exceed_budget_and_configs_are_distinct() {
        for dims in [vec![5, 8], vec![2, 4], vec![3, 3, 3, 3]] {
            let mut seen = Vec::new();
            let state = search(&dims, DodgeParams::default(), &mut seed::rng(4), |c| format!("{c:?}"), |c| {
                seen.push(c.to_vec());
                Ok((c.iter().sum::<usize>() % 4) as f64 * 0.1)
            })
            .unwrap();
            let size: usize = dims.iter().product();
            assert_eq!(seen.len(), size.min(30));
            let mut uniq = seen.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), seen.len());
            assert_eq!(state.log.len(), seen.len());
        }
    }

    #[test]
    fn best_is_max_with_earliest_tie() {
        let mut s = DodgeState::new(&[3], DodgeParams::default());
        s.record(vec![0], "a".into(), 0.1);
        s.record(vec![1], "b".into(), 0.5);
        s.record(vec![2], "c".into(), 0.5);
        assert_eq!(s.best().unwrap().label, "b");
    }

    #[test]
    fn tabu_lowers_weights() {
        let mut s = DodgeState::new(&[2, 2], DodgeParams::default());
        s.record(vec![0, 1], "x".into(), 0.5);
        assert_eq!(s.weights, vec![vec![1, 0], vec![0, 1]]);
        s.record(vec![0, 0], "y".into(), 0.6);
        assert_eq!(s.weights, vec![vec![0, 0], vec![-1, 1]]);
        assert!(s.log[1].tabu);
    }

    #[test]
    fn log_csv_layout() {
        let mut s = DodgeState::new(&[1], DodgeParams::default());
        s.record(vec![0], "ffnet(layers=2;units=3)".into(), 0.25);
        assert_eq!(s.log_csv(), "iteration,config,objective\n0,\"ffnet(layers=2;units=3)\",0.25\n");
    }

    #[test]
    fn inner_split_is_stratified() {
        let x: Vec<[f64; 1]> = (0..50).map(|i| [i as f64]).collect();
        let labels: Vec<u8> = (0..50).map(|i| u8::from(i % 5 == 0)).collect();
        let d = WarningDataset::from_parts("p", crate::Matrix::from_rows(&x), labels).unwrap();
        let s = inner_split(&d, 1).unwrap();
        assert!(s.stratified);
        assert_eq!(s.train.class_counts(), [32, 8]);
        assert_eq!(s.valid.class_counts(), [8, 2]);
    }

    #[test]
    fn degenerate_inner_split() {
        let x: Vec<[f64; 1]> = (0..4).map(|i| [i as f64]).collect();
        let d = WarningDataset::from_parts("p", crate::Matrix::from_rows(&x), vec![0, 0, 0, 1]).unwrap();
        // the single positive cannot sit on both sides
        assert!(inner_split(&d, 3).is_none());
    }
}
