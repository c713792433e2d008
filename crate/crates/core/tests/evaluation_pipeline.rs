use std::collections::BTreeMap;

use ghost2_core::dataset::{normalize, time_split};
use ghost2_core::evaluation::{
    ablation, fit_recipe, results_csv, run_treatment, AblationTable, EvalOptions, MedianPolicy, Metric, TreatmentId, RESULTS_HEADER,
};
use ghost2_core::learners::TrainOptions;
use ghost2_core::synthetic::{benchmark, xor_gaussians};
use ghost2_core::treatments::ceil_root;
use ghost2_core::tuner::DodgeParams;
use ghost2_core::{Matrix, WarningDataset};

fn quick() -> EvalOptions {
    EvalOptions {
        dodge: DodgeParams { budget: 4, epsilon: 0.2 },
        train: TrainOptions { epochs: 30, ..TrainOptions::default() },
        ..EvalOptions::default()
    }
}

#[test]
fn d1_trains_on_the_untouched_training_set() {
    let split = time_split(&benchmark(), 0.8).unwrap();
    let (scaled, _) = normalize(&split);
    let fitted = fit_recipe(&scaled.train, &TreatmentId::D1.recipe(), 3, &quick()).unwrap();
    assert_eq!(fitted.treated.digest(), scaled.train.digest());
    assert_eq!(fitted.labels_used, scaled.train.n());
    assert!(fitted.tuning_logs.is_empty());
    assert_ne!(fitted.model.kind(), ghost2_core::learners::LearnerKind::FeedForward);
}

#[test]
fn labels_used_follow_the_plan() {
    let split = time_split(&benchmark(), 0.8).unwrap();
    let n = split.train.n();
    let opts = quick();
    let a5 = run_treatment(&split, TreatmentId::A5, 1, &opts).unwrap();
    assert_eq!(a5.labels_used, n);
    assert!(a5.learner.starts_with("ffnet"));
    // lenient so a SMOOTH draw that leaves one class cannot abort the cell
    let lenient = EvalOptions { lenient: true, ..opts };
    let a1 = run_treatment(&split, TreatmentId::A1, 1, &lenient).unwrap();
    assert_eq!(a1.labels_used, ceil_root(n, 2));
    assert_eq!(a1.tuning_logs.len(), 1);
    let c1 = run_treatment(&split, TreatmentId::C1, 1, &opts).unwrap();
    assert_eq!(c1.tuning_logs.len(), 4);
    // every tuning log has a header plus at most `budget` rows
    for (_, log) in &c1.tuning_logs {
        assert!(log.lines().count() <= 1 + opts.dodge.budget);
    }
}

#[test]
fn runs_never_touch_the_test_set_and_repeat_exactly() {
    let split = time_split(&benchmark(), 0.8).unwrap();
    let before = split.test.digest();
    let a = run_treatment(&split, TreatmentId::A3, 9, &quick()).unwrap();
    let b = run_treatment(&split, TreatmentId::A3, 9, &quick()).unwrap();
    assert_eq!(split.test.digest(), before);
    assert_eq!((a.precision, a.auc, a.false_alarm, a.recall), (b.precision, b.auc, b.false_alarm, b.recall));
    assert_eq!(a.counts.total(), split.test.n());
}

#[test]
fn failing_cells_become_error_rows() {
    let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0], [4.0], [5.0], [6.0], [7.0], [8.0], [9.0]]);
    let tiny = WarningDataset::from_parts("tiny", x, vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 1]).unwrap();
    let reports = ablation(&[tiny], &[TreatmentId::C1], &[1], 0.8, &quick());
    assert_eq!(reports.len(), 1);
    assert!(!reports[0].is_ok());
    let csv = results_csv(&reports);
    assert!(csv.lines().nth(1).unwrap().ends_with(",error"));
}

struct Row {
    project: String,
    treatment: String,
    values: [f64; 4],
    ok: bool,
}

/// Independent reading of the results CSV.
fn parse(csv: &str) -> Vec<Row> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(RESULTS_HEADER));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 9);
            let num = |i: usize| f[i].parse::<f64>().unwrap();
            Row {
                project: f[0].into(),
                treatment: f[1].into(),
                values: [num(3), num(4), num(5), num(6)],
                ok: f[8] == "ok",
            }
        })
        .collect()
}

fn lower_median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

#[test]
fn ablation_table_matches_a_recount_of_the_csv() {
    let data = vec![
        xor_gaussians("p1", 120, 0.4, 0.5, 1).unwrap(),
        xor_gaussians("p2", 120, 0.3, 0.6, 2).unwrap(),
    ];
    let treatments = [TreatmentId::A1, TreatmentId::C1, TreatmentId::D1];
    let seeds = [1, 2, 3];
    let reports = ablation(&data, &treatments, &seeds, 0.8, &quick());
    assert_eq!(reports.len(), 2 * 3 * 3);
    let rows = parse(&results_csv(&reports));
    let table = AblationTable::build(&reports, "A1", MedianPolicy::LowerMiddle);
    assert_eq!(table.projects, vec!["p1", "p2"]);
    assert_eq!(table.treatments, vec!["A1", "C1", "D1"]);

    // metric index in CSV column order
    let col = |m: Metric| match m {
        Metric::Precision => 0,
        Metric::Auc => 1,
        Metric::FalseAlarm => 2,
        Metric::Recall => 3,
    };
    for block in &table.blocks {
        let mut cells: BTreeMap<(String, String), Option<f64>> = BTreeMap::new();
        for t in &table.treatments {
            for p in &table.projects {
                let vals = rows
                    .iter()
                    .filter(|r| r.ok && &r.treatment == t && &r.project == p)
                    .map(|r| r.values[col(block.metric)])
                    .collect();
                cells.insert((t.clone(), p.clone()), lower_median(vals));
            }
        }
        for row in &block.rows {
            let mut present = Vec::new();
            let mut better = 0;
            for (i, p) in table.projects.iter().enumerate() {
                let v = cells[&(row.treatment.clone(), p.clone())];
                assert_eq!(row.values[i], v);
                let r = cells[&("A1".to_string(), p.clone())];
                let (worse, beats) = match (v, r) {
                    (Some(v), Some(r)) if block.metric == Metric::FalseAlarm => (v > r, v < r),
                    (Some(v), Some(r)) => (v < r, v > r),
                    _ => (false, false),
                };
                assert_eq!(row.worse[i], worse);
                better += usize::from(beats);
                present.extend(v);
            }
            assert_eq!(row.median, lower_median(present));
            assert_eq!(row.better_than_reference, Some(better));
        }
    }
    let md = table.render();
    assert_eq!(md.matches("\n## ").count(), 4);
    let stars: usize = table.blocks.iter().flat_map(|b| &b.rows).flat_map(|r| &r.worse).filter(|&&w| w).count();
    let starred = md.lines().filter(|l| l.starts_with("| ")).map(|l| l.matches("* |").count()).sum::<usize>();
    assert_eq!(starred, stars);
}
