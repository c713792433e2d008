//! Acceptance suite: one PASS/FAIL/SKIP line per criterion. With
//! `GHOST2_ACCEPTANCE_STRICT=1` any failure makes the binary exit non-zero.
//! Criterion 7 and the real-data half of criterion 6 run only when
//! `GHOST2_DATA` is set. A criterion number as the first argument runs
//! only that criterion.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ghost2_core::dataset::{normalize, time_split};
use ghost2_core::evaluation::{ablation, auc, cell_seed, EvalOptions, EvalReport, TreatmentId};
use ghost2_core::geometry::KdTree;
use ghost2_core::landscape::{landscape_pair, smooth_stability, DEFAULT_ALPHA, DEFAULT_GRID};
use ghost2_core::learners::{FfNet, HyperParamSpace, LearnerKind, TrainOptions};
use ghost2_core::synthetic::benchmark;
use ghost2_core::treatments::{ceil_root, ghost, ghost_box_count, smooth, smooth_clusters, smote, GhostParams, SmoteParams};
use ghost2_core::tuner::{dodge, search, DodgeParams};
use ghost2_core::{seed, Matrix, WarningDataset};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};
use rand::Rng as _;
use rayon::prelude::*;

use common::{ghost2, lower_median, s, write_project};

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Verdict {
    status: Status,
    detail: String,
}

impl Verdict {
    fn check(ok: bool, detail: String) -> Self {
        let status = if ok { Status::Pass } else { Status::Fail };
        Self { status, detail }
    }
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    TestRunner::new_with_rng(config, rng)
}

fn within(limit: Duration, started: Instant) -> (bool, String) {
    let t = started.elapsed();
    (t < limit, format!("{:.1} s of {} s", t.as_secs_f64(), limit.as_secs()))
}

// ---------------------------------------------------------------- 1

fn brute_knn(points: &Matrix, q: usize, k: usize, mask: Option<&[bool]>) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = (0..points.rows())
        .filter(|&j| j != q && mask.is_none_or(|m| m[j]))
        .map(|j| (points.row(q).iter().zip(points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum(), j))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(k).map(|(_, j)| j).collect()
}

fn pair_auc(y: &[u8], sc: &[f64]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in (0..y.len()).filter(|&i| y[i] == 1) {
        for j in (0..y.len()).filter(|&j| y[j] == 0) {
            pairs += 1;
            twice += if sc[i] > sc[j] { 2 } else { u64::from(sc[i] == sc[j]) };
        }
    }
    twice as f64 / (2 * pairs) as f64
}

fn criterion_1() -> Verdict {
    let started = Instant::now();
    let datasets = (2usize..=500, 1usize..=20, 1usize..=16, 1usize..=10, any::<u64>()).prop_flat_map(|(n, d, cap, k, mask_seed)| {
        (
            // a coarse value grid makes distance ties common
            prop::collection::vec((0i32..8).prop_map(|v| v as f64 * 0.5), n * d),
            Just((n, d, cap, k.min(n - 1), mask_seed)),
        )
    });
    let knn = runner(100).run(&datasets, |(v, (n, d, cap, k, mask_seed))| {
        let points = Matrix::from_vec(n, d, v);
        let tree = KdTree::build(&points, cap).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut rng = seed::rng(mask_seed);
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        for q in 0..n {
            prop_assert_eq!(tree.knn(q, k, None).unwrap(), brute_knn(&points, q, k, None));
            let avail = (0..n).filter(|&j| j != q && mask[j]).count();
            match tree.knn(q, k, Some(&mask)) {
                Ok(got) => prop_assert_eq!(got, brute_knn(&points, q, k, Some(&mask))),
                Err(_) => prop_assert!(avail < k),
            }
        }
        Ok(())
    });
    let instances = (2usize..300).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..2, n),
            prop::collection::vec((0i32..20).prop_map(|v| v as f64 / 19.0), n),
        )
    });
    let aucs = runner(100).run(&instances, |(y, sc)| {
        let a = auc(&y, &sc).unwrap();
        if y.contains(&0) && y.contains(&1) {
            prop_assert_eq!(a.value, pair_auc(&y, &sc));
        } else {
            prop_assert!(a.undefined);
        }
        Ok(())
    });
    let (fast, time) = within(Duration::from_secs(30), started);
    Verdict::check(
        knn.is_ok() && aucs.is_ok() && fast,
        format!("kNN {}, AUC {}; {time}", outcome(&knn), outcome(&aucs)),
    )
}

fn outcome<T: std::fmt::Debug>(r: &Result<(), proptest::test_runner::TestError<T>>) -> String {
    match r {
        Ok(()) => "exact on all cases".into(),
        Err(e) => format!("mismatch: {e}"),
    }
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Verdict {
    let started = Instant::now();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for net_id in 0..20u64 {
        let mut rng = seed::rng(seed::derive(2, &["net", &net_id.to_string()]));
        let d = rng.random_range(1..=5);
        let layers = rng.random_range(1..=3);
        let units = rng.random_range(1..=5);
        let n = 10;
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect());
        let y: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let w = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let mut net = FfNet::new(d, layers, units, net_id);
        // jitter off the zero-bias initialisation so no unit sits on a ReLU kink
        let theta: Vec<f64> = net.params().iter().map(|p| p + rng.random_range(-0.1..0.1)).collect();
        net.set_params(&theta);
        let (_, analytic) = net.loss_and_grad(&x, &y, w);
        let mut probe = net.clone();
        for k in 0..theta.len() {
            let mut t = theta.clone();
            t[k] += h;
            probe.set_params(&t);
            let up = probe.loss(&x, &y, w);
            t[k] = theta[k] - h;
            probe.set_params(&t);
            let down = probe.loss(&x, &y, w);
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    let (fast, time) = within(Duration::from_secs(10), started);
    Verdict::check(worst < 1e-4 && fast, format!("max relative error {worst:.2e} over 20 nets; {time}"))
}

// ---------------------------------------------------------------- 3

fn imbalanced() -> impl Strategy<Value = WarningDataset> {
    (6usize..120, 1usize..6).prop_flat_map(|(n, d)| {
        (prop::collection::vec(-10.0f64..10.0, n * d), 2usize..=(n / 2), any::<bool>()).prop_map(move |(v, minority, flip)| {
            let labels = (0..n).map(|i| u8::from((i < minority) != flip)).collect();
            WarningDataset::from_parts("p", Matrix::from_vec(n, d, v), labels).unwrap()
        })
    })
}

fn on_segment(p: &[f64], a: &[f64], b: &[f64]) -> bool {
    let Some(j) = (0..p.len()).find(|&j| (b[j] - a[j]).abs() > 1e-9) else {
        return p.iter().zip(a).all(|(x, y)| (x - y).abs() < 1e-9);
    };
    let t = (p[j] - a[j]) / (b[j] - a[j]);
    t > 0.0 && t < 1.0 && (0..p.len()).all(|i| (a[i] + t * (b[i] - a[i]) - p[i]).abs() <= 1e-9 * (1.0 + p[i].abs()))
}

fn criterion_3() -> Verdict {
    let started = Instant::now();
    let smote_res = runner(200).run(&(imbalanced(), any::<u64>()), |(data, sd)| {
        let out = smote(&data, SmoteParams::default(), sd).unwrap();
        let [c0, c1] = out.class_counts();
        prop_assert_eq!(c0, c1);
        let label = data.minority_label();
        let minority: Vec<usize> = (0..data.n()).filter(|&i| data.labels[i] == label).collect();
        let pts = data.features.select_rows(&minority);
        let k = 5.min(minority.len() - 1);
        let hoods: Vec<Vec<usize>> = (0..minority.len()).map(|x| brute_knn(&pts, x, k, None)).collect();
        for i in data.n()..out.n() {
            let row = out.features.row(i);
            prop_assert!((0..minority.len()).any(|x| hoods[x].iter().any(|&r| on_segment(row, pts.row(x), pts.row(r)))));
        }
        Ok(())
    });
    let smooth_res = runner(200).run(&(imbalanced(), any::<u64>()), |(data, sd)| {
        let (out, used) = smooth(&data, sd).unwrap();
        let keep = ceil_root(data.n(), 2);
        prop_assert!(keep * keep >= data.n() && (keep - 1) * (keep - 1) < data.n());
        prop_assert_eq!(out.n(), keep);
        prop_assert_eq!(used, keep);
        let (sub, tree) = smooth_clusters(&data, &mut seed::rng(sd)).unwrap();
        for leaf in tree.leaves() {
            let ones = leaf.iter().filter(|&&i| sub.labels[i] == 1).count();
            let mode = u8::from(ones > leaf.len() - ones);
            prop_assert!(leaf.iter().all(|&i| out.labels[i] == mode));
        }
        Ok(())
    });
    let ghost_res = runner(200).run(&(imbalanced(), any::<u64>()), |(data, sd)| {
        let out = ghost(&data, GhostParams::default(), sd).unwrap();
        let label = data.minority_label();
        let n_min = data.class_counts()[label as usize];
        let n = data.n();
        // B = floor(log2(1 / frac)) with frac = n_min / n
        let boxes = ((n as f64) / (n_min as f64)).log2().floor() as usize;
        prop_assert_eq!(ghost_box_count(n, n_min), boxes);
        if boxes >= 1 {
            let added = out.n() - n;
            prop_assert_eq!(added % (n_min * boxes), 0);
            let after = out.class_counts();
            prop_assert!(after[label as usize] > after[1 - label as usize]);
        } else {
            prop_assert_eq!(out.n(), n);
        }
        Ok(())
    });
    let (fast, time) = within(Duration::from_secs(60), started);
    let ok = smote_res.is_ok() && smooth_res.is_ok() && ghost_res.is_ok() && fast;
    Verdict::check(
        ok,
        format!(
            "200 cases each: SMOTE {}, SMOOTH {}, GHOST {}; {time}",
            outcome(&smote_res),
            outcome(&smooth_res),
            outcome(&ghost_res)
        ),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Verdict {
    let started = Instant::now();
    let dims = [5usize, 8];
    let mut max_fits = 0;
    let mut hits = 0;
    for sd in 0..20u64 {
        let t = seed::derive(sd, &["target"]);
        let star = [(t % 5) as usize, ((t / 5) % 8) as usize];
        // optimum 0.9; sharing one option 0.45; none 0.0
        let obj = |c: &[usize]| [0.0, 0.45, 0.9][usize::from(c[0] == star[0]) + usize::from(c[1] == star[1])];
        let mut optimum = f64::NEG_INFINITY;
        for a in 0..dims[0] {
            for b in 0..dims[1] {
                optimum = optimum.max(obj(&[a, b]));
            }
        }
        let mut fits = 0;
        let state = search(&dims, DodgeParams::default(), &mut seed::rng(sd), |c| format!("{c:?}"), |c| {
            fits += 1;
            Ok(obj(c))
        })
        .unwrap();
        max_fits = max_fits.max(fits);
        if state.best().unwrap().objective >= optimum - 0.2 {
            hits += 1;
        }
    }
    // real learners on the benchmark: one fit per logged evaluation
    let data = benchmark();
    for kind in LearnerKind::TRADITIONAL.into_iter().chain([LearnerKind::FeedForward]) {
        let tuned = dodge(&HyperParamSpace::for_kind(kind), &data, DodgeParams::default(), 4, &TrainOptions::default()).unwrap();
        max_fits = max_fits.max(tuned.state.log.len());
    }
    let (fast, time) = within(Duration::from_secs(120), started);
    Verdict::check(
        max_fits <= 30 && hits >= 16 && fast,
        format!("max fits {max_fits}; within 0.2 of the grid optimum on {hits}/20 seeds; {time}"),
    )
}

// ---------------------------------------------------------------- 5

fn auc_or_half(r: &EvalReport) -> f64 {
    if r.is_ok() {
        r.auc
    } else {
        0.5
    }
}

fn criterion_5() -> Verdict {
    let started = Instant::now();
    let data = benchmark();
    let seeds: Vec<u64> = (1..=20).collect();
    let opts = EvalOptions::default();
    let reports = ablation(std::slice::from_ref(&data), &[TreatmentId::A1, TreatmentId::D1], &seeds, 0.8, &opts);
    let med = |t: &str| lower_median(reports.iter().filter(|r| r.treatment == t).map(auc_or_half).collect());
    let errors = reports.iter().filter(|r| !r.is_ok()).count();
    let (a1, d1) = (med("A1"), med("D1"));

    let split = time_split(&data, 0.8).unwrap();
    let recipe = TreatmentId::A1.recipe();
    let changes: Vec<f64> = seeds
        .par_iter()
        .map(|&sd| {
            let cs = cell_seed(sd, &data.project, "landscape");
            // a failed landscape counts as no improvement
            landscape_pair(&split, &recipe, cs, &opts, DEFAULT_GRID, DEFAULT_ALPHA).map_or(0.0, |p| p.change)
        })
        .collect();
    let positive = changes.iter().filter(|&&c| c > 0.0).count();
    let change = lower_median(changes);
    let (fast, time) = within(Duration::from_secs(600), started);
    Verdict::check(
        a1 >= d1 + 0.10 && change > 0.0 && fast,
        format!(
            "median AUC A1 {a1:.3} vs D1 {d1:.3} (needs +0.10, {errors} error cells as 0.5); \
             median smoothness change {change:+.2}% ({positive}/20 positive); {time}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn data_dir() -> Option<PathBuf> {
    std::env::var_os("GHOST2_DATA").map(PathBuf::from).filter(|p| !p.as_os_str().is_empty())
}

fn criterion_6() -> Verdict {
    let started = Instant::now();
    let split = time_split(&benchmark(), 0.8).unwrap();
    let (scaled, _) = normalize(&split);
    let synth: Vec<f64> = (1..=5u64).map(|sd| smooth_stability(&scaled.train, 20, sd).unwrap().headline).collect();
    let worst = synth.iter().copied().fold(0.0, f64::max);
    let mut ok = worst < 5.0;
    let mut detail = format!("benchmark worst {worst:.2}% over 5 seeds (limit 5%)");
    if let Some(dir) = data_dir() {
        match ghost2_cli::load_projects(&dir) {
            Ok(projects) => {
                let mut real = 0.0f64;
                for d in &projects {
                    let (sc, _) = normalize(&time_split(d, 0.8).unwrap());
                    let r = smooth_stability(&sc.train, 20, cell_seed(1, &d.project, "stability"));
                    real = real.max(r.map_or(f64::INFINITY, |r| r.headline));
                }
                ok &= real <= 1.0;
                detail.push_str(&format!("; real data worst {real:.2}% (limit 1%)"));
            }
            Err(e) => {
                ok = false;
                detail.push_str(&format!("; cannot load GHOST2_DATA: {e}"));
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(120), started);
    Verdict::check(ok && fast, format!("{detail}; {time}"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Verdict {
    let Some(dir) = data_dir() else {
        return Verdict {
            status: Status::Skip,
            detail: "GHOST2_DATA not set".into(),
        };
    };
    let started = Instant::now();
    let projects = match ghost2_cli::load_projects(&dir) {
        Ok(p) => p,
        Err(e) => return Verdict::check(false, format!("cannot load GHOST2_DATA: {e}")),
    };
    let reports = ablation(&projects, &[TreatmentId::A1, TreatmentId::D1], &[1], 0.8, &EvalOptions::default());
    let aucs = |t: &str| -> Vec<f64> { reports.iter().filter(|r| r.treatment == t).map(auc_or_half).collect() };
    let a1 = aucs("A1");
    let perfect = a1.iter().filter(|&&a| a == 1.0).count();
    let (a1_med, d1_med) = (lower_median(a1), lower_median(aucs("D1")));
    let (fast, time) = within(Duration::from_secs(1800), started);
    Verdict::check(
        perfect >= 3 && a1_med >= 0.80 && d1_med <= 0.60 && fast,
        format!(
            "{} projects: A1 perfect on {perfect}, median {a1_med:.3}; D1 median {d1_med:.3}; {time}",
            projects.len()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_project(&data, &benchmark());
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("out{i}"));
        let r = ghost2(&["run", "--data", s(&data), "--out", s(&out), "--treatments", "A1,D1", "--seed", "1,2"]);
        if r.code != 0 && r.code != 1 {
            return Verdict::check(false, format!("run exited with {}: {}", r.code, r.stderr.trim()));
        }
        outputs.push(std::fs::read(out.join("results.csv")).unwrap_or_default());
    }
    let same = !outputs[0].is_empty() && outputs[0] == outputs[1];
    Verdict::check(same, format!("two runs, {} bytes each, identical: {same}", outputs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(usize, fn() -> Verdict); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let only: Option<usize> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let mut failed = 0;
    for (n, f) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let v = f();
        let tag = match v.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!("criterion {n}: {tag}: {}", v.detail);
    }
    println!("{failed} acceptance criteria failed");
    // strict mode turns a failed criterion into a failed test binary
    let strict = std::env::var_os("GHOST2_ACCEPTANCE_STRICT").is_some_and(|v| v == "1");
    if failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
