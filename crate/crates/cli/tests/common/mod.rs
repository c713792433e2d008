#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use ghost2_core::dataset::{write_csv, CsvSchema};
use ghost2_core::synthetic::xor_gaussians;
use ghost2_core::WarningDataset;

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `ghost2` binary with `GHOST2_DATA` cleared.
pub fn ghost2(args: &[&str]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_ghost2"))
        .args(args)
        .env_remove("GHOST2_DATA")
        .env("RUST_LOG", "off")
        .output()
        .expect("ghost2 binary runs");
    Outcome {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn write_project(dir: &Path, data: &WarningDataset) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join(format!("{}.csv", data.project));
    let schema = CsvSchema {
        project: None,
        ..CsvSchema::default()
    };
    write_csv(data, &path, &schema).unwrap();
    path
}

/// A directory holding two small XOR projects, `p1` and `p2`.
pub fn two_projects(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    write_project(&data, &xor_gaussians("p1", 100, 0.4, 0.5, 1).unwrap());
    write_project(&data, &xor_gaussians("p2", 100, 0.3, 0.5, 2).unwrap());
    data
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn lower_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Roughness of a grid given in `a,b,loss` CSV form, from the file alone.
pub fn csv_roughness(csv: &str) -> f64 {
    let losses: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let g = (losses.len() as f64).sqrt().round() as usize;
    assert_eq!(g * g, losses.len());
    let at = |i: usize, j: usize| losses[i * g + j];
    let mut total = 0.0;
    for i in 1..g - 1 {
        for j in 1..g - 1 {
            let around = at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1);
            total += (at(i, j) - around / 4.0).abs();
        }
    }
    total / ((g - 2) * (g - 2)) as f64
}

/// Headline stability from a `cluster,m0,..` CSV and the dataset L1 norm.
pub fn csv_stability(csv: &str, l1: f64) -> (usize, f64) {
    let rows: Vec<(usize, Vec<f64>)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(',');
            let c = f.next().unwrap().parse().unwrap();
            (c, f.map(|v| v.parse().unwrap()).collect())
        })
        .collect();
    let k = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let mut devs = Vec::new();
    for c in 0..k {
        let members: Vec<&Vec<f64>> = rows.iter().filter(|r| r.0 == c).map(|r| &r.1).collect();
        if members.is_empty() {
            continue;
        }
        let centre: Vec<f64> = (0..members[0].len()).map(|j| lower_median(members.iter().map(|m| m[j]).collect())).collect();
        devs.extend(members.iter().map(|m| m.iter().zip(&centre).map(|(a, b)| (a - b).abs()).sum::<f64>()));
    }
    (rows.len(), 100.0 * lower_median(devs) / l1)
}
