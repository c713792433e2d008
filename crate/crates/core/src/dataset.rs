//! Warning datasets: CSV ingestion, validation, time-ordered splitting and
//! min-max normalization.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One project's warnings. Immutable once constructed through
/// [`WarningDataset::new`]; treatments build new datasets rather than
/// mutating in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningDataset {
    pub project: String,
    pub features: Matrix,
    pub feature_names: Vec<String>,
    /// 1 = actionable, 0 = ignored.
    pub labels: Vec<u8>,
    /// Epoch seconds.
    pub timestamps: Vec<i64>,
}

impl WarningDataset {
    pub fn new(
        project: impl Into<String>,
        features: Matrix,
        feature_names: Vec<String>,
        labels: Vec<u8>,
        timestamps: Vec<i64>,
    ) -> Result<Self> {
        let ds = Self {
            project: project.into(),
            features,
            feature_names,
            labels,
            timestamps,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Convenience constructor with generated feature names `f0..fd` and
    /// timestamps `0..n`.
    pub fn from_parts(project: impl Into<String>, features: Matrix, labels: Vec<u8>) -> Result<Self> {
        let d = features.cols();
        let n = features.rows();
        Self::new(
            project,
            features,
            (0..d).map(|j| format!("f{j}")).collect(),
            labels,
            (0..n as i64).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        if self.labels.len() != n || self.timestamps.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows, {} labels, {} timestamps",
                n,
                self.labels.len(),
                self.timestamps.len()
            )));
        }
        if self.features.cols() == 0 {
            return Err(Error::InvalidDataset("no feature columns".into()));
        }
        if self.feature_names.len() != self.features.cols() {
            return Err(Error::InvalidDataset(format!(
                "{} feature names for {} columns",
                self.feature_names.len(),
                self.features.cols()
            )));
        }
        if let Some(row) = self.labels.iter().position(|&l| l > 1) {
            return Err(Error::BadLabel { row: row + 1 });
        }
        if let Some(pos) = self.features.as_slice().iter().position(|v| !v.is_finite()) {
            let d = self.features.cols();
            return Err(Error::NonNumericCell {
                row: pos / d + 1,
                col: self.feature_names[pos % d].clone(),
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    /// `[count of label 0, count of label 1]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - ones, ones]
    }

    pub fn has_both_classes(&self) -> bool {
        let [c0, c1] = self.class_counts();
        c0 > 0 && c1 > 0
    }

    /// The smaller class; ties go to label 1 (actionable warnings are the
    /// usual minority).
    pub fn minority_label(&self) -> u8 {
        let [c0, c1] = self.class_counts();
        if c0 < c1 {
            0
        } else {
            1
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            project: self.project.clone(),
            features: self.features.select_rows(idx),
            feature_names: self.feature_names.clone(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
        }
    }

    /// Appends a row. Callers are responsible for finiteness.
    pub(crate) fn push(&mut self, row: &[f64], label: u8, timestamp: i64) {
        self.features.push_row(row);
        self.labels.push(label);
        self.timestamps.push(timestamp);
    }

    /// SHA-256 over features (bit patterns), labels and timestamps.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.d() as u64).to_le_bytes());
        for v in self.features.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(&self.labels);
        for t in &self.timestamps {
            h.update(t.to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Names of the reserved CSV columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label: String,
    pub timestamp: String,
    pub project: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label: "label".into(),
            timestamp: "timestamp".into(),
            project: Some("project".into()),
        }
    }
}

/// Loads a warning CSV. Every column other than the reserved ones is a
/// numeric feature. The project name comes from the project column when
/// present and non-empty, otherwise from the file stem.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<WarningDataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);

    let label_col = find(&schema.label).ok_or_else(|| Error::MissingColumn(schema.label.clone()))?;
    let ts_col = find(&schema.timestamp).ok_or_else(|| Error::MissingColumn(schema.timestamp.clone()))?;
    let project_col = schema.project.as_deref().and_then(find);

    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_col && c != ts_col && Some(c) != project_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::InvalidDataset("no feature columns".into()));
    }
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| headers[c].trim().to_string()).collect();

    let mut features = Matrix::with_cols(feature_cols.len());
    let mut labels = Vec::new();
    let mut timestamps = Vec::new();
    let mut project_name: Option<String> = None;
    let mut row_buf = vec![0.0; feature_cols.len()];

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let cell = |c: usize| rec.get(c).unwrap_or("").trim();
        for (k, &c) in feature_cols.iter().enumerate() {
            row_buf[k] = cell(c)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumericCell {
                    row,
                    col: feature_names[k].clone(),
                })?;
        }
        let label = match cell(label_col).parse::<f64>() {
            Ok(0.0) => 0u8,
            Ok(1.0) => 1u8,
            _ => return Err(Error::BadLabel { row }),
        };
        let ts = cell(ts_col).parse::<i64>().map_err(|_| Error::NonNumericCell {
            row,
            col: schema.timestamp.clone(),
        })?;
        if project_name.is_none() {
            if let Some(pc) = project_col {
                let p = cell(pc);
                if !p.is_empty() {
                    project_name = Some(p.to_string());
                }
            }
        }
        features.push_row(&row_buf);
        labels.push(label);
        timestamps.push(ts);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let project = project_name.unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    WarningDataset::new(project, features, feature_names, labels, timestamps)
}

/// Writes features, then label, then timestamp, then (if the schema names
/// one) the project column. Numbers use Rust's shortest round-trip format.
pub fn write_csv(data: &WarningDataset, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<()> {
    let file = File::create(path)?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    header.push(&schema.label);
    header.push(&schema.timestamp);
    if let Some(p) = &schema.project {
        header.push(p);
    }
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.features.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.labels[i].to_string());
        rec.push(data.timestamps[i].to_string());
        if schema.project.is_some() {
            rec.push(data.project.clone());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTestSplit {
    pub train: WarningDataset,
    pub test: WarningDataset,
    pub train_fraction: f64,
}

/// Sorts rows by timestamp (stable, so ties keep file order) and cuts the
/// first `floor(n * train_fraction)` rows off as training data. Tiny
/// datasets (`n <= 4`) and cuts that would leave one side empty fall back
/// to a 50:50 split.
pub fn time_split(data: &WarningDataset, train_fraction: f64) -> Result<TrainTestSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let n = data.n();
    if n < 2 {
        return Err(Error::TooFewRows { have: n, need: 2 });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| data.timestamps[i]);

    // the epsilon keeps e.g. 0.29 * 100 from flooring to 28
    let mut n_train = (n as f64 * train_fraction + 1e-9).floor() as usize;
    if n <= 4 || n_train == 0 || n_train >= n {
        n_train = (n / 2).max(1);
    }
    Ok(TrainTestSplit {
        train: data.subset(&order[..n_train]),
        test: data.subset(&order[n_train..]),
        train_fraction,
    })
}

/// Per-feature min/max fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Values outside the training range are clamped to this interval.
pub const CLAMP_RANGE: (f64, f64) = (-0.5, 1.5);

impl NormParams {
    pub fn fit(features: &Matrix) -> Self {
        let d = features.cols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in features.iter_rows() {
            for j in 0..d {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        Self { min, max }
    }

    pub fn scale_value(&self, j: usize, v: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span <= 0.0 {
            return 0.5;
        }
        ((v - self.min[j]) / span).clamp(CLAMP_RANGE.0, CLAMP_RANGE.1)
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        let mut out = features.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.scale_value(j, *v);
            }
        }
        out
    }
}

/// Min-max scaling fitted on the training half and applied to both halves.
/// Constant features map to 0.5; test values are clamped to
/// [`CLAMP_RANGE`].
pub fn normalize(split: &TrainTestSplit) -> (TrainTestSplit, NormParams) {
    let params = NormParams::fit(&split.train.features);
    let mut out = split.clone();
    out.train.features = params.apply(&split.train.features);
    out.test.features = params.apply(&split.test.features);
    (out, params)
}
