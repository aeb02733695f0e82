//! Datasets, CSV ingestion driven by a column manifest, splitting and
//! z-score standardization.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    BinaryClassification,
}

impl Task {
    pub fn d_y(self) -> usize {
        match self {
            Task::Regression => 1,
            Task::BinaryClassification => 2,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Task::Regression => 0,
            Task::BinaryClassification => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Task::Regression),
            1 => Ok(Task::BinaryClassification),
            c => Err(Error::Config(format!("unknown task code {c}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::BinaryClassification => "binary-classification",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "binary-classification" | "classification" => Ok(Task::BinaryClassification),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Rows of one mini-batch, split by role.
#[derive(Debug, Clone)]
pub struct Batch {
    pub xp: Matrix,
    pub xc: Matrix,
    pub y: Matrix,
}

/// Samples split into preselected columns, candidate columns and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xp: Matrix,
    xc: Matrix,
    y: Matrix,
    preselected_names: Vec<String>,
    candidate_names: Vec<String>,
    target_name: String,
    task: Task,
    /// `[negative, positive]` label text for classification targets.
    class_labels: Option<[String; 2]>,
}

impl Dataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        xp: Matrix,
        xc: Matrix,
        y: Matrix,
        preselected_names: Vec<String>,
        candidate_names: Vec<String>,
        target_name: String,
        task: Task,
        class_labels: Option<[String; 2]>,
    ) -> Result<Self> {
        let n = xc.rows();
        if xp.rows() != n || y.rows() != n {
            return Err(Error::Shape(format!(
                "row counts differ: Xp {}, Xc {}, Y {}",
                xp.rows(),
                n,
                y.rows()
            )));
        }
        if y.cols() != task.d_y() {
            return Err(Error::Shape(format!(
                "{task} needs {} target columns, got {}",
                task.d_y(),
                y.cols()
            )));
        }
        if preselected_names.len() != xp.cols() || candidate_names.len() != xc.cols() {
            return Err(Error::Shape(
                "column names do not match column counts".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in preselected_names
            .iter()
            .chain(&candidate_names)
            .chain(std::iter::once(&target_name))
        {
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate column name `{name}`")));
            }
        }
        if task == Task::BinaryClassification {
            crate::tape::check_one_hot(&y)?;
        }
        let class_labels = match task {
            Task::Regression => None,
            Task::BinaryClassification => {
                Some(class_labels.unwrap_or_else(|| ["0".to_string(), "1".to_string()]))
            }
        };
        Ok(Self {
            xp,
            xc,
            y,
            preselected_names,
            candidate_names,
            target_name,
            task,
            class_labels,
        })
    }

    pub fn n(&self) -> usize {
        self.xc.rows()
    }

    pub fn d_p(&self) -> usize {
        self.xp.cols()
    }

    pub fn d_c(&self) -> usize {
        self.xc.cols()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn xp(&self) -> &Matrix {
        &self.xp
    }

    pub fn xc(&self) -> &Matrix {
        &self.xc
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn preselected_names(&self) -> &[String] {
        &self.preselected_names
    }

    pub fn candidate_names(&self) -> &[String] {
        &self.candidate_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn class_labels(&self) -> Option<&[String; 2]> {
        self.class_labels.as_ref()
    }

    /// Class index of a one-hot row (argmax, ties to the lower index).
    pub fn class_of(&self, row: usize) -> usize {
        argmax(self.y.row(row))
    }

    pub fn batch(&self, rows: &[usize]) -> Batch {
        Batch {
            xp: self.xp.select_rows(rows),
            xc: self.xc.select_rows(rows),
            y: self.y.select_rows(rows),
        }
    }

    pub fn full_batch(&self) -> Batch {
        Batch {
            xp: self.xp.clone(),
            xc: self.xc.clone(),
            y: self.y.clone(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            xp: self.xp.select_rows(rows),
            xc: self.xc.select_rows(rows),
            y: self.y.select_rows(rows),
            ..self.clone_meta()
        }
    }

    /// Keeps all preselected columns and only the listed candidates, in the
    /// given order.
    pub fn with_candidates(&self, candidates: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = candidates.iter().find(|&&j| j >= self.d_c()) {
            return Err(Error::Argument(format!(
                "candidate index {bad} out of range for D_c={}",
                self.d_c()
            )));
        }
        Ok(Dataset {
            xp: self.xp.clone(),
            xc: self.xc.select_columns(candidates),
            y: self.y.clone(),
            candidate_names: candidates
                .iter()
                .map(|&j| self.candidate_names[j].clone())
                .collect(),
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            xp: Matrix::zeros(0, 0),
            xc: Matrix::zeros(0, 0),
            y: Matrix::zeros(0, 0),
            preselected_names: self.preselected_names.clone(),
            candidate_names: self.candidate_names.clone(),
            target_name: self.target_name.clone(),
            task: self.task,
            class_labels: self.class_labels.clone(),
        }
    }

    /// Manifest describing this dataset's columns in the order `write_csv` emits them.
    pub fn manifest(&self) -> ColumnManifest {
        let mut columns = IndexMap::new();
        for name in &self.preselected_names {
            columns.insert(name.clone(), Role::Preselected);
        }
        for name in &self.candidate_names {
            columns.insert(name.clone(), Role::Candidate);
        }
        columns.insert(self.target_name.clone(), Role::Target);
        ColumnManifest {
            columns,
            task: self.task,
            positive_class: self.class_labels.as_ref().map(|l| l[1].clone()),
        }
    }

    /// Header: preselected, candidates, target. Reals use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<&str> = self
            .preselected_names
            .iter()
            .chain(&self.candidate_names)
            .map(String::as_str)
            .chain(std::iter::once(self.target_name.as_str()))
            .collect();
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for r in 0..self.n() {
            record.clear();
            record.extend(self.xp.row(r).iter().map(|v| format!("{v:?}")));
            record.extend(self.xc.row(r).iter().map(|v| format!("{v:?}")));
            match &self.class_labels {
                Some(labels) => record.push(labels[self.class_of(r)].clone()),
                None => record.push(format!("{:?}", self.y.get(r, 0))),
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Preselected,
    Candidate,
    Target,
    Ignore,
}

/// Column roles for CSV ingestion. Serialized as
/// `{"columns": {name: role}, "task": ..., "positive_class": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnManifest {
    pub columns: IndexMap<String, Role>,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_class: Option<String>,
}

impl ColumnManifest {
    pub fn validate(&self) -> Result<()> {
        let count = |role| self.columns.values().filter(|&&r| r == role).count();
        if count(Role::Candidate) == 0 {
            return Err(Error::Config("manifest has no candidate columns".into()));
        }
        if count(Role::Target) != 1 {
            return Err(Error::Config(format!(
                "manifest needs exactly one target column, has {}",
                count(Role::Target)
            )));
        }
        if self.task == Task::BinaryClassification && self.positive_class.is_none() {
            return Err(Error::Config(
                "classification manifest needs positive_class".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: ColumnManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

pub fn load_csv(path: &Path, manifest: &ColumnManifest) -> Result<Dataset> {
    manifest.validate()?;
    let ingest = |what: String| Error::Ingest {
        path: path.to_path_buf(),
        what,
    };
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut pre_idx = Vec::new();
    let mut cand_idx = Vec::new();
    let mut target_idx = None;
    for (name, role) in &manifest.columns {
        let pos = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ingest(format!("missing column `{name}`")))?;
        match role {
            Role::Preselected => pre_idx.push(pos),
            Role::Candidate => cand_idx.push(pos),
            Role::Target => target_idx = Some(pos),
            Role::Ignore => {}
        }
    }
    // header order decides column order within each role
    pre_idx.sort_unstable();
    cand_idx.sort_unstable();
    let target_idx = target_idx.expect("validated");

    let mut xp = Vec::new();
    let mut xc = Vec::new();
    let mut raw_targets = Vec::new();
    let mut n = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let cell = |col: usize| -> Result<f64> {
            let text = record.get(col).unwrap_or("").trim();
            let v: f64 = text.parse().map_err(|_| {
                ingest(format!(
                    "row {line}, column `{}`: cannot parse `{text}`",
                    header[col]
                ))
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ingest(format!(
                    "row {line}, column `{}`: non-finite value",
                    header[col]
                )))
            }
        };
        for &c in &pre_idx {
            xp.push(cell(c)?);
        }
        for &c in &cand_idx {
            xc.push(cell(c)?);
        }
        raw_targets.push(record.get(target_idx).unwrap_or("").trim().to_string());
        n += 1;
    }
    if n == 0 {
        return Err(ingest("no data rows".into()));
    }

    let (y, class_labels) = match manifest.task {
        Task::Regression => {
            let mut y = Vec::with_capacity(n);
            for (i, t) in raw_targets.iter().enumerate() {
                let v: f64 = t.parse().map_err(|_| {
                    ingest(format!(
                        "row {}, column `{}`: cannot parse `{t}`",
                        i + 2,
                        header[target_idx]
                    ))
                })?;
                y.push(v);
            }
            (Matrix::new(n, 1, y)?, None)
        }
        Task::BinaryClassification => {
            let positive = manifest.positive_class.clone().expect("validated");
            let mut negative: Option<String> = None;
            let mut y = Vec::with_capacity(2 * n);
            for (i, t) in raw_targets.iter().enumerate() {
                if *t == positive {
                    y.extend([0.0, 1.0]);
                    continue;
                }
                match &negative {
                    None => negative = Some(t.clone()),
                    Some(neg) if neg == t => {}
                    Some(neg) => {
                        return Err(Error::Label(format!(
                            "row {}: third class `{t}` besides `{neg}` and `{positive}`",
                            i + 2
                        )))
                    }
                }
                y.extend([1.0, 0.0]);
            }
            let negative = negative.unwrap_or_else(|| format!("not-{positive}"));
            (Matrix::new(n, 2, y)?, Some([negative, positive]))
        }
    };

    Dataset::new(
        Matrix::new(n, pre_idx.len(), xp)?,
        Matrix::new(n, cand_idx.len(), xc)?,
        y,
        pre_idx.iter().map(|&i| header[i].clone()).collect(),
        cand_idx.iter().map(|&i| header[i].clone()).collect(),
        header[target_idx].clone(),
        manifest.task,
        class_labels,
    )
}

/// Seeded shuffle-and-partition. Classification is stratified per class.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = rng::stream(seed, rng::TAG_SPLIT, &[]);
    let groups: Vec<Vec<usize>> = match dataset.task() {
        Task::Regression => vec![(0..dataset.n()).collect()],
        Task::BinaryClassification => {
            let mut g = vec![Vec::new(), Vec::new()];
            for r in 0..dataset.n() {
                g[dataset.class_of(r)].push(r);
            }
            g
        }
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut rows) in groups.into_iter().enumerate() {
        if rows.is_empty() {
            if dataset.task() == Task::BinaryClassification {
                return Err(Error::Stratification(format!(
                    "class {class} has no samples"
                )));
            }
            return Err(Error::EmptySet);
        }
        rows.shuffle(&mut rng);
        let n_test = (rows.len() as f64 * test_fraction).round() as usize;
        if n_test == 0 || n_test == rows.len() {
            let what = format!(
                "fraction {test_fraction} puts {n_test} of {} samples{} in the test split",
                rows.len(),
                if dataset.task() == Task::BinaryClassification {
                    format!(" of class {class}")
                } else {
                    String::new()
                }
            );
            return Err(match dataset.task() {
                Task::BinaryClassification => Error::Stratification(what),
                Task::Regression => Error::Argument(what),
            });
        }
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.select_rows(&train), dataset.select_rows(&test)))
}

/// Per-column z-score statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub xp_mean: Vec<f64>,
    pub xp_std: Vec<f64>,
    pub xc_mean: Vec<f64>,
    pub xc_std: Vec<f64>,
    /// Present for regression targets only.
    pub y_mean: Option<f64>,
    pub y_std: Option<f64>,
}

fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mean = m.column_means();
    let mut var = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (c, v) in m.row(r).iter().enumerate() {
            let d = v - mean[c];
            var[c] += d * d;
        }
    }
    let n = m.rows().max(1) as f64;
    let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

fn zscore(m: &Matrix, mean: &[f64], std: &[f64]) -> Matrix {
    let cols = m.cols();
    let mut out = m.clone();
    if cols == 0 {
        return out;
    }
    for row in out.as_mut_slice().chunks_mut(cols) {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[c]) / std[c];
        }
    }
    out
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Self {
        let (xp_mean, xp_std) = column_stats(train.xp());
        let (xc_mean, xc_std) = column_stats(train.xc());
        let (y_mean, y_std) = match train.task() {
            Task::Regression => {
                let (m, s) = column_stats(train.y());
                (Some(m[0]), Some(s[0]))
            }
            Task::BinaryClassification => (None, None),
        };
        Self {
            xp_mean,
            xp_std,
            xc_mean,
            xc_std,
            y_mean,
            y_std,
        }
    }

    pub fn transform(&self, d: &Dataset) -> Result<Dataset> {
        if d.d_p() != self.xp_mean.len() || d.d_c() != self.xc_mean.len() {
            return Err(Error::Shape(
                "dataset columns do not match the fitted scaler".into(),
            ));
        }
        let y = match (self.y_mean, self.y_std) {
            (Some(m), Some(s)) => d.y().map(|v| (v - m) / s),
            _ => d.y().clone(),
        };
        Ok(Dataset {
            xp: zscore(d.xp(), &self.xp_mean, &self.xp_std),
            xc: zscore(d.xc(), &self.xc_mean, &self.xc_std),
            y,
            ..d.clone_meta()
        })
    }

    /// Maps a standardized regression prediction back to target units.
    pub fn inverse_y(&self, v: f64) -> f64 {
        match (self.y_mean, self.y_std) {
            (Some(m), Some(s)) => v * s + m,
            _ => v,
        }
    }
}

pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardizer)> {
    let s = Standardizer::fit(train);
    Ok((s.transform(train)?, s.transform(test)?, s))
}
