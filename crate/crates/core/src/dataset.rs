//! Data ingestion, class bookkeeping and fold splitting.
//!
//! Class labels are stored as zero-based indices `0..K`, assigned in order of
//! first appearance in the input. The original label strings are kept in
//! [`LabeledDataset::class_names`] so reports can map indices back.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    x: DMatrix<f64>,
    labels: Option<Vec<usize>>,
    class_names: Vec<String>,
    feature_names: Option<Vec<String>>,
}

impl LabeledDataset {
    /// Build a dataset from rows of `x` and optional zero-based class indices.
    ///
    /// The class count is `max(label) + 1`; every class in `0..K` must occur.
    pub fn new(x: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        let k = labels.as_ref().map_or(0, |l| l.iter().max().map_or(0, |m| m + 1));
        let class_names = (1..=k).map(|c| c.to_string()).collect();
        Self::with_classes(x, labels, class_names)
    }

    pub fn unlabeled(x: DMatrix<f64>) -> Result<Self> {
        Self::new(x, None)
    }

    /// Like [`LabeledDataset::new`] but with an explicit class count given by
    /// `class_names.len()`.
    pub fn with_classes(x: DMatrix<f64>, labels: Option<Vec<usize>>, class_names: Vec<String>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument(format!("dataset must be non-empty, got {n}x{p}")));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at row {}, column {}",
                pos % n,
                pos / n
            )));
        }
        let class_names = if labels.is_some() { class_names } else { Vec::new() };
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::DimensionMismatch(format!("{} labels for {n} rows", labels.len())));
            }
            let k = class_names.len();
            let mut seen = vec![0usize; k];
            for &l in labels {
                if l >= k {
                    return Err(Error::InvalidArgument(format!("label {l} outside 0..{k}")));
                }
                seen[l] += 1;
            }
            if let Some(empty) = seen.iter().position(|&c| c == 0) {
                return Err(Error::InvalidArgument(format!("class {empty} has no observations")));
            }
        }
        Ok(Self {
            x,
            labels,
            class_names,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Self {
        self.feature_names = Some(names);
        self
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of classes, 0 when unlabeled.
    pub fn k(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    /// Row indices per class. Unlabeled data is one group holding every row.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        match &self.labels {
            None => vec![(0..self.n()).collect()],
            Some(labels) => {
                let mut groups = vec![Vec::new(); self.k()];
                for (i, &l) in labels.iter().enumerate() {
                    groups[l].push(i);
                }
                groups
            }
        }
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.groups().iter().map(Vec::len).collect()
    }

    /// Same observations with labels dropped.
    pub fn without_labels(&self) -> Self {
        Self {
            x: self.x.clone(),
            labels: None,
            class_names: Vec::new(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Same labels with the observation matrix replaced.
    pub fn with_x(&self, x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != self.n() {
            return Err(Error::DimensionMismatch(format!("{} rows, expected {}", x.nrows(), self.n())));
        }
        let mut out = Self::with_classes(x, self.labels.clone(), self.class_names.clone())?;
        if out.p() == self.p() {
            out.feature_names = self.feature_names.clone();
        }
        Ok(out)
    }

    /// Rows in `rows` order, keeping the class count and names.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows);
        let labels = self.labels.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect());
        let mut out = Self::with_classes(x, labels, self.class_names.clone())?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    /// Coordinates of every row in the given basis (`X * basis`).
    pub fn project(&self, basis: &DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "basis has {} rows, data has {} columns",
                basis.nrows(),
                self.p()
            )));
        }
        self.with_x(&self.x * basis)
    }

    /// Scale every column to unit sample variance (constant columns untouched).
    pub fn standardized(&self) -> Self {
        self.scaled_like(self)
    }

    /// Divide each column by the sample deviation of the same column in
    /// `reference`, so a test set can share the training set's scaling.
    pub fn scaled_like(&self, reference: &LabeledDataset) -> Self {
        let sds = column_sds(&reference.x);
        let mut x = self.x.clone();
        for (j, sd) in sds.iter().enumerate() {
            if *sd > 0.0 {
                x.column_mut(j).scale_mut(1.0 / sd);
            }
        }
        Self { x, ..self.clone() }
    }
}

/// How the label column of a CSV file is identified.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRef {
    /// Zero-based column index.
    Index(usize),
    /// Header name (requires a header row).
    Name(String),
    Last,
}

impl FromStr for ColumnRef {
    type Err = Error;

    /// `"last"`, a one-based column position such as `"3"`, or a header name.
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("last") {
            return Ok(Self::Last);
        }
        match s.parse::<usize>() {
            Ok(0) => Err(Error::InvalidArgument("column positions are one-based".into())),
            Ok(pos) => Ok(Self::Index(pos - 1)),
            Err(_) => Ok(Self::Name(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub has_header: bool,
    pub label_column: Option<ColumnRef>,
}

/// Read a comma-separated file of numeric features with an optional
/// categorical label column.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let load_err = |reason: String| Error::Load {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(e.to_string()))?;

    let headers: Option<Vec<String>> = if opts.has_header {
        Some(
            reader
                .headers()
                .map_err(|e| load_err(e.to_string()))?
                .iter()
                .map(str::to_string)
                .collect(),
        )
    } else {
        None
    };

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| load_err(e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push(rec);
    }
    if rows.is_empty() {
        return Err(load_err("no data rows".into()));
    }
    let arity = rows[0].len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != arity) {
        return Err(load_err(format!("row {} has {} fields, expected {arity}", i + 1, r.len())));
    }

    let label_idx = match &opts.label_column {
        None => None,
        Some(ColumnRef::Index(i)) if *i < arity => Some(*i),
        Some(ColumnRef::Index(i)) => return Err(load_err(format!("label column {} out of range", i + 1))),
        Some(ColumnRef::Last) => Some(arity - 1),
        Some(ColumnRef::Name(name)) => {
            let headers = headers
                .as_ref()
                .ok_or_else(|| load_err(format!("label column '{name}' given by name but no header row")))?;
            Some(
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| load_err(format!("no column named '{name}'")))?,
            )
        }
    };
    let p = arity - usize::from(label_idx.is_some());
    if p == 0 {
        return Err(load_err("no feature columns".into()));
    }

    let n = rows.len();
    let mut x = DMatrix::zeros(n, p);
    let mut names: Vec<String> = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in rows.iter().enumerate() {
        let mut j = 0;
        for (c, cell) in rec.iter().enumerate() {
            if Some(c) == label_idx {
                let next = names.len();
                let id = *index_of.entry(cell.to_string()).or_insert_with(|| {
                    names.push(cell.to_string());
                    next
                });
                labels.push(id);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| load_err(format!("row {}, column {}: '{cell}' is not a number", i + 1, c + 1)))?;
            if !v.is_finite() {
                return Err(load_err(format!("row {}, column {}: non-finite value '{cell}'", i + 1, c + 1)));
            }
            x[(i, j)] = v;
            j += 1;
        }
    }

    let labels = label_idx.map(|_| labels);
    let ds = LabeledDataset::with_classes(x, labels, names).map_err(|e| load_err(e.to_string()))?;
    Ok(match headers {
        Some(h) => {
            let features = h.into_iter().enumerate().filter(|(c, _)| Some(*c) != label_idx).map(|(_, s)| s).collect();
            ds.with_feature_names(features)
        }
        None => ds,
    })
}

/// Write `ds` as CSV; labels (when present) go in a trailing `label` column
/// using the original class names.
pub fn write_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = match ds.feature_names() {
        Some(f) => f.to_vec(),
        None => (1..=ds.p()).map(|j| format!("x{j}")).collect(),
    };
    if ds.is_labeled() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.x().row(i).iter().map(|v| v.to_string()).collect();
        if let Some(l) = ds.labels() {
            rec.push(ds.class_names()[l[i]].clone());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    /// `n_k / n` per class.
    pub priors: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub overall_mean: DVector<f64>,
    /// Largest per-dimension sample standard deviation.
    pub sigma_hat: f64,
}

impl ClassStats {
    /// Class means as rows of a `K x p` matrix.
    pub fn means_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_rows(&self.means.iter().map(|m| m.transpose()).collect::<Vec<_>>())
    }
}

fn column_sds(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    if n < 2 {
        return vec![0.0; x.ncols()];
    }
    x.column_iter()
        .map(|c| {
            let mean = c.mean();
            let ss: f64 = c.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        })
        .collect()
}

/// Largest per-dimension sample standard deviation (divisor `n - 1`).
pub fn sigma_hat(x: &DMatrix<f64>) -> f64 {
    column_sds(x).into_iter().fold(0.0, f64::max)
}

pub fn class_stats(ds: &LabeledDataset) -> Result<ClassStats> {
    if !ds.is_labeled() {
        return Err(Error::Unlabeled("class_stats"));
    }
    let n = ds.n() as f64;
    let groups = ds.groups();
    let priors = groups.iter().map(|g| g.len() as f64 / n).collect();
    let means = groups.iter().map(|g| mean_of_rows(ds.x(), g)).collect();
    let overall: Vec<usize> = (0..ds.n()).collect();
    Ok(ClassStats {
        priors,
        means,
        overall_mean: mean_of_rows(ds.x(), &overall),
        sigma_hat: sigma_hat(ds.x()),
    })
}

fn mean_of_rows(x: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let mut m = DVector::zeros(x.ncols());
    for &i in rows {
        m += x.row(i).transpose();
    }
    m / rows.len() as f64
}

/// Stratified fold assignment: `result[i]` is the fold of row `i`.
///
/// Each class is shuffled with a seeded generator and dealt round-robin, with
/// the dealing position carried across classes so total fold sizes differ by
/// at most one.
pub fn split_folds(ds: &LabeledDataset, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    let groups = ds.groups();
    let smallest = groups.iter().map(Vec::len).min().unwrap_or(0);
    if folds > smallest {
        return Err(Error::InvalidArgument(format!(
            "{folds} folds exceed the smallest class size {smallest}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; ds.n()];
    let mut offset = 0;
    for mut members in groups {
        members.shuffle(&mut rng);
        for (j, i) in members.iter().enumerate() {
            assignment[*i] = (offset + j) % folds;
        }
        offset += members.len();
    }
    Ok(assignment)
}

/// Train/test datasets for one fold of an assignment from [`split_folds`].
pub fn fold_split(ds: &LabeledDataset, assignment: &[usize], fold: usize) -> Result<(LabeledDataset, LabeledDataset)> {
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.n()).partition(|&i| assignment[i] == fold);
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}

/// Subtract each class's mean from its rows.
pub fn center_by_class(ds: &LabeledDataset) -> Result<LabeledDataset> {
    let stats = class_stats(ds)?;
    let labels = ds.labels().expect("class_stats checked labels");
    let mut x = ds.x().clone();
    for (i, &l) in labels.iter().enumerate() {
        let mut row = x.row_mut(i);
        row -= stats.means[l].transpose();
    }
    ds.with_x(x)
}
