//! CSV ingestion, standardization and train/test/fold partitioning.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Column holding the regression target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetColumn {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for TargetColumn {
    type Err = std::convert::Infallible;

    /// Bare integers are column indices; anything else is a header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.to_owned()),
        })
    }
}

impl std::fmt::Display for TargetColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetColumn::Index(i) => write!(f, "{i}"),
            TargetColumn::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub target: TargetColumn,
    pub delimiter: u8,
    pub has_header: bool,
}

impl CsvOptions {
    pub fn new(target: TargetColumn) -> Self {
        Self {
            target,
            delimiter: b',',
            has_header: true,
        }
    }
}

/// Summary of a CSV load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub columns: Vec<String>,
    pub target: String,
    pub constant_features: Vec<String>,
}

/// Per-column affine transform fitted on a training set (population std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    /// Columns with zero variance in the training data; mapped to zero.
    pub constant_features: Vec<usize>,
}

impl Standardization {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        let (target_mean, target_std) = mean_std(train.targets.view());
        if target_std == 0.0 {
            return Err(Error::Data(format!(
                "target column '{}' has zero variance",
                train.target_name
            )));
        }
        let mut feature_mean = Vec::with_capacity(train.num_features());
        let mut feature_std = Vec::with_capacity(train.num_features());
        let mut constant_features = Vec::new();
        for (j, col) in train.features.axis_iter(Axis(1)).enumerate() {
            let (m, s) = mean_std(col);
            if s == 0.0 {
                constant_features.push(j);
            }
            feature_mean.push(m);
            feature_std.push(s);
        }
        Ok(Self {
            feature_mean,
            feature_std,
            target_mean,
            target_std,
            constant_features,
        })
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.num_features() != self.feature_mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "dataset has {} features, statistics cover {}",
                data.num_features(),
                self.feature_mean.len()
            )));
        }
        let mut features = data.features.clone();
        for (j, mut col) in features.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.feature_mean[j], self.feature_std[j]);
            if s == 0.0 {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - m) / s);
            }
        }
        let targets = data.targets.mapv(|v| self.standardize_target(v));
        Ok(Dataset {
            features,
            targets,
            feature_names: data.feature_names.clone(),
            target_name: data.target_name.clone(),
            standardization: Some(self.clone()),
        })
    }

    pub fn standardize_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn unstandardize_target(&self, y: f64) -> f64 {
        y * self.target_std + self.target_mean
    }

    /// Maps a standardized width (half-interval) back to target units.
    pub fn unstandardize_width(&self, w: f64) -> f64 {
        w * self.target_std
    }

    pub fn standardize_feature(&self, j: usize, v: f64) -> f64 {
        if self.feature_std[j] == 0.0 {
            0.0
        } else {
            (v - self.feature_mean[j]) / self.feature_std[j]
        }
    }

    /// Constant columns come back as their training mean.
    pub fn unstandardize_feature(&self, j: usize, v: f64) -> f64 {
        v * self.feature_std[j] + self.feature_mean[j]
    }

    /// Inverse of [`Standardization::apply`].
    pub fn invert(&self, data: &Dataset) -> Result<Dataset> {
        if data.num_features() != self.feature_mean.len() {
            return Err(Error::DimensionMismatch(
                "statistics do not match dataset".into(),
            ));
        }
        let mut features = data.features.clone();
        for (j, mut col) in features.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| self.unstandardize_feature(j, v));
        }
        Ok(Dataset {
            features,
            targets: data.targets.mapv(|v| self.unstandardize_target(v)),
            feature_names: data.feature_names.clone(),
            target_name: data.target_name.clone(),
            standardization: None,
        })
    }
}

fn mean_std(col: ArrayView1<f64>) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub targets: Array1<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Present iff the values are standardized.
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        targets: Array1<f64>,
        feature_names: Vec<String>,
        target_name: impl Into<String>,
    ) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows vs {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        if features
            .iter()
            .chain(targets.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("dataset".into()));
        }
        Ok(Self {
            features,
            targets,
            feature_names,
            target_name: target_name.into(),
            standardization: None,
        })
    }

    /// Unnamed features `x0, x1, ...` and target `y`.
    pub fn from_arrays(features: Array2<f64>, targets: Array1<f64>) -> Result<Self> {
        let names = (0..features.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(features, targets, names, "y")
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            targets: self.targets.select(Axis(0), indices),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            standardization: self.standardization.clone(),
        }
    }
}

/// Loads a numeric CSV. Rows with missing or unparseable cells are dropped.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header: Option<Vec<String>> = if opts.has_header {
        Some(reader.headers()?.iter().map(str::to_owned).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rows_read = 0;
    let mut rows_dropped = 0;
    let mut width = header.as_ref().map(Vec::len);
    for record in reader.records() {
        let record = record?;
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        rows_read += 1;
        let w = *width.get_or_insert(record.len());
        let parsed: Option<Vec<f64>> = if record.len() == w {
            record
                .iter()
                .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect()
        } else {
            None
        };
        match parsed {
            Some(r) => rows.push(r),
            None => rows_dropped += 1,
        }
    }

    let width = width.unwrap_or(0);
    let columns: Vec<String> =
        header.unwrap_or_else(|| (0..width).map(|j| format!("c{j}")).collect());
    let target_idx = match &opts.target {
        TargetColumn::Index(i) if *i < columns.len() => *i,
        TargetColumn::Name(name) => columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Data(format!("target column '{name}' not found")))?,
        TargetColumn::Index(i) => {
            return Err(Error::Data(format!(
                "target column index {i} out of range ({} columns)",
                columns.len()
            )))
        }
    };
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "{}: all rows dropped ({rows_read} read)",
            path.display()
        )));
    }
    if columns.len() < 2 {
        return Err(Error::Data("need at least one feature column".into()));
    }

    let n = rows.len();
    let d = width - 1;
    let mut features = Array2::zeros((n, d));
    let mut targets = Array1::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        let mut k = 0;
        for (j, &v) in row.iter().enumerate() {
            if j == target_idx {
                targets[i] = v;
            } else {
                features[[i, k]] = v;
                k += 1;
            }
        }
    }
    let feature_names: Vec<String> = columns
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target_idx)
        .map(|(_, c)| c.clone())
        .collect();
    let target_name = columns[target_idx].clone();

    let constant_features = features
        .axis_iter(Axis(1))
        .zip(&feature_names)
        .filter(|(col, _)| mean_std(*col).1 == 0.0)
        .map(|(_, name)| name.clone())
        .collect();
    let report = LoadReport {
        rows_read,
        rows_dropped,
        columns,
        target: target_name.clone(),
        constant_features,
    };
    let dataset = Dataset::new(features, targets, feature_names, target_name)?;
    Ok((dataset, report))
}

/// Fits statistics on `train` and applies them to `train` and every set in `others`.
pub fn standardize(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, Standardization)> {
    let stats = Standardization::fit(train)?;
    let train_std = stats.apply(train)?;
    let others = others
        .iter()
        .map(|d| stats.apply(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((train_std, others, stats))
}

/// Holdout split plus k-fold assignment over the same random permutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// `folds[k]` is the test set of fold `k`; folds partition `[0, n)`.
    pub folds: Vec<Vec<usize>>,
}

impl SplitPlan {
    pub fn num_folds(&self) -> usize {
        self.folds.len()
    }

    /// `(train, test)` indices for fold `k`.
    pub fn fold(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        let test = self.folds[k].clone();
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        (train, test)
    }
}

pub fn make_splits(n: usize, test_fraction: f64, k_folds: usize, seed: u64) -> Result<SplitPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} not in (0, 1)"
        )));
    }
    if k_folds == 0 {
        return Err(Error::InvalidConfig("need at least one fold".into()));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n < k_folds || n < 2 || n_test == 0 || n_test >= n {
        return Err(Error::Data(format!(
            "{n} samples too few for {k_folds} folds at test fraction {test_fraction}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, stream::SPLIT, 0));

    let test_indices = perm[..n_test].to_vec();
    let train_indices = perm[n_test..].to_vec();

    let base = n / k_folds;
    let extra = n % k_folds;
    let mut folds = Vec::with_capacity(k_folds);
    let mut start = 0;
    for k in 0..k_folds {
        let size = base + usize::from(k < extra);
        folds.push(perm[start..start + size].to_vec());
        start += size;
    }
    Ok(SplitPlan {
        seed,
        train_indices,
        test_indices,
        folds,
    })
}
