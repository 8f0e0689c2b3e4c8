//! Dataset ingestion, standardization, splitting and resampling.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{CadreError, Result};

/// A feature matrix (rows are observations) with its regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    target: Array1<f64>,
    feature_names: Vec<String>,
    target_name: String,
    row_ids: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset, checking shapes, finiteness and name uniqueness.
    /// Row ids default to `0..N`.
    pub fn new(
        features: Array2<f64>,
        target: Array1<f64>,
        feature_names: Vec<String>,
        target_name: impl Into<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        Self::with_row_ids(features, target, feature_names, target_name, (0..n).collect())
    }

    pub fn with_row_ids(
        features: Array2<f64>,
        target: Array1<f64>,
        feature_names: Vec<String>,
        target_name: impl Into<String>,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        let (n, p) = features.dim();
        if n == 0 {
            return Err(CadreError::EmptyInput("dataset".into()));
        }
        if p == 0 {
            return Err(CadreError::EmptyInput("feature set".into()));
        }
        if target.len() != n {
            return Err(CadreError::DimensionMismatch {
                expected: n,
                actual: target.len(),
            });
        }
        if feature_names.len() != p {
            return Err(CadreError::DimensionMismatch {
                expected: p,
                actual: feature_names.len(),
            });
        }
        if row_ids.len() != n {
            return Err(CadreError::DimensionMismatch {
                expected: n,
                actual: row_ids.len(),
            });
        }
        let features = if features.is_standard_layout() {
            features
        } else {
            features.as_standard_layout().into_owned()
        };
        let target_name = target_name.into();
        let mut seen = HashSet::new();
        for name in feature_names.iter().chain(std::iter::once(&target_name)) {
            if !seen.insert(name.as_str()) {
                return Err(CadreError::DuplicateColumn(name.clone()));
            }
        }
        for ((row, col), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(CadreError::NonFinite {
                    row,
                    column: feature_names[col].clone(),
                });
            }
        }
        if let Some(row) = target.iter().position(|v| !v.is_finite()) {
            return Err(CadreError::NonFinite {
                row,
                column: target_name,
            });
        }
        Ok(Self {
            features,
            target,
            feature_names,
            target_name,
            row_ids,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn target(&self) -> &Array1<f64> {
        &self.target
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    /// Identifier of each row in the dataset it was originally read from.
    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Row `i` as a contiguous slice (features are stored row-major).
    pub fn row_slice(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.features.as_slice().expect("row-major features")[i * p..(i + 1) * p]
    }

    /// New dataset made of the given rows, in the given order (repeats allowed).
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            target: self.target.select(Axis(0), indices),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }
}

/// Reads a header-first, comma-separated numeric table. `target_column`
/// becomes the target; every other column becomes a feature, in file order.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CadreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, target_column)
}

/// Same as [`load_csv`] for any reader.
pub fn read_csv<R: std::io::Read>(reader: R, target_column: &str) -> Result<Dataset> {
    let (header, table) = read_table(reader)?;
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| CadreError::MissingColumn(target_column.to_owned()))?;
    let keep: Vec<usize> = (0..header.len()).filter(|&i| i != target_idx).collect();
    let features = table.select(Axis(1), &keep);
    let target = table.column(target_idx).to_owned();
    let feature_names = keep.iter().map(|&i| header[i].clone()).collect();
    Dataset::new(features, target, feature_names, target_column)
}

/// Reads a header-first numeric table without designating a target.
/// Returns the column names and an `N x columns` matrix.
pub fn read_table<R: std::io::Read>(reader: R) -> Result<(Vec<String>, Array2<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(CadreError::EmptyInput("csv header".into()));
    }
    let mut seen = HashSet::new();
    for name in &header {
        if !seen.insert(name.as_str()) {
            return Err(CadreError::DuplicateColumn(name.clone()));
        }
    }
    let mut flat = Vec::new();
    let mut n = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        // `row` is 1-based in messages: the first data line is row 1.
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| CadreError::NonNumeric {
                row: row + 1,
                column: header[col].clone(),
                value: cell.to_owned(),
            })?;
            if !value.is_finite() {
                return Err(CadreError::NonFinite {
                    row: row + 1,
                    column: header[col].clone(),
                });
            }
            flat.push(value);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CadreError::EmptyInput("csv body".into()));
    }
    let table = Array2::from_shape_vec((n, header.len()), flat)
        .map_err(|e| CadreError::InvalidArgument(e.to_string()))?;
    Ok((header, table))
}

/// Writes features followed by the target column.
pub fn write_csv<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.push(&ds.target_name);
    wtr.write_record(&header)?;
    for (row, y) in ds.features.rows().into_iter().zip(ds.target.iter()) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| CadreError::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

/// Per-column affine standardization of features and target.
///
/// `means` and `stds` hold the P feature columns followed by the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    pub fn identity(n_features: usize) -> Self {
        Self {
            means: vec![0.0; n_features + 1],
            stds: vec![1.0; n_features + 1],
        }
    }

    pub fn n_features(&self) -> usize {
        self.means.len() - 1
    }

    pub fn target_mean(&self) -> f64 {
        self.means[self.n_features()]
    }

    pub fn target_std(&self) -> f64 {
        self.stds[self.n_features()]
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        if self.n_features() != ds.n_features() {
            return Err(CadreError::DimensionMismatch {
                expected: self.n_features(),
                actual: ds.n_features(),
            });
        }
        Ok(())
    }

    /// Standardizes a single feature row.
    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform_target(&self, y: f64) -> f64 {
        (y - self.target_mean()) / self.target_std()
    }

    pub fn inverse_target(&self, y: f64) -> f64 {
        y * self.target_std() + self.target_mean()
    }

    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        self.check(ds)?;
        let p = self.n_features();
        let mut out = ds.clone();
        for (j, mut col) in out.features.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        let (m, s) = (self.means[p], self.stds[p]);
        out.target.mapv_inplace(|v| (v - m) / s);
        Ok(out)
    }

    pub fn inverse_transform(&self, ds: &Dataset) -> Result<Dataset> {
        self.check(ds)?;
        let p = self.n_features();
        let mut out = ds.clone();
        for (j, mut col) in out.features.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            col.mapv_inplace(|v| v * s + m);
        }
        let (m, s) = (self.means[p], self.stds[p]);
        out.target.mapv_inplace(|v| v * s + m);
        Ok(out)
    }
}

fn mean_std(values: ArrayView1<'_, f64>) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.sum() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    // Constant columns keep unit scale and become all-zero after centering.
    if std <= 1e-12 * mean.abs().max(1.0) {
        (mean, 1.0)
    } else {
        (mean, std)
    }
}

/// Column means and sample (ddof = 1) standard deviations.
pub fn fit_scaler(ds: &Dataset) -> Result<Scaler> {
    if ds.n_rows() < 2 {
        return Err(CadreError::TooFewRows {
            required: 2,
            actual: ds.n_rows(),
        });
    }
    let (mut means, mut stds): (Vec<f64>, Vec<f64>) =
        ds.features.columns().into_iter().map(mean_std).unzip();
    let (m, s) = mean_std(ds.target.view());
    means.push(m);
    stds.push(s);
    Ok(Scaler { means, stds })
}

pub fn apply_scaler(ds: &Dataset, scaler: &Scaler) -> Result<Dataset> {
    scaler.transform(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            seed,
        }
    }
}

/// Shuffled (train, test) row indices; train gets `floor(fraction * N)` rows.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(CadreError::InvalidArgument(format!(
            "train fraction {} not in (0, 1)",
            spec.train_fraction
        )));
    }
    let n_train = (spec.train_fraction * n as f64).floor() as usize;
    if n_train < 1 || n_train + 1 > n {
        return Err(CadreError::InvalidArgument(format!(
            "split of {n} rows at fraction {} leaves an empty side",
            spec.train_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.n_rows(), spec)?;
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}

/// N row indices drawn uniformly with replacement.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn bootstrap_sample(ds: &Dataset, seed: u64) -> Dataset {
    ds.select_rows(&bootstrap_indices(ds.n_rows(), seed))
}

/// Independent child seed for stream `stream` of `master` (SplitMix64 finalizer).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Constants of the two-feature synthetic problem.
///
/// Group `k` has connectivity uniform on `[k, k+1)`, so the group label is
/// `floor(connectivity)`. Polarizability is bimodal (modes at
/// `±POLARIZABILITY_MODE`) independently of the group, which is what makes
/// unsupervised clustering on both features split along the wrong axis.
/// The target is `INTERCEPTS[k] + SLOPES[k] * polarizability + noise`.
pub mod synthetic {
    pub const N_GROUPS: usize = 3;
    pub const POLARIZABILITY_MODE: f64 = 1.5;
    pub const POLARIZABILITY_SPREAD: f64 = 0.35;
    pub const SLOPES: [f64; 3] = [1.5, -1.0, -2.5];
    pub const INTERCEPTS: [f64; 3] = [0.0, 6.0, 12.0];
    pub const NOISE_STD: f64 = 0.25;
    pub const FEATURE_NAMES: [&str; 2] = ["connectivity", "polarizability"];
    pub const TARGET_NAME: &str = "tg";

    /// Group of an observation from its connectivity alone.
    pub fn group_of(connectivity: f64) -> usize {
        (connectivity.floor().max(0.0) as usize).min(N_GROUPS - 1)
    }
}

/// Simulated connectivity/polarizability data with three connectivity-defined
/// groups. Returns the dataset and the 0-based true group of each row.
pub fn gen_synthetic(n_per_group: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    use synthetic::*;
    if n_per_group < 10 {
        return Err(CadreError::InvalidArgument(format!(
            "n_per_group must be at least 10, got {n_per_group}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let spread = Normal::new(0.0, POLARIZABILITY_SPREAD).expect("valid std");
    let n = N_GROUPS * n_per_group;
    let mut features = Array2::zeros((n, 2));
    let mut target = Array1::zeros(n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..N_GROUPS {
        let conn_dist = Uniform::new(k as f64, (k + 1) as f64).expect("valid range");
        for i in 0..n_per_group {
            let row = k * n_per_group + i;
            let conn = conn_dist.sample(&mut rng);
            let mode = if rng.random_bool(0.5) {
                POLARIZABILITY_MODE
            } else {
                -POLARIZABILITY_MODE
            };
            let pol = mode + spread.sample(&mut rng);
            features[[row, 0]] = conn;
            features[[row, 1]] = pol;
            target[row] = INTERCEPTS[k] + SLOPES[k] * pol + noise.sample(&mut rng);
            labels.push(group_of(conn));
        }
    }
    let ds = Dataset::new(
        features,
        target,
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        TARGET_NAME,
    )?;
    Ok((ds, labels))
}
