//! Piecewise-linear comparators: k-means followed by one ridge regression
//! per cluster, plus plain global ridge regression.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CadreError, Result};
use crate::model::argmax;
use crate::optim::plus_plus_rows;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    /// One column per cluster (`P x K`).
    pub centers: Array2<f64>,
    pub iterations: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centers.ncols()
    }

    /// Nearest center in Euclidean distance; ties to the lowest index.
    pub fn assign(&self, x: &[f64]) -> usize {
        let neg: Vec<f64> = self
            .centers
            .columns()
            .into_iter()
            .map(|c| -sq_dist(x, c))
            .collect();
        argmax(&neg)
    }
}

fn sq_dist(x: &[f64], c: ArrayView1<'_, f64>) -> f64 {
    x.iter().zip(c.iter()).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Lloyd's algorithm from k-means++ seeds.
pub fn kmeans_fit(ds: &Dataset, k: usize, seed: u64, max_iter: usize) -> Result<KMeansModel> {
    let n = ds.n_rows();
    if k == 0 {
        return Err(CadreError::InvalidArgument("k must be positive".into()));
    }
    if n < k {
        return Err(CadreError::TooFewRows {
            required: k,
            actual: n,
        });
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| ds.row_slice(i).to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = plus_plus_rows(&rows, k, &mut rng);
    let init = Array2::from_shape_fn((ds.n_features(), k), |(p, j)| rows[picks[j]][p]);
    kmeans_from(ds.features(), init, max_iter)
}

/// Lloyd iterations from explicit starting centers (`P x K`). Stops at an
/// assignment fixed point or after `max_iter` assignment steps. Empty
/// clusters keep their previous center.
pub fn kmeans_from(
    features: &Array2<f64>,
    init_centers: Array2<f64>,
    max_iter: usize,
) -> Result<KMeansModel> {
    let (n, p) = features.dim();
    if init_centers.nrows() != p {
        return Err(CadreError::DimensionMismatch {
            expected: p,
            actual: init_centers.nrows(),
        });
    }
    let mut model = KMeansModel {
        centers: init_centers,
        iterations: 0,
        inertia_history: Vec::new(),
    };
    let k = model.k();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    for _ in 0..max_iter {
        model.iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, row) in features.rows().into_iter().enumerate() {
            let x = row.to_vec();
            let j = model.assign(&x);
            inertia += sq_dist(&x, model.centers.column(j));
            if labels[i] != Some(j) {
                labels[i] = Some(j);
                changed = true;
            }
        }
        model.inertia_history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((p, k));
        let mut counts = vec![0usize; k];
        for (i, row) in features.rows().into_iter().enumerate() {
            let j = labels[i].expect("assigned above");
            counts[j] += 1;
            let mut col = sums.column_mut(j);
            col += &row;
        }
        for j in 0..k {
            if counts[j] > 0 {
                let mean = sums.column(j).mapv(|v| v / counts[j] as f64);
                model.centers.column_mut(j).assign(&mean);
            }
        }
    }
    Ok(model)
}

/// Linear model `w . x + b` fitted by ridge regression with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl RidgeModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Minimizes `||y - X w - b||^2 + ridge * ||w||^2` in closed form.
pub fn ridge_fit(features: &Array2<f64>, target: &Array1<f64>, ridge: f64) -> Result<RidgeModel> {
    if !(ridge >= 0.0) {
        return Err(CadreError::InvalidArgument(format!(
            "ridge penalty must be nonnegative, got {ridge}"
        )));
    }
    let (n, p) = features.dim();
    if target.len() != n {
        return Err(CadreError::DimensionMismatch {
            expected: n,
            actual: target.len(),
        });
    }
    if n == 0 {
        return Err(CadreError::EmptyInput("ridge training set".into()));
    }
    // Design matrix with a leading column of ones.
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { features[[i, j - 1]] });
    let y = DVector::from_iterator(n, target.iter().copied());
    let mut gram = design.transpose() * &design;
    for j in 1..=p {
        gram[(j, j)] += ridge;
    }
    let rhs = design.transpose() * y;
    let chol = gram.cholesky().ok_or(CadreError::Singular)?;
    let diag = chol.l_dirty().diagonal();
    let max_pivot = diag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if diag.iter().any(|v| v * v <= 1e-12 * max_pivot * max_pivot) {
        return Err(CadreError::Singular);
    }
    let sol = chol.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(CadreError::Singular);
    }
    Ok(RidgeModel {
        intercept: sol[0],
        weights: sol.iter().skip(1).copied().collect(),
    })
}

/// K-means clustering with a separate ridge regression per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterwiseRidge {
    pub kmeans: KMeansModel,
    /// One model per cluster; empty clusters hold a copy of `global`.
    pub models: Vec<RidgeModel>,
    pub global: RidgeModel,
    pub ridge: f64,
}

pub const KMEANS_MAX_ITER: usize = 300;

pub fn clusterwise_ridge_fit(ds: &Dataset, k: usize, ridge: f64, seed: u64) -> Result<ClusterwiseRidge> {
    let kmeans = kmeans_fit(ds, k, seed, KMEANS_MAX_ITER)?;
    let global = ridge_fit(ds.features(), ds.target(), ridge)?;
    let labels: Vec<usize> = (0..ds.n_rows()).map(|i| kmeans.assign(ds.row_slice(i))).collect();
    let mut models = Vec::with_capacity(k);
    for j in 0..k {
        let members: Vec<usize> = (0..ds.n_rows()).filter(|&i| labels[i] == j).collect();
        if members.is_empty() {
            models.push(global.clone());
            continue;
        }
        let sub = ds.select_rows(&members);
        models.push(ridge_fit(sub.features(), sub.target(), ridge)?);
    }
    Ok(ClusterwiseRidge {
        kmeans,
        models,
        global,
        ridge,
    })
}

/// Predicts with the linear model of the nearest cluster center.
pub fn clusterwise_predict(model: &ClusterwiseRidge, x: &[f64]) -> f64 {
    model.models[model.kmeans.assign(x)].predict(x)
}
