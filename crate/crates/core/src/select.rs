//! Hyperparameter grid search with k-fold cross-validation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, Dataset};
use crate::error::{CadreError, Result};
use crate::eval::mse;
use crate::model::{predict_rows, Hyperparams};
use crate::optim::{train, TrainConfig};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub m_values: Vec<usize>,
    pub gamma_values: Vec<f64>,
    pub lambda_d_values: Vec<f64>,
    pub lambda_w_values: Vec<f64>,
    /// Pair `lambda_d_values[i]` with `lambda_w_values[i]` instead of
    /// taking their product. Both lists must then have equal length.
    pub tie_lambdas: bool,
    pub alpha_d: f64,
    pub alpha_w: f64,
}

impl Default for Grid {
    fn default() -> Self {
        let lambdas = vec![0.01, 0.05, 0.1, 0.5];
        Self {
            m_values: (1..=6).collect(),
            gamma_values: vec![0.5, 1.0, 2.0, 4.0],
            lambda_d_values: lambdas.clone(),
            lambda_w_values: lambdas,
            tie_lambdas: true,
            alpha_d: 0.95,
            alpha_w: 0.05,
        }
    }
}

impl Grid {
    /// A grid holding exactly `hp`.
    pub fn single(hp: &Hyperparams) -> Self {
        Self {
            m_values: vec![hp.n_cadres],
            gamma_values: vec![hp.gamma],
            lambda_d_values: vec![hp.lambda_d],
            lambda_w_values: vec![hp.lambda_w],
            tie_lambdas: true,
            alpha_d: hp.alpha_d,
            alpha_w: hp.alpha_w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_values.is_empty()
            || self.gamma_values.is_empty()
            || self.lambda_d_values.is_empty()
            || self.lambda_w_values.is_empty()
        {
            return Err(CadreError::InvalidArgument("every grid list must be nonempty".into()));
        }
        if self.tie_lambdas && self.lambda_d_values.len() != self.lambda_w_values.len() {
            return Err(CadreError::InvalidArgument(
                "tied lambda lists must have equal length".into(),
            ));
        }
        for hp in self.points() {
            hp.validate()?;
        }
        Ok(())
    }

    /// Grid points in a fixed order: M outermost, then γ, then λ.
    pub fn points(&self) -> Vec<Hyperparams> {
        let lambdas: Vec<(f64, f64)> = if self.tie_lambdas {
            self.lambda_d_values
                .iter()
                .copied()
                .zip(self.lambda_w_values.iter().copied())
                .collect()
        } else {
            self.lambda_d_values
                .iter()
                .flat_map(|&ld| self.lambda_w_values.iter().map(move |&lw| (ld, lw)))
                .collect()
        };
        let mut out = Vec::new();
        for &m in &self.m_values {
            for &gamma in &self.gamma_values {
                for &(lambda_d, lambda_w) in &lambdas {
                    out.push(Hyperparams {
                        gamma,
                        lambda_d,
                        lambda_w,
                        alpha_d: self.alpha_d,
                        alpha_w: self.alpha_w,
                        n_cadres: m,
                    });
                }
            }
        }
        out
    }
}

/// Validation index sets of a shuffled k-fold partition of `0..n`.
/// Fold sizes differ by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(CadreError::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(CadreError::TooFewRows { required: k, actual: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub hyperparams: Hyperparams,
    pub fold_mse: Vec<f64>,
    /// Mean validation MSE; NaN when `diverged`.
    pub mean_mse: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub rows: Vec<CvRow>,
}

impl CvTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "n_cadres", "gamma", "lambda_d", "lambda_w", "alpha_d", "alpha_w", "mean_mse", "diverged",
        ])?;
        for r in &self.rows {
            let hp = &r.hyperparams;
            wtr.write_record([
                hp.n_cadres.to_string(),
                hp.gamma.to_string(),
                hp.lambda_d.to_string(),
                hp.lambda_w.to_string(),
                hp.alpha_d.to_string(),
                hp.alpha_w.to_string(),
                r.mean_mse.to_string(),
                r.diverged.to_string(),
            ])?;
        }
        wtr.flush().map_err(|source| CadreError::Io {
            path: "<cv csv>".into(),
            source,
        })?;
        Ok(())
    }
}

/// Lowest mean MSE among non-diverged rows; exact ties go to smaller M,
/// then larger λ_W.
pub fn select_best(rows: &[CvRow]) -> Option<&CvRow> {
    rows.iter().filter(|r| !r.diverged && r.mean_mse.is_finite()).min_by(|a, b| {
        a.mean_mse
            .total_cmp(&b.mean_mse)
            .then(a.hyperparams.n_cadres.cmp(&b.hyperparams.n_cadres))
            .then(b.hyperparams.lambda_w.total_cmp(&a.hyperparams.lambda_w))
    })
}

/// Scores every grid point by mean validation MSE over `k` folds of `train`
/// and returns the best point with the full table. Folds are drawn from
/// `cfg.seed`; each fold's training run uses a seed derived from it.
pub fn cross_validate(
    train_set: &Dataset,
    grid: &Grid,
    k: usize,
    cfg: &TrainConfig,
) -> Result<(Hyperparams, CvTable)> {
    grid.validate()?;
    cfg.validate()?;
    let n = train_set.n_rows();
    let m_max = grid.m_values.iter().copied().max().unwrap_or(1);
    if n / k.max(1) < m_max {
        return Err(CadreError::TooFewRows {
            required: m_max * k,
            actual: n,
        });
    }
    let folds = kfold_indices(n, k, cfg.seed)?;
    let splits: Vec<(Dataset, Dataset)> = folds
        .iter()
        .map(|val| {
            let mut in_val = vec![false; n];
            for &i in val {
                in_val[i] = true;
            }
            let tr: Vec<usize> = (0..n).filter(|&i| !in_val[i]).collect();
            (train_set.select_rows(&tr), train_set.select_rows(val))
        })
        .collect();

    let points = grid.points();
    let jobs: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|p| (0..k).map(move |f| (p, f))).collect();
    let scores: Vec<Result<Option<f64>>> = jobs
        .par_iter()
        .map(|&(p, f)| {
            let hp = &points[p];
            let (tr, val) = &splits[f];
            let fold_cfg = TrainConfig {
                seed: derive_seed(cfg.seed, f as u64),
                ..cfg.clone()
            };
            match train(tr, hp, &fold_cfg) {
                Ok(model) => {
                    let pred = predict_rows(val.features(), &model.params, hp.gamma);
                    let v = mse(&pred.to_vec(), &val.target().to_vec())?;
                    Ok(v.is_finite().then_some(v))
                }
                Err(CadreError::Diverged { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(points.len());
    let mut it = scores.into_iter();
    for hp in points {
        let mut fold_mse = Vec::with_capacity(k);
        let mut diverged = false;
        for _ in 0..k {
            match it.next().expect("one score per job")? {
                Some(v) => fold_mse.push(v),
                None => {
                    diverged = true;
                    fold_mse.push(f64::NAN);
                }
            }
        }
        let mean_mse = if diverged {
            f64::NAN
        } else {
            fold_mse.iter().sum::<f64>() / k as f64
        };
        rows.push(CvRow {
            hyperparams: hp,
            fold_mse,
            mean_mse,
            diverged,
        });
    }
    let best = select_best(&rows)
        .map(|r| r.hyperparams)
        .ok_or_else(|| CadreError::InvalidArgument("every grid point diverged".into()))?;
    Ok((best, CvTable { rows }))
}
