//! Repeated random train/test splits comparing the cadre model with a
//! global ridge regression and K-means + per-cluster ridge.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{clusterwise_predict, clusterwise_ridge_fit, ridge_fit};
use crate::data::{derive_seed, fit_scaler, split_indices, Dataset, SplitSpec};
use crate::error::{CadreError, Result};
use crate::eval::mse;
use crate::model::{predict_rows, Hyperparams};
use crate::optim::{train, TrainConfig};
use crate::select::{cross_validate, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Scm,
    Ridge,
    KmRidge,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Scm, Method::Ridge, Method::KmRidge];

    pub fn name(self) -> &'static str {
        match self {
            Method::Scm => "scm",
            Method::Ridge => "ridge",
            Method::KmRidge => "km_ridge",
        }
    }
}

/// How the cadre model's hyperparameters are chosen on each split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HyperparamChoice {
    Fixed(Hyperparams),
    CrossValidate { grid: Grid, folds: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n_splits: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub scm: HyperparamChoice,
    pub train: TrainConfig,
    /// Ridge strength for both baselines.
    pub ridge: f64,
    /// Cluster count for K-means + ridge; `None` uses the cadre count
    /// chosen for the split.
    pub km_clusters: Option<usize>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_splits: 20,
            train_fraction: 0.75,
            seed: 0,
            scm: HyperparamChoice::CrossValidate {
                grid: Grid::default(),
                folds: crate::select::DEFAULT_FOLDS,
            },
            train: TrainConfig::default(),
            ridge: 1.0,
            km_clusters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub split: usize,
    pub method: Method,
    /// Test MSE on the standardized target.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_mse: f64,
    /// Sample standard deviation across splits.
    pub std_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub results: Vec<SplitResult>,
    pub scm_hyperparams: Vec<Hyperparams>,
    pub summary: Vec<MethodSummary>,
}

impl BenchmarkReport {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// `method,split,mse` per split.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["method", "split", "mse"])?;
        for r in &self.results {
            wtr.write_record([r.method.name().to_owned(), r.split.to_string(), r.mse.to_string()])?;
        }
        wtr.flush().map_err(|source| CadreError::Io {
            path: "<benchmark csv>".into(),
            source,
        })?;
        Ok(())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

struct SplitOutcome {
    hp: Hyperparams,
    scores: [f64; 3],
}

fn run_split(ds: &Dataset, cfg: &BenchmarkConfig, split: usize) -> Result<SplitOutcome> {
    let split_seed = derive_seed(cfg.seed, split as u64);
    let (tr, te) = split_indices(ds.n_rows(), SplitSpec::new(cfg.train_fraction, split_seed))?;
    let raw_train = ds.select_rows(&tr);
    let scaler = fit_scaler(&raw_train)?;
    let train_set = scaler.transform(&raw_train)?;
    let test_set = scaler.transform(&ds.select_rows(&te))?;
    let truth = test_set.target().to_vec();

    let train_cfg = TrainConfig {
        seed: derive_seed(split_seed, 1),
        ..cfg.train.clone()
    };
    let hp = match &cfg.scm {
        HyperparamChoice::Fixed(hp) => *hp,
        HyperparamChoice::CrossValidate { grid, folds } => {
            cross_validate(&train_set, grid, *folds, &train_cfg)?.0
        }
    };
    let scm = train(&train_set, &hp, &train_cfg)?;
    let scm_mse = mse(&predict_rows(test_set.features(), &scm.params, hp.gamma).to_vec(), &truth)?;

    let global = ridge_fit(train_set.features(), train_set.target(), cfg.ridge)?;
    let ridge_pred: Vec<f64> = (0..test_set.n_rows())
        .map(|i| global.predict(test_set.row_slice(i)))
        .collect();
    let ridge_mse = mse(&ridge_pred, &truth)?;

    let k = cfg.km_clusters.unwrap_or(hp.n_cadres);
    let km = clusterwise_ridge_fit(&train_set, k, cfg.ridge, derive_seed(split_seed, 2))?;
    let km_pred: Vec<f64> = (0..test_set.n_rows())
        .map(|i| clusterwise_predict(&km, test_set.row_slice(i)))
        .collect();
    let km_mse = mse(&km_pred, &truth)?;

    Ok(SplitOutcome {
        hp,
        scores: [scm_mse, ridge_mse, km_mse],
    })
}

/// Scaling is fit on each split's training rows only; all MSEs are on the
/// standardized target. Splits run concurrently and are reported in order.
pub fn run_benchmark(ds: &Dataset, cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if cfg.n_splits == 0 {
        return Err(CadreError::InvalidArgument("need at least one split".into()));
    }
    let outcomes: Vec<Result<SplitOutcome>> =
        (0..cfg.n_splits).into_par_iter().map(|s| run_split(ds, cfg, s)).collect();
    let outcomes: Vec<SplitOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(3 * cfg.n_splits);
    for (j, method) in Method::ALL.into_iter().enumerate() {
        for (split, o) in outcomes.iter().enumerate() {
            results.push(SplitResult {
                split,
                method,
                mse: o.scores[j],
            });
        }
    }
    let summary = Method::ALL
        .into_iter()
        .enumerate()
        .map(|(j, method)| {
            let v: Vec<f64> = outcomes.iter().map(|o| o.scores[j]).collect();
            let (mean_mse, std_mse) = mean_std(&v);
            MethodSummary {
                method,
                mean_mse,
                std_mse,
            }
        })
        .collect();
    Ok(BenchmarkReport {
        results,
        scm_hyperparams: outcomes.iter().map(|o| o.hp).collect(),
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    fn fixed(hp: Hyperparams, n_splits: usize, epochs: usize) -> BenchmarkConfig {
        BenchmarkConfig {
            n_splits,
            scm: HyperparamChoice::Fixed(hp),
            train: TrainConfig {
                max_epochs: epochs,
                patience: epochs,
                tol: 0.0,
                ..TrainConfig::default()
            },
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn two_splits_emit_two_rows_per_method() {
        let (ds, _) = gen_synthetic(10, 0).unwrap();
        let report = run_benchmark(&ds, &fixed(Hyperparams::default(), 2, 5)).unwrap();
        assert_eq!(report.results.len(), 6);
        for m in Method::ALL {
            assert_eq!(report.results.iter().filter(|r| r.method == m).count(), 2);
            let s = report.summary_for(m).unwrap();
            assert!(s.mean_mse.is_finite() && s.std_mse >= 0.0);
        }
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }

    #[test]
    fn deterministic_per_seed() {
        let (ds, _) = gen_synthetic(10, 1).unwrap();
        let cfg = fixed(Hyperparams::default(), 3, 5);
        assert_eq!(run_benchmark(&ds, &cfg).unwrap(), run_benchmark(&ds, &cfg).unwrap());
    }

    #[test]
    fn mean_std_sample_convention() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn scm_beats_global_ridge_on_grouped_data() {
        let (ds, _) = gen_synthetic(100, 2).unwrap();
        let hp = Hyperparams {
            gamma: 4.0,
            ..Hyperparams::default()
        };
        let report = run_benchmark(&ds, &fixed(hp, 3, 1500)).unwrap();
        let scm = report.summary_for(Method::Scm).unwrap().mean_mse;
        let ridge = report.summary_for(Method::Ridge).unwrap().mean_mse;
        assert!(scm <= ridge, "scm {scm} ridge {ridge}");
    }
}
