//! Adam and the minibatch training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ndarray::{Array1, Array2};

use crate::data::{derive_seed, Dataset};
use crate::error::{CadreError, Result};
use crate::loss::{self, ParamGrad, Rows};
use crate::model::{CadreParams, Hyperparams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment estimates over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            config,
        }
    }

    /// One bias-corrected Adam update of `x` along `grad`.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) -> Result<()> {
        let n = self.first_moment.len();
        if x.len() != n || grad.len() != n {
            return Err(CadreError::DimensionMismatch {
                expected: n,
                actual: if x.len() != n { x.len() } else { grad.len() },
            });
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..n {
            let g = grad[i];
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            x[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
        }
        Ok(())
    }
}

/// Adam update applied to structured parameters. `state` must have been
/// created with `params.n_coordinates()` entries.
pub fn adam_step(
    state: &mut AdamState,
    params: &CadreParams,
    grads: &ParamGrad,
) -> Result<CadreParams> {
    let mut x = params.to_vector();
    state.step(&mut x, &grads.to_vector())?;
    let mut out = params.clone();
    out.set_from_vector(&x)?;
    Ok(out)
}

/// Which columns feed cadre assignment and which feed the regressions.
/// `None` means every column.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSets {
    pub cadre: Option<Vec<usize>>,
    pub target: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Clamped to the number of training rows.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Consecutive loss checks without relative improvement `tol` before stopping.
    pub patience: usize,
    pub tol: f64,
    /// Full-data loss is evaluated every this many epochs.
    pub record_loss_every: usize,
    /// Independent initializations tried when no starting values are given.
    #[serde(default = "one")]
    pub restarts: usize,
    pub adam: AdamConfig,
    #[serde(default)]
    pub features: FeatureSets,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 2000,
            seed: 0,
            patience: 10,
            tol: 1e-6,
            record_loss_every: 1,
            restarts: 1,
            adam: AdamConfig::default(),
            features: FeatureSets::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CadreError::InvalidArgument(m.to_owned()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.restarts == 0 {
            return bad("restarts must be positive");
        }
        if self.record_loss_every == 0 {
            return bad("record_loss_every must be positive");
        }
        if !(self.tol >= 0.0) {
            return bad("tolerance must be nonnegative");
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2))
        {
            return bad("invalid Adam settings");
        }
        Ok(())
    }
}

/// Output of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Parameters with the lowest recorded full-data loss.
    pub params: CadreParams,
    pub hyperparams: Hyperparams,
    pub config: TrainConfig,
    /// `(epoch, full-data loss)` at every check, starting with epoch 0.
    pub loss_history: Vec<(usize, f64)>,
    pub best_loss: f64,
    pub epochs_run: usize,
}

impl TrainedModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        crate::model::predict(x, &self.params, self.hyperparams.gamma)
    }

    pub fn membership(&self, x: &[f64]) -> Vec<f64> {
        crate::model::membership(x, &self.params, self.hyperparams.gamma)
    }

    pub fn assign(&self, x: &[f64]) -> usize {
        crate::model::assign(x, &self.params, self.hyperparams.gamma)
    }
}

fn resolve(sel: &Option<Vec<usize>>, p: usize) -> Vec<usize> {
    sel.clone().unwrap_or_else(|| (0..p).collect())
}

/// k-means++ seeding: `k` distinct row indices, each later pick drawn with
/// probability proportional to its squared distance from the picks so far.
pub(crate) fn plus_plus_rows(
    rows: &[Vec<f64>],
    k: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let n = rows.len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = rows.iter().map(|r| sq(r, &rows[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 {
                    if target < w {
                        pick = Some(i);
                        break;
                    }
                    target -= w;
                }
            }
            // Rounding can walk past the end; fall back to the last candidate.
            pick.unwrap_or_else(|| nearest.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            // All remaining rows coincide with a pick; take any unused index.
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(pick);
        for (w, r) in nearest.iter_mut().zip(rows) {
            *w = w.min(sq(r, &rows[pick]));
        }
    }
    chosen
}

/// Starting parameters over all features.
pub fn init_params(train: &Dataset, hp: &Hyperparams, seed: u64) -> Result<CadreParams> {
    init_params_with(train, hp, seed, &FeatureSets::default())
}

/// Centers at k-means++-seeded training rows (over the cadre features),
/// `d = 1`, `W ~ N(0, 0.1^2)`, zero intercepts and unit variance.
pub fn init_params_with(
    train: &Dataset,
    hp: &Hyperparams,
    seed: u64,
    features: &FeatureSets,
) -> Result<CadreParams> {
    hp.validate()?;
    let m = hp.n_cadres;
    let n = train.n_rows();
    if n < m {
        return Err(CadreError::TooFewRows {
            required: m,
            actual: n,
        });
    }
    let p = train.n_features();
    let cadre = resolve(&features.cadre, p);
    let target = resolve(&features.target, p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| cadre.iter().map(|&c| train.features()[[i, c]]).collect())
        .collect();
    let picks = plus_plus_rows(&rows, m, &mut rng);
    let centers = Array2::from_shape_fn((cadre.len(), m), |(q, k)| rows[picks[k]][q]);
    let normal = Normal::new(0.0, 0.1).expect("valid std");
    let weights = Array2::from_shape_simple_fn((target.len(), m), || normal.sample(&mut rng));
    let params = CadreParams {
        centers,
        d: Array1::ones(cadre.len()),
        weights,
        intercepts: Array1::zeros(m),
        sigma2: 1.0,
        cadre_features: cadre,
        target_features: target,
    };
    params.validate(p)?;
    Ok(params)
}

pub fn train(train: &Dataset, hp: &Hyperparams, cfg: &TrainConfig) -> Result<TrainedModel> {
    train_from(train, hp, cfg, None)
}

/// Minibatch Adam on the full-data loss, optionally warm-started from `init`.
///
/// Stops after `max_epochs` or once `patience` consecutive loss checks fail
/// to improve the best loss by `tol` (relative). Returns the best-loss
/// parameters seen. Without `init`, `cfg.restarts` independent
/// initializations are trained and the one reaching the lowest loss is kept;
/// restart 0 uses `cfg.seed` itself.
pub fn train_from(
    data: &Dataset,
    hp: &Hyperparams,
    cfg: &TrainConfig,
    init: Option<&CadreParams>,
) -> Result<TrainedModel> {
    hp.validate()?;
    cfg.validate()?;
    if let Some(p0) = init {
        p0.validate(data.n_features())?;
        if p0.n_cadres() != hp.n_cadres {
            return Err(CadreError::InvalidArgument(format!(
                "starting values have {} cadres, hyperparameters ask for {}",
                p0.n_cadres(),
                hp.n_cadres
            )));
        }
        return run(data, hp, cfg, cfg.seed, p0.clone());
    }
    let runs: Vec<Result<TrainedModel>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = if r == 0 { cfg.seed } else { derive_seed(cfg.seed, r as u64) };
            let p0 = init_params_with(data, hp, seed, &cfg.features)?;
            run(data, hp, cfg, seed, p0)
        })
        .collect();
    let mut best: Option<TrainedModel> = None;
    let mut first_err = None;
    for res in runs {
        match res {
            Ok(m) => {
                if best.as_ref().is_none_or(|b| m.best_loss < b.best_loss) {
                    best = Some(m);
                }
            }
            Err(e @ CadreError::Diverged { .. }) => {
                log::warn!("training restart diverged: {e}");
                first_err.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| first_err.expect("at least one restart"))
}

fn run(
    data: &Dataset,
    hp: &Hyperparams,
    cfg: &TrainConfig,
    seed: u64,
    mut params: CadreParams,
) -> Result<TrainedModel> {
    let n = data.n_rows();

    let full_loss = |p: &CadreParams| loss::evaluate(Rows::all(data), p, hp, n, false).map(|r| r.0.total);
    let mut best = full_loss(&params).map_err(|_| CadreError::Diverged {
        epoch: 0,
        last_finite_loss: f64::NAN,
    })?;
    let mut best_params = params.clone();
    let mut history = vec![(0, best)];
    let mut last_finite = best;

    let batch_size = cfg.batch_size.min(n);
    let mut state = AdamState::new(params.n_coordinates(), cfg.adam);
    let mut x = params.to_vector();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stall = 0;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let diverged = || CadreError::Diverged {
                epoch,
                last_finite_loss: last_finite,
            };
            let (_, grad) = loss::minibatch_loss_and_gradient(data, batch, &params, hp, n)
                .map_err(|_| diverged())?;
            state.step(&mut x, &grad.to_vector())?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(diverged());
            }
            params.set_from_vector(&x)?;
        }
        epochs_run = epoch;

        if epoch % cfg.record_loss_every == 0 || epoch == cfg.max_epochs {
            let current = full_loss(&params).map_err(|_| CadreError::Diverged {
                epoch,
                last_finite_loss: last_finite,
            })?;
            last_finite = current;
            history.push((epoch, current));
            let improved = best - current > cfg.tol * best.abs().max(1.0);
            if current < best {
                best = current;
                best_params = params.clone();
            }
            if improved {
                stall = 0;
            } else {
                stall += 1;
                if stall >= cfg.patience {
                    break;
                }
            }
        }
    }
    log::debug!("trained {epochs_run} epochs, best loss {best}");

    Ok(TrainedModel {
        params: best_params,
        hyperparams: *hp,
        config: cfg.clone(),
        loss_history: history,
        best_loss: best,
        epochs_run,
    })
}
