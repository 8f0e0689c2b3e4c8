//! Negative log-posterior of the cadre model and its gradient.
//!
//! The data term is the membership-weighted squared error
//! `sum_n sum_m g_m(x_n) (y_n - e_m(x_n))^2`, an upper bound on the squared
//! error of the combined prediction. Elastic-net penalties on `d` and `W`
//! share the `1 / (2 sigma^2)` factor with the data term, and the noise
//! variance enters through `(1 + N) log sigma^2`. The variance is optimized
//! through `u = log sigma^2`.

use ndarray::{Array1, Array2};

use crate::data::Dataset;
use crate::error::{CadreError, Result};
use crate::model::{softmax_neg_scaled, CadreParams, Hyperparams};

/// `lambda * (alpha * ||v||_1 + (1 - alpha) * ||v||_2^2)`, entrywise.
pub fn elastic_net<'a>(values: impl IntoIterator<Item = &'a f64>, lambda: f64, alpha: f64) -> f64 {
    let (l1, l2) = values
        .into_iter()
        .fold((0.0, 0.0), |(l1, l2), v| (l1 + v.abs(), l2 + v * v));
    lambda * (alpha * l1 + (1.0 - alpha) * l2)
}

/// Derivative of the elastic net in one coordinate; the L1 part uses 0 at 0.
fn elastic_net_grad(v: f64, lambda: f64, alpha: f64) -> f64 {
    lambda * (alpha * sign(v) + 2.0 * (1.0 - alpha) * v)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Terms of the loss. `total = (weighted_sse + penalty_d + penalty_w) / (2 sigma^2) + log_sigma_term`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub weighted_sse: f64,
    pub log_sigma_term: f64,
    pub penalty_d: f64,
    pub penalty_w: f64,
    pub total: f64,
}

/// Partial derivatives of the loss, shaped like [`CadreParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub centers: Array2<f64>,
    pub d: Array1<f64>,
    pub weights: Array2<f64>,
    pub intercepts: Array1<f64>,
    /// Derivative with respect to `log sigma^2`.
    pub log_sigma2: f64,
}

impl ParamGrad {
    fn zeros_like(params: &CadreParams) -> Self {
        Self {
            centers: Array2::zeros(params.centers.raw_dim()),
            d: Array1::zeros(params.d.raw_dim()),
            weights: Array2::zeros(params.weights.raw_dim()),
            intercepts: Array1::zeros(params.intercepts.raw_dim()),
            log_sigma2: 0.0,
        }
    }

    /// Flattened in the same order as [`CadreParams::to_vector`].
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(
            self.centers.len() + self.d.len() + self.weights.len() + self.intercepts.len() + 1,
        );
        v.extend(self.centers.iter());
        v.extend(self.d.iter());
        v.extend(self.weights.iter());
        v.extend(self.intercepts.iter());
        v.push(self.log_sigma2);
        v
    }
}

impl CadreParams {
    /// Number of free coordinates, including `log sigma^2`.
    pub fn n_coordinates(&self) -> usize {
        self.centers.len() + self.d.len() + self.weights.len() + self.intercepts.len() + 1
    }

    /// Centers, d, weights (all row-major), intercepts, then `log sigma^2`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_coordinates());
        v.extend(self.centers.iter());
        v.extend(self.d.iter());
        v.extend(self.weights.iter());
        v.extend(self.intercepts.iter());
        v.push(self.sigma2.ln());
        v
    }

    /// Overwrites the learned values from a vector laid out as [`Self::to_vector`].
    pub fn set_from_vector(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_coordinates() {
            return Err(CadreError::DimensionMismatch {
                expected: self.n_coordinates(),
                actual: v.len(),
            });
        }
        let mut it = v.iter().copied();
        for slot in self
            .centers
            .iter_mut()
            .chain(self.d.iter_mut())
            .chain(self.weights.iter_mut())
            .chain(self.intercepts.iter_mut())
        {
            *slot = it.next().expect("length checked");
        }
        self.sigma2 = it.next().expect("length checked").exp();
        Ok(())
    }
}

/// Rows of a dataset, optionally restricted to an index list.
#[derive(Clone, Copy)]
pub(crate) struct Rows<'a> {
    pub ds: &'a Dataset,
    pub indices: Option<&'a [usize]>,
}

impl<'a> Rows<'a> {
    pub fn all(ds: &'a Dataset) -> Self {
        Self { ds, indices: None }
    }

    fn len(&self) -> usize {
        self.indices.map_or(self.ds.n_rows(), <[usize]>::len)
    }

    fn get(&self, k: usize) -> (&'a [f64], f64) {
        let i = self.indices.map_or(k, |idx| idx[k]);
        (self.ds.row_slice(i), self.ds.target()[i])
    }
}

fn finite(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CadreError::NonFiniteLoss { term })
    }
}

/// Loss (and optionally gradient) on `rows`, with the data term rescaled by
/// `n_total / rows.len()` and `n_total` in the `log sigma^2` term.
pub(crate) fn evaluate(
    rows: Rows<'_>,
    params: &CadreParams,
    hp: &Hyperparams,
    n_total: usize,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<ParamGrad>)> {
    let n_batch = rows.len();
    if n_batch == 0 {
        return Err(CadreError::EmptyInput("batch".into()));
    }
    let m_count = params.n_cadres();
    let gamma = hp.gamma;
    let scale = n_total as f64 / n_batch as f64;

    let mut dist = vec![0.0; m_count];
    let mut g = vec![0.0; m_count];
    let mut e = vec![0.0; m_count];
    let mut grad = with_grad.then(|| ParamGrad::zeros_like(params));

    let mut sse = 0.0;
    for k in 0..n_batch {
        let (x, y) = rows.get(k);
        params.sq_distances_into(x, &mut dist);
        softmax_neg_scaled(&dist, gamma, &mut g);
        params.cadre_predictions_into(x, &mut e);
        let mut data = 0.0;
        for m in 0..m_count {
            data += g[m] * (e[m] - y).powi(2);
        }
        sse += data;

        let Some(gr) = grad.as_mut() else { continue };
        for m in 0..m_count {
            let r = e[m] - y;
            // d(data)/d(e_m) and d(data)/d(score_m) with score_m = -gamma * dist_m.
            let de = 2.0 * g[m] * r;
            let ds = g[m] * (r * r - data);
            gr.intercepts[m] += de;
            for (p, &col) in params.target_features.iter().enumerate() {
                gr.weights[[p, m]] += de * x[col];
            }
            if ds != 0.0 {
                for (p, &col) in params.cadre_features.iter().enumerate() {
                    let diff = x[col] - params.centers[[p, m]];
                    let dp = params.d[p];
                    gr.centers[[p, m]] += ds * 2.0 * gamma * dp.abs() * diff;
                    gr.d[p] -= ds * gamma * sign(dp) * diff * diff;
                }
            }
        }
    }

    let sigma2 = params.sigma2;
    let u = sigma2.ln();
    let weighted_sse = finite("data", scale * sse)?;
    let penalty_d = finite("d penalty", elastic_net(params.d.iter(), hp.lambda_d, hp.alpha_d))?;
    let penalty_w = finite(
        "W penalty",
        elastic_net(params.weights.iter(), hp.lambda_w, hp.alpha_w),
    )?;
    let log_sigma_term = finite("log sigma^2", (1.0 + n_total as f64) * u)?;
    let scaled = (weighted_sse + penalty_d + penalty_w) / (2.0 * sigma2);
    let total = finite("total", scaled + log_sigma_term)?;
    let breakdown = LossBreakdown {
        weighted_sse,
        log_sigma_term,
        penalty_d,
        penalty_w,
        total,
    };

    if let Some(gr) = grad.as_mut() {
        let data_factor = scale / (2.0 * sigma2);
        let pen_factor = 1.0 / (2.0 * sigma2);
        gr.centers.mapv_inplace(|v| v * data_factor);
        gr.weights.mapv_inplace(|v| v * data_factor);
        gr.intercepts.mapv_inplace(|v| v * data_factor);
        gr.d.mapv_inplace(|v| v * data_factor);
        gr.d.zip_mut_with(&params.d, |gv, &dv| {
            *gv += pen_factor * elastic_net_grad(dv, hp.lambda_d, hp.alpha_d)
        });
        gr.weights.zip_mut_with(&params.weights, |gv, &wv| {
            *gv += pen_factor * elastic_net_grad(wv, hp.lambda_w, hp.alpha_w)
        });
        gr.log_sigma2 = -scaled + (1.0 + n_total as f64);
    }
    Ok((breakdown, grad))
}

/// Loss over the whole of `batch`, with `N` = batch size.
pub fn loss(batch: &Dataset, params: &CadreParams, hp: &Hyperparams) -> Result<LossBreakdown> {
    Ok(evaluate(Rows::all(batch), params, hp, batch.n_rows(), false)?.0)
}

/// Analytic gradient of [`loss`].
pub fn gradient(batch: &Dataset, params: &CadreParams, hp: &Hyperparams) -> Result<ParamGrad> {
    let (_, g) = evaluate(Rows::all(batch), params, hp, batch.n_rows(), true)?;
    Ok(g.expect("gradient requested"))
}

/// Loss on a minibatch, rescaled to estimate the loss on `n_total` rows.
pub fn minibatch_loss_and_gradient(
    ds: &Dataset,
    batch: &[usize],
    params: &CadreParams,
    hp: &Hyperparams,
    n_total: usize,
) -> Result<(LossBreakdown, ParamGrad)> {
    let rows = Rows {
        ds,
        indices: Some(batch),
    };
    let (l, g) = evaluate(rows, params, hp, n_total, true)?;
    Ok((l, g.expect("gradient requested")))
}

/// Central finite differences of `loss(..).total` in every coordinate,
/// with `log sigma^2` perturbed directly.
pub fn fd_gradient(
    batch: &Dataset,
    params: &CadreParams,
    hp: &Hyperparams,
    h: f64,
) -> Result<ParamGrad> {
    if !(h > 0.0) {
        return Err(CadreError::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let base = params.to_vector();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut v = base.clone();
    for i in 0..base.len() {
        v[i] = base[i] + h;
        probe.set_from_vector(&v)?;
        let up = loss(batch, &probe, hp)?.total;
        v[i] = base[i] - h;
        probe.set_from_vector(&v)?;
        let down = loss(batch, &probe, hp)?.total;
        v[i] = base[i];
        out.push((up - down) / (2.0 * h));
    }
    let mut grad = ParamGrad::zeros_like(params);
    let mut it = out.into_iter();
    for slot in grad
        .centers
        .iter_mut()
        .chain(grad.d.iter_mut())
        .chain(grad.weights.iter_mut())
        .chain(grad.intercepts.iter_mut())
    {
        *slot = it.next().expect("one entry per coordinate");
    }
    grad.log_sigma2 = it.next().expect("one entry per coordinate");
    Ok(grad)
}
