//! The cadre model: seminorm gating over cadre centers and one affine
//! predictor per cadre.
//!
//! An observation `x` belongs to cadre `m` with probability
//! `g_m(x) = softmax_m(-gamma * ||x_C - c_m||_d^2)`, where `x_C` is the
//! sub-vector of cadre-assignment features and `||v||_d^2 = sum_p |d_p| v_p^2`.
//! Each cadre predicts `e_m(x) = w_m . x_T + w0_m` from the target features
//! `x_T`, and the model predicts the membership-weighted average.

use std::collections::HashSet;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{CadreError, Result};

/// Model-level settings that are not learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Sharpness of cadre assignment.
    pub gamma: f64,
    pub lambda_d: f64,
    pub lambda_w: f64,
    /// L1 share of the elastic net on `d`.
    pub alpha_d: f64,
    /// L1 share of the elastic net on `W`.
    pub alpha_w: f64,
    pub n_cadres: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lambda_d: 0.01,
            lambda_w: 0.01,
            alpha_d: 0.95,
            alpha_w: 0.05,
            n_cadres: 3,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CadreError::InvalidArgument(msg));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.lambda_d >= 0.0 && self.lambda_w >= 0.0) {
            return bad("regularization strengths must be nonnegative".into());
        }
        if !((0.0..=1.0).contains(&self.alpha_d) && (0.0..=1.0).contains(&self.alpha_w)) {
            return bad("elastic-net mixing parameters must lie in [0, 1]".into());
        }
        if self.n_cadres == 0 {
            return bad("need at least one cadre".into());
        }
        Ok(())
    }
}

/// Learned parameters of a cadre model.
#[derive(Debug, Clone, PartialEq)]
pub struct CadreParams {
    /// Cadre centers, one column per cadre (`P_C x M`).
    pub centers: Array2<f64>,
    /// Per-feature relevance of the cadre-assignment seminorm (`P_C`).
    pub d: Array1<f64>,
    /// Regression weights, one column per cadre (`P_T x M`).
    pub weights: Array2<f64>,
    /// Regression intercepts (`M`).
    pub intercepts: Array1<f64>,
    /// Noise variance.
    pub sigma2: f64,
    /// Columns of `x` used for cadre assignment.
    pub cadre_features: Vec<usize>,
    /// Columns of `x` used by the per-cadre regressions.
    pub target_features: Vec<usize>,
}

impl CadreParams {
    pub fn n_cadres(&self) -> usize {
        self.intercepts.len()
    }

    /// Checks internal shapes and that the index lists address `n_features` columns.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        let m = self.n_cadres();
        if m == 0 {
            return Err(CadreError::InvalidArgument("need at least one cadre".into()));
        }
        let pc = self.cadre_features.len();
        let pt = self.target_features.len();
        let shape_ok = self.centers.dim() == (pc, m)
            && self.d.len() == pc
            && self.weights.dim() == (pt, m);
        if !shape_ok {
            return Err(CadreError::InvalidArgument(format!(
                "inconsistent parameter shapes: centers {:?}, d {}, weights {:?}, intercepts {}",
                self.centers.dim(),
                self.d.len(),
                self.weights.dim(),
                m
            )));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(CadreError::InvalidArgument(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        for (what, idx) in [
            ("cadre", &self.cadre_features),
            ("target", &self.target_features),
        ] {
            let mut seen = HashSet::new();
            for &i in idx {
                if i >= n_features || !seen.insert(i) {
                    return Err(CadreError::InvalidArgument(format!(
                        "{what} feature index {i} is out of range or repeated"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Squared seminorm distance from `x` to every cadre center.
    pub(crate) fn sq_distances_into(&self, x: &[f64], out: &mut [f64]) {
        for (m, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (p, &col) in self.cadre_features.iter().enumerate() {
                let diff = x[col] - self.centers[[p, m]];
                acc += self.d[p].abs() * diff * diff;
            }
            *slot = acc;
        }
    }

    /// Per-cadre affine predictions at `x`.
    pub(crate) fn cadre_predictions_into(&self, x: &[f64], out: &mut [f64]) {
        for (m, slot) in out.iter_mut().enumerate() {
            let mut acc = self.intercepts[m];
            for (p, &col) in self.target_features.iter().enumerate() {
                acc += self.weights[[p, m]] * x[col];
            }
            *slot = acc;
        }
    }
}

/// `sum_p |d_p| (x_p - c_p)^2`.
pub fn seminorm_sq(x: &[f64], c: &[f64], d: &[f64]) -> Result<f64> {
    if x.len() != c.len() || x.len() != d.len() {
        return Err(CadreError::DimensionMismatch {
            expected: x.len(),
            actual: if c.len() != x.len() { c.len() } else { d.len() },
        });
    }
    Ok(x.iter()
        .zip(c)
        .zip(d)
        .map(|((xi, ci), di)| di.abs() * (xi - ci).powi(2))
        .sum())
}

/// In-place `softmax(-gamma * dist)`, shifted by the smallest distance.
pub(crate) fn softmax_neg_scaled(dist: &[f64], gamma: f64, out: &mut [f64]) {
    let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (g, &dm) in out.iter_mut().zip(dist) {
        *g = (-gamma * (dm - min)).exp();
        total += *g;
    }
    for g in out.iter_mut() {
        *g /= total;
    }
}

/// Cadre membership probabilities of `x`.
pub fn membership(x: &[f64], params: &CadreParams, gamma: f64) -> Vec<f64> {
    let m = params.n_cadres();
    let mut dist = vec![0.0; m];
    params.sq_distances_into(x, &mut dist);
    let mut g = vec![0.0; m];
    softmax_neg_scaled(&dist, gamma, &mut g);
    g
}

/// Prediction of cadre `m`'s linear model at `x`.
pub fn predict_cadre(x: &[f64], params: &CadreParams, m: usize) -> Result<f64> {
    if m >= params.n_cadres() {
        return Err(CadreError::InvalidArgument(format!(
            "cadre index {m} out of range for {} cadres",
            params.n_cadres()
        )));
    }
    let w = params.weights.column(m);
    Ok(params.intercepts[m]
        + params
            .target_features
            .iter()
            .zip(w.iter())
            .map(|(&col, wi)| wi * x[col])
            .sum::<f64>())
}

/// Membership-weighted combination of the cadre predictions.
pub fn predict(x: &[f64], params: &CadreParams, gamma: f64) -> f64 {
    let g = membership(x, params, gamma);
    let mut e = vec![0.0; g.len()];
    params.cadre_predictions_into(x, &mut e);
    g.iter().zip(&e).map(|(a, b)| a * b).sum()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Most likely cadre of `x` (0-based, ties to the lowest index).
pub fn assign(x: &[f64], params: &CadreParams, gamma: f64) -> usize {
    argmax(&membership(x, params, gamma))
}

/// Row-wise [`predict`] over a feature matrix.
pub fn predict_rows(features: &Array2<f64>, params: &CadreParams, gamma: f64) -> Array1<f64> {
    features
        .rows()
        .into_iter()
        .map(|r| match r.as_slice() {
            Some(x) => predict(x, params, gamma),
            None => predict(&r.to_vec(), params, gamma),
        })
        .collect()
}

/// Row-wise [`assign`] over a feature matrix.
pub fn assign_rows(features: &Array2<f64>, params: &CadreParams, gamma: f64) -> Vec<usize> {
    features
        .rows()
        .into_iter()
        .map(|r| match r.as_slice() {
            Some(x) => assign(x, params, gamma),
            None => assign(&r.to_vec(), params, gamma),
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random valid parameters over `p` features with all features shared.
    pub(crate) fn random_params(rng: &mut impl Rng, p: usize, m: usize) -> CadreParams {
        let mut u = || rng.random_range(-1.5..1.5);
        CadreParams {
            centers: Array2::from_shape_simple_fn((p, m), &mut u),
            d: Array1::from_shape_simple_fn(p, &mut u),
            weights: Array2::from_shape_simple_fn((p, m), &mut u),
            intercepts: Array1::from_shape_simple_fn(m, &mut u),
            sigma2: 0.5 + u().abs(),
            cadre_features: (0..p).collect(),
            target_features: (0..p).collect(),
        }
    }

    fn two_center_params() -> CadreParams {
        CadreParams {
            centers: array![[0.0, 4.0], [0.0, 0.0]],
            d: array![1.0, 1.0],
            weights: array![[1.0, -1.0], [1.0, 2.0]],
            intercepts: array![0.0, 3.0],
            sigma2: 1.0,
            cadre_features: vec![0, 1],
            target_features: vec![0, 1],
        }
    }

    #[test]
    fn seminorm_examples() {
        assert_eq!(seminorm_sq(&[1.0, 2.0], &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(seminorm_sq(&[1.0, 2.0], &[5.0, -2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(seminorm_sq(&[1.0, 2.0], &[0.0, 0.0], &[1.0, -2.0]).unwrap(), 9.0);
        assert!(seminorm_sq(&[1.0], &[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn single_cadre_membership_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&mut rng, 3, 1);
        assert_eq!(membership(&[0.3, -2.0, 9.0], &p, 5.0), vec![1.0]);
        assert_eq!(assign(&[0.3, -2.0, 9.0], &p, 5.0), 0);
    }

    #[test]
    fn zero_d_gives_uniform_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = random_params(&mut rng, 3, 4);
        p.d.fill(0.0);
        for g in membership(&[1.0, 2.0, 3.0], &p, 2.0) {
            assert!((g - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn equidistant_centers_split_evenly_and_tie_to_first() {
        let p = two_center_params();
        let g = membership(&[2.0, 7.0], &p, 3.0);
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        assert_eq!(assign(&[2.0, 7.0], &p, 3.0), 0);
    }

    #[test]
    fn sharp_gamma_at_center() {
        let p = two_center_params();
        let g = membership(&[0.0, 0.0], &p, 10.0);
        assert!(g[0] > 0.999);
    }

    #[test]
    fn cadre_predictions() {
        let mut p = two_center_params();
        assert_eq!(predict_cadre(&[2.0, 3.0], &p, 0).unwrap(), 5.0);
        assert_eq!(predict_cadre(&[0.0, 0.0], &p, 1).unwrap(), 3.0);
        assert!(predict_cadre(&[0.0, 0.0], &p, 2).is_err());
        p.weights.column_mut(1).fill(0.0);
        assert_eq!(predict_cadre(&[-7.0, 11.0], &p, 1).unwrap(), 3.0);
    }

    #[test]
    fn prediction_is_convex_combination() {
        // Equidistant point: memberships (0.5, 0.5).
        let mut p = two_center_params();
        p.weights.fill(0.0);
        p.intercepts = array![2.0, 4.0];
        assert!((predict(&[2.0, 1.0], &p, 1.0) - 3.0).abs() < 1e-15);
        p.intercepts = array![7.0, 7.0];
        assert!((predict(&[0.3, 9.0], &p, 1.0) - 7.0).abs() < 1e-14);
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&[0.2, 0.7, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn subset_features_are_respected() {
        let p = CadreParams {
            centers: array![[0.0]],
            d: array![1.0],
            weights: array![[2.0]],
            intercepts: array![1.0],
            sigma2: 1.0,
            cadre_features: vec![1],
            target_features: vec![0],
        };
        p.validate(2).unwrap();
        assert_eq!(predict(&[3.0, 100.0], &p, 1.0), 7.0);
        assert!(p.validate(1).is_err());
        let mut dup = p.clone();
        dup.cadre_features = vec![1, 1];
        dup.d = array![1.0, 1.0];
        dup.centers = array![[0.0], [0.0]];
        assert!(dup.validate(2).is_err());
    }

    #[test]
    fn memberships_normalized_on_many_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let m = rng.random_range(1..6);
            let params = random_params(&mut rng, 4, m);
            let gamma = rng.random_range(0.01..20.0);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
            let g = membership(&x, &params, gamma);
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(g.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn far_points_do_not_underflow() {
        let p = two_center_params();
        let g = membership(&[1e4, 1e4], &p, 50.0);
        assert!(g.iter().all(|v| v.is_finite()));
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(
            dist in prop::collection::vec(0.0f64..50.0, 1..6),
            shift in 0.0f64..100.0,
            gamma in 0.01f64..10.0,
        ) {
            let mut a = vec![0.0; dist.len()];
            let mut b = vec![0.0; dist.len()];
            softmax_neg_scaled(&dist, gamma, &mut a);
            let shifted: Vec<f64> = dist.iter().map(|v| v + shift).collect();
            softmax_neg_scaled(&shifted, gamma, &mut b);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn rescaling_d_against_gamma_preserves_membership(
            seed in 0u64..1000,
            k in 0.1f64..10.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = random_params(&mut rng, 3, 3);
            let gamma = rng.random_range(0.1..5.0);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let before = membership(&x, &params, gamma);
            params.d.mapv_inplace(|v| v * k);
            let after = membership(&x, &params, gamma / k);
            for (a, b) in before.iter().zip(&after) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn prediction_within_cadre_range(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.random_range(1..5);
            let params = random_params(&mut rng, 3, m);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let f = predict(&x, &params, rng.random_range(0.1..5.0));
            let e: Vec<f64> = (0..m).map(|k| predict_cadre(&x, &params, k).unwrap()).collect();
            let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(f >= lo - 1e-12 && f <= hi + 1e-12);
        }
    }
}
