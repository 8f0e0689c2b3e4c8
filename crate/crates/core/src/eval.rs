//! Generalization error, bootstrap cadre stability, and sparsity / model
//! dispersion statistics.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{bootstrap_sample, derive_seed, Dataset};
use crate::error::{CadreError, Result};
use crate::model::{assign_rows, CadreParams, Hyperparams};
use crate::optim::{train_from, TrainConfig};

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(CadreError::DimensionMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(CadreError::EmptyInput("prediction vector".into()));
    }
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

/// `min(|A ∩ B| / |A|, |A ∩ B| / |B|)`; 0 when either set is empty.
pub fn match_score(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() || b.is_empty() {
        log::warn!("match score requested for an empty index set");
        return 0.0;
    }
    let sa: HashSet<usize> = a.iter().copied().collect();
    let sb: HashSet<usize> = b.iter().copied().collect();
    let common = sa.intersection(&sb).count() as f64;
    (common / sa.len() as f64).min(common / sb.len() as f64)
}

/// Cadre of every original observation under each of the `B + 1` models.
/// Row 0 is the reference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentTable {
    pub assignments: Vec<Vec<usize>>,
    pub n_cadres: usize,
}

impl AssignmentTable {
    pub fn n_models(&self) -> usize {
        self.assignments.len()
    }

    /// Observation indices assigned to each cadre by model `b`.
    pub fn cadre_sets(&self, b: usize) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); self.n_cadres];
        for (n, &m) in self.assignments[b].iter().enumerate() {
            sets[m].push(n);
        }
        sets
    }

    /// One line per observation: `row,model_0,...,model_B` with 1-based cadre labels.
    pub fn write_csv<W: Write>(&self, row_ids: &[usize], writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["row".to_owned()];
        header.extend((0..self.n_models()).map(|b| format!("model_{b}")));
        wtr.write_record(&header)?;
        let n = self.assignments.first().map_or(0, Vec::len);
        for i in 0..n {
            let mut rec = vec![row_ids.get(i).copied().unwrap_or(i).to_string()];
            rec.extend(self.assignments.iter().map(|a| (a[i] + 1).to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|source| CadreError::Io {
            path: "<assignment csv>".into(),
            source,
        })?;
        Ok(())
    }
}

/// Average over bootstrap models `b >= 1` of the best match between the
/// reference model's cadre `m` and any cadre of model `b`. `None` when cadre
/// `m` is empty in the reference model.
pub fn abm(table: &AssignmentTable, m: usize) -> Option<f64> {
    let b_count = table.n_models().checked_sub(1).filter(|&b| b > 0)?;
    let reference = table.cadre_sets(0);
    let target = reference.get(m)?;
    if target.is_empty() {
        return None;
    }
    let total: f64 = (1..table.n_models())
        .map(|b| {
            table
                .cadre_sets(b)
                .iter()
                .map(|c| if c.is_empty() { 0.0 } else { match_score(target, c) })
                .fold(0.0, f64::max)
        })
        .sum();
    Some(total / b_count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    /// `null` for cadres that are empty in the reference model.
    pub per_cadre_abm: Vec<Option<f64>>,
    /// Mean of the non-null per-cadre values.
    pub model_abm: f64,
    pub assignment_table: AssignmentTable,
    /// Requested number of bootstrap replicas.
    pub b: usize,
    /// Replicas (1-based) whose training diverged and were left out.
    pub failed_replicas: Vec<usize>,
}

impl BootstrapReport {
    pub fn from_table(table: AssignmentTable, b: usize, failed_replicas: Vec<usize>) -> Result<Self> {
        let per_cadre_abm: Vec<Option<f64>> = (0..table.n_cadres).map(|m| abm(&table, m)).collect();
        let present: Vec<f64> = per_cadre_abm.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(CadreError::InvalidArgument(
                "no cadre could be scored: need a nonempty reference cadre and at least one replica".into(),
            ));
        }
        let model_abm = present.iter().sum::<f64>() / present.len() as f64;
        Ok(Self {
            per_cadre_abm,
            model_abm,
            assignment_table: table,
            b,
            failed_replicas,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Bootstrap cadre-quality assessment with the same training settings for
/// the reference model and the replicas.
pub fn bootstrap_quality(
    ds: &Dataset,
    hp: &Hyperparams,
    cfg: &TrainConfig,
    b: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    bootstrap_quality_with(ds, hp, cfg, cfg, b, seed)
}

/// Trains a reference model on one bootstrap sample, then `b` replicas on
/// fresh bootstrap samples warm-started from the reference parameters, and
/// scores how well each reference cadre is reproduced on the original rows.
pub fn bootstrap_quality_with(
    ds: &Dataset,
    hp: &Hyperparams,
    reference_cfg: &TrainConfig,
    replica_cfg: &TrainConfig,
    b: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    if b == 0 {
        return Err(CadreError::InvalidArgument("need at least one bootstrap replica".into()));
    }
    let sample0 = bootstrap_sample(ds, derive_seed(seed, 0));
    let cfg0 = TrainConfig {
        seed: derive_seed(seed, 1_000_000),
        ..reference_cfg.clone()
    };
    let reference = train_from(&sample0, hp, &cfg0, None)?;
    let theta0 = &reference.params;

    let replicas: Vec<(usize, Result<CadreParams>)> = (1..=b)
        .into_par_iter()
        .map(|r| {
            let sample = bootstrap_sample(ds, derive_seed(seed, r as u64));
            let cfg = TrainConfig {
                seed: derive_seed(seed, 1_000_000 + r as u64),
                ..replica_cfg.clone()
            };
            (r, train_from(&sample, hp, &cfg, Some(theta0)).map(|m| m.params))
        })
        .collect();

    let mut assignments = vec![assign_rows(ds.features(), theta0, hp.gamma)];
    let mut failed = Vec::new();
    for (r, res) in replicas {
        match res {
            Ok(params) => assignments.push(assign_rows(ds.features(), &params, hp.gamma)),
            Err(CadreError::Diverged { .. }) => {
                log::warn!("bootstrap replica {r} diverged; excluded");
                failed.push(r);
            }
            Err(e) => return Err(e),
        }
    }
    let table = AssignmentTable {
        assignments,
        n_cadres: hp.n_cadres,
    };
    BootstrapReport::from_table(table, b, failed)
}

/// Fraction of `d` entries whose magnitude exceeds `threshold * max |d|`.
pub fn density_rate(params: &CadreParams, threshold: f64) -> f64 {
    let max = params.d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max == 0.0 || params.d.is_empty() {
        return 0.0;
    }
    let cut = threshold * max;
    params.d.iter().filter(|v| v.abs() > cut).count() as f64 / params.d.len() as f64
}

/// Fraction of rows whose predicted label matches `truth` under the best
/// one-to-one relabeling of the predicted labels. Labels are `0..n_labels`.
pub fn matched_accuracy(pred: &[usize], truth: &[usize], n_labels: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(CadreError::DimensionMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(CadreError::EmptyInput("label vector".into()));
    }
    if n_labels == 0 || n_labels > 9 {
        return Err(CadreError::InvalidArgument(format!(
            "matched accuracy supports 1..=9 labels, got {n_labels}"
        )));
    }
    let mut counts = vec![vec![0usize; n_labels]; n_labels];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n_labels || t >= n_labels {
            return Err(CadreError::InvalidArgument(format!("label out of range 0..{n_labels}")));
        }
        counts[p][t] += 1;
    }
    let mut perm: Vec<usize> = (0..n_labels).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        best = best.max(p.iter().enumerate().map(|(i, &j)| counts[i][j]).sum());
    });
    Ok(best as f64 / pred.len() as f64)
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Relative threshold used when counting nonzero entries of `d`.
pub const DENSITY_THRESHOLD: f64 = 1e-3;

/// Mean over target features of the population standard deviation of
/// that feature's weight across cadres.
pub fn tau_statistic(params: &CadreParams) -> f64 {
    let w = &params.weights;
    if w.nrows() == 0 {
        return 0.0;
    }
    let m = w.ncols() as f64;
    w.rows()
        .into_iter()
        .map(|row| {
            let mean = row.sum() / m;
            (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt()
        })
        .sum::<f64>()
        / w.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params_with(d: ndarray::Array1<f64>, w: ndarray::Array2<f64>) -> CadreParams {
        let (pt, m) = w.dim();
        let pc = d.len();
        CadreParams {
            centers: ndarray::Array2::zeros((pc, m)),
            d,
            weights: w,
            intercepts: ndarray::Array1::zeros(m),
            sigma2: 1.0,
            cadre_features: (0..pc).collect(),
            target_features: (0..pt).collect(),
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn constant_mean_predictor_on_standardized_target() {
        let (ds, _) = crate::data::gen_synthetic(50, 1).unwrap();
        let z = crate::data::fit_scaler(&ds).unwrap().transform(&ds).unwrap();
        let n = z.n_rows() as f64;
        let zeros = vec![0.0; z.n_rows()];
        // Sample-variance scaling gives (N - 1) / N exactly.
        let v = mse(&zeros, z.target().as_slice().unwrap()).unwrap();
        assert!((v - (n - 1.0) / n).abs() < 1e-12);
    }

    #[test]
    fn match_score_examples() {
        assert_eq!(match_score(&[1, 2, 3], &[3, 2, 1]), 1.0);
        assert_eq!(match_score(&[1, 2], &[3, 4]), 0.0);
        assert!((match_score(&[1, 2, 3], &[2, 3, 4]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(match_score(&[], &[1]), 0.0);
        assert_eq!(match_score(&[1, 2, 3, 4], &[1, 2]), 0.5);
    }

    #[test]
    fn match_score_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let a: Vec<usize> = (0..rng.random_range(1..20)).map(|_| rng.random_range(0..30)).collect();
            let b: Vec<usize> = (0..rng.random_range(1..20)).map(|_| rng.random_range(0..30)).collect();
            let s = match_score(&a, &b);
            assert_eq!(s, match_score(&b, &a));
            assert!((0.0..=1.0).contains(&s));
            let (sa, sb): (HashSet<_>, HashSet<_>) = (a.iter().collect(), b.iter().collect());
            assert_eq!(s == 1.0, sa == sb);
        }
    }

    #[test]
    fn identical_models_are_perfectly_stable() {
        let row = vec![0, 1, 2, 1, 0, 2];
        let table = AssignmentTable {
            assignments: vec![row.clone(); 4],
            n_cadres: 3,
        };
        for m in 0..3 {
            assert_eq!(abm(&table, m), Some(1.0));
        }
        let report = BootstrapReport::from_table(table, 3, vec![]).unwrap();
        assert_eq!(report.model_abm, 1.0);
    }

    #[test]
    fn split_cadre_halves_abm() {
        // Reference cadre 0 = {0,1,2,3}; replica splits it into {0,1} and {2,3}.
        let table = AssignmentTable {
            assignments: vec![vec![0, 0, 0, 0, 1, 1], vec![0, 0, 2, 2, 1, 1]],
            n_cadres: 3,
        };
        assert_eq!(abm(&table, 0), Some(0.5));
        assert_eq!(abm(&table, 1), Some(1.0));
        assert_eq!(abm(&table, 2), None);
        let report = BootstrapReport::from_table(table, 1, vec![]).unwrap();
        assert_eq!(report.model_abm, 0.75);
        assert_eq!(report.per_cadre_abm, vec![Some(0.5), Some(1.0), None]);
    }

    #[test]
    fn random_assignments_score_near_one_over_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let assignments: Vec<Vec<usize>> =
            (0..11).map(|_| (0..n).map(|_| rng.random_range(0..4)).collect()).collect();
        let table = AssignmentTable {
            assignments,
            n_cadres: 4,
        };
        for m in 0..4 {
            let v = abm(&table, m).unwrap();
            assert!((v - 0.25).abs() < 0.05, "abm {v}");
        }
    }

    #[test]
    fn abm_ignores_replica_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reference: Vec<usize> = (0..200).map(|_| rng.random_range(0..3)).collect();
        let replica: Vec<usize> = reference
            .iter()
            .map(|&m| if rng.random_bool(0.1) { rng.random_range(0..3) } else { m })
            .collect();
        let relabeled: Vec<usize> = replica.iter().map(|&m| [2, 0, 1][m]).collect();
        let a = AssignmentTable {
            assignments: vec![reference.clone(), replica],
            n_cadres: 3,
        };
        let b = AssignmentTable {
            assignments: vec![reference, relabeled],
            n_cadres: 3,
        };
        for m in 0..3 {
            assert_eq!(abm(&a, m), abm(&b, m));
        }
    }

    #[test]
    fn matched_accuracy_ignores_label_names() {
        let truth = [0, 0, 1, 1, 2, 2];
        assert_eq!(matched_accuracy(&[2, 2, 0, 0, 1, 1], &truth, 3).unwrap(), 1.0);
        assert_eq!(matched_accuracy(&[2, 2, 0, 0, 1, 0], &truth, 3).unwrap(), 5.0 / 6.0);
        assert_eq!(matched_accuracy(&[0; 6], &truth, 3).unwrap(), 1.0 / 3.0);
        assert!(matched_accuracy(&[3], &[0], 3).is_err());
    }

    #[test]
    fn density_rate_examples() {
        let w = array![[0.0]];
        assert_eq!(density_rate(&params_with(array![0.0, 0.0, 0.0], w.clone()), 1e-3), 0.0);
        assert_eq!(density_rate(&params_with(array![2.0, -2.0], w.clone()), 1e-3), 1.0);
        let dr = density_rate(&params_with(array![1.0, 0.0005, 0.8], w.clone()), 1e-3);
        assert!((dr - 2.0 / 3.0).abs() < 1e-15);
        let scaled = density_rate(&params_with(array![5.0, 0.0025, 4.0], w), 1e-3);
        assert_eq!(dr, scaled);
    }

    #[test]
    fn tau_examples() {
        let d = array![1.0];
        assert_eq!(tau_statistic(&params_with(d.clone(), array![[3.0], [-1.0]])), 0.0);
        assert_eq!(tau_statistic(&params_with(d.clone(), array![[2.0, 2.0], [5.0, 5.0]])), 0.0);
        assert_eq!(tau_statistic(&params_with(d.clone(), array![[1.0, -1.0]])), 1.0);
        let a = tau_statistic(&params_with(d.clone(), array![[1.0, 4.0, -2.0], [0.5, 0.0, 3.0]]));
        let b = tau_statistic(&params_with(d, array![[-2.0, 1.0, 4.0], [3.0, 0.5, 0.0]]));
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn assignment_csv_is_one_based() {
        let table = AssignmentTable {
            assignments: vec![vec![0, 1], vec![1, 1]],
            n_cadres: 2,
        };
        let mut buf = Vec::new();
        table.write_csv(&[10, 11], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "row,model_0,model_1\n10,1,2\n11,2,2\n");
    }

    #[test]
    fn degenerate_bootstrap_is_perfectly_stable() {
        let (ds, _) = crate::data::gen_synthetic(20, 2).unwrap();
        let z = crate::data::fit_scaler(&ds).unwrap().transform(&ds).unwrap();
        let hp = Hyperparams::default();
        let reference = TrainConfig {
            max_epochs: 30,
            ..TrainConfig::default()
        };
        let replica = TrainConfig {
            max_epochs: 0,
            ..reference.clone()
        };
        let report = bootstrap_quality_with(&z, &hp, &reference, &replica, 1, 7).unwrap();
        let t = &report.assignment_table;
        assert_eq!(t.assignments[0], t.assignments[1]);
        assert_eq!(report.model_abm, 1.0);
        let json = report.to_json().unwrap();
        let back: BootstrapReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
