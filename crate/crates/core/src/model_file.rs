//! JSON persistence of a trained model together with its scaler.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::Scaler;
use crate::error::{CadreError, Result};
use crate::model::{argmax, membership, predict, CadreParams, Hyperparams};
use crate::optim::{TrainConfig, TrainedModel};

pub const FORMAT_VERSION: u32 = 1;

/// Matrices are stored row-major as nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub centers: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub sigma2: f64,
    pub cadre_features: Vec<usize>,
    pub target_features: Vec<usize>,
}

impl From<&CadreParams> for ParamsRecord {
    fn from(p: &CadreParams) -> Self {
        let rows = |a: &Array2<f64>| a.rows().into_iter().map(|r| r.to_vec()).collect();
        Self {
            centers: rows(&p.centers),
            d: p.d.to_vec(),
            weights: rows(&p.weights),
            intercepts: p.intercepts.to_vec(),
            sigma2: p.sigma2,
            cadre_features: p.cadre_features.clone(),
            target_features: p.target_features.clone(),
        }
    }
}

impl ParamsRecord {
    pub fn to_params(&self) -> Result<CadreParams> {
        let m = self.intercepts.len();
        let matrix = |rows: &[Vec<f64>], name: &str| -> Result<Array2<f64>> {
            if let Some(bad) = rows.iter().find(|r| r.len() != m) {
                return Err(CadreError::InvalidArgument(format!(
                    "{name} row has {} entries, expected {m}",
                    bad.len()
                )));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            Array2::from_shape_vec((rows.len(), m), flat)
                .map_err(|e| CadreError::InvalidArgument(e.to_string()))
        };
        Ok(CadreParams {
            centers: matrix(&self.centers, "centers")?,
            d: Array1::from(self.d.clone()),
            weights: matrix(&self.weights, "weights")?,
            intercepts: Array1::from(self.intercepts.clone()),
            sigma2: self.sigma2,
            cadre_features: self.cadre_features.clone(),
            target_features: self.target_features.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config: TrainConfig,
    pub final_loss: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub scaler: Scaler,
    pub hyperparams: Hyperparams,
    pub params: ParamsRecord,
    pub provenance: Provenance,
}

/// Prediction for one raw (unstandardized) row.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// On the original target scale.
    pub value: f64,
    pub memberships: Vec<f64>,
    /// 0-based cadre index.
    pub cadre: usize,
}

impl ModelFile {
    pub fn new(
        model: &TrainedModel,
        scaler: Scaler,
        feature_names: Vec<String>,
        target_name: impl Into<String>,
    ) -> Result<Self> {
        if scaler.n_features() != feature_names.len() {
            return Err(CadreError::DimensionMismatch {
                expected: feature_names.len(),
                actual: scaler.n_features(),
            });
        }
        model.params.validate(feature_names.len())?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            feature_names,
            target_name: target_name.into(),
            scaler,
            hyperparams: model.hyperparams,
            params: ParamsRecord::from(&model.params),
            provenance: Provenance {
                seed: model.config.seed,
                config: model.config.clone(),
                final_loss: model.best_loss,
                epochs_run: model.epochs_run,
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mf: Self = serde_json::from_str(s)?;
        if mf.format_version != FORMAT_VERSION {
            return Err(CadreError::UnsupportedVersion(mf.format_version));
        }
        mf.params.to_params()?.validate(mf.feature_names.len())?;
        Ok(mf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| CadreError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CadreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn cadre_params(&self) -> Result<CadreParams> {
        self.params.to_params()
    }

    /// Positions of the model's features within `columns`. Extra columns
    /// other than `allow_extra` (typically the target) are an error.
    pub fn column_order(&self, columns: &[String], allow_extra: &[&str]) -> Result<Vec<usize>> {
        let missing: Vec<String> = self
            .feature_names
            .iter()
            .filter(|f| !columns.contains(f))
            .cloned()
            .collect();
        let extra: Vec<String> = columns
            .iter()
            .filter(|c| !self.feature_names.contains(c) && !allow_extra.contains(&c.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(CadreError::FeatureMismatch { missing, extra });
        }
        Ok(self
            .feature_names
            .iter()
            .map(|f| columns.iter().position(|c| c == f).expect("checked above"))
            .collect())
    }

    /// Predicts every row of a raw table whose columns are `columns`.
    /// A column named like the training target is ignored.
    pub fn predict_table(&self, columns: &[String], table: &Array2<f64>) -> Result<Vec<Prediction>> {
        let order = self.column_order(columns, &[self.target_name.as_str()])?;
        let params = self.cadre_params()?;
        let gamma = self.hyperparams.gamma;
        Ok(table
            .rows()
            .into_iter()
            .map(|row| {
                let raw: Vec<f64> = order.iter().map(|&j| row[j]).collect();
                let z = self.scaler.transform_row(&raw);
                let g = membership(&z, &params, gamma);
                Prediction {
                    value: self.scaler.inverse_target(predict(&z, &params, gamma)),
                    cadre: argmax(&g),
                    memberships: g,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fit_scaler, gen_synthetic};
    use crate::optim::train;

    fn fitted() -> (ModelFile, TrainedModel, crate::data::Dataset) {
        let (ds, _) = gen_synthetic(40, 5).unwrap();
        let scaler = fit_scaler(&ds).unwrap();
        let z = scaler.transform(&ds).unwrap();
        let cfg = TrainConfig {
            max_epochs: 50,
            ..TrainConfig::default()
        };
        let model = train(&z, &Hyperparams::default(), &cfg).unwrap();
        let mf = ModelFile::new(&model, scaler, ds.feature_names().to_vec(), ds.target_name()).unwrap();
        (mf, model, ds)
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (mf, model, _) = fitted();
        let back = ModelFile::from_json(&mf.to_json().unwrap()).unwrap();
        assert_eq!(back, mf);
        assert_eq!(back.cadre_params().unwrap(), model.params);
    }

    #[test]
    fn predictions_are_destandardized() {
        let (mf, model, ds) = fitted();
        let preds = mf.predict_table(ds.feature_names(), ds.features()).unwrap();
        for (i, p) in preds.iter().enumerate() {
            let z = mf.scaler.transform_row(ds.row_slice(i));
            let expected = mf.scaler.target_std() * model.predict(&z) + mf.scaler.target_mean();
            assert!((p.value - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            assert!((p.memberships.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(p.cadre, model.assign(&z));
        }
    }

    #[test]
    fn column_order_is_by_name() {
        let (mf, _, ds) = fitted();
        let cols: Vec<String> = ["tg", "polarizability", "connectivity"].map(String::from).to_vec();
        let table = ndarray::Array2::from_shape_fn((ds.n_rows(), 3), |(i, j)| match j {
            0 => ds.target()[i],
            1 => ds.features()[[i, 1]],
            _ => ds.features()[[i, 0]],
        });
        let a = mf.predict_table(&cols, &table).unwrap();
        let b = mf.predict_table(ds.feature_names(), ds.features()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_columns_are_listed() {
        let (mf, _, _) = fitted();
        let cols: Vec<String> = ["connectivity", "density"].map(String::from).to_vec();
        match mf.column_order(&cols, &[]) {
            Err(CadreError::FeatureMismatch { missing, extra }) => {
                assert_eq!(missing, vec!["polarizability".to_owned()]);
                assert_eq!(extra, vec!["density".to_owned()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let (mut mf, _, _) = fitted();
        mf.format_version = 99;
        let json = serde_json::to_string(&mf).unwrap();
        assert!(matches!(ModelFile::from_json(&json), Err(CadreError::UnsupportedVersion(99))));
    }

    #[test]
    fn save_and_load() {
        let (mf, _, _) = fitted();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        mf.save(&path).unwrap();
        assert_eq!(ModelFile::load(&path).unwrap(), mf);
        assert!(matches!(ModelFile::load(dir.path().join("none.json")), Err(CadreError::Io { .. })));
    }
}
