//! Supervised cadre models.
//!
//! A cadre model splits the input space into soft subpopulations ("cadres")
//! using a feature-weighted seminorm distance to learned centers, and fits a
//! sparse linear regressor inside each cadre. Assignment and regression are
//! learned jointly by minibatch Adam on an elastic-net-regularized negative
//! log-posterior.

pub mod baselines;
pub mod benchmark;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod model_file;
pub mod optim;
pub mod select;

pub use benchmark::{BenchmarkConfig, BenchmarkReport};
pub use data::{Dataset, Scaler, SplitSpec};
pub use error::{CadreError, Result};
pub use eval::BootstrapReport;
pub use loss::{LossBreakdown, ParamGrad};
pub use model::{CadreParams, Hyperparams};
pub use model_file::ModelFile;
pub use optim::{AdamConfig, TrainConfig, TrainedModel};
pub use select::{CvTable, Grid};
