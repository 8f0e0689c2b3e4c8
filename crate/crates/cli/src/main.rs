use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cadre::benchmark::{run_benchmark, BenchmarkConfig, HyperparamChoice, Method};
use cadre::data::{fit_scaler, gen_synthetic, load_csv, read_table, write_csv};
use cadre::eval::{bootstrap_quality, density_rate, tau_statistic, DENSITY_THRESHOLD};
use cadre::loss::loss;
use cadre::optim::train;
use cadre::select::{cross_validate, Grid, DEFAULT_FOLDS};
use cadre::{CadreError, Hyperparams, ModelFile, TrainConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cadre", version, about = "Supervised cadre models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Standardize a CSV, train a model, and write it as JSON.
    Train {
        #[command(flatten)]
        input: Input,
        /// Output model path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hp: HpArgs,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// Predict every row of a CSV with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV: prediction, g1..gM, cadre (1-based).
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid search by k-fold cross-validation.
    Cv {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = DEFAULT_FOLDS)]
        folds: usize,
        /// Optional CSV of the full table.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// Bootstrap assessment of cadre stability.
    Bootstrap {
        #[command(flatten)]
        input: Input,
        #[arg(long = "bootstrap", default_value_t = 10)]
        b: usize,
        /// Output JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional CSV of cadre assignments under every model.
        #[arg(long)]
        assignments: Option<PathBuf>,
        #[command(flatten)]
        hp: HpArgs,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// Repeated train/test splits against ridge and K-means + ridge.
    Benchmark {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 20)]
        splits: usize,
        #[arg(long, default_value_t = DEFAULT_FOLDS)]
        folds: usize,
        /// Use the hyperparameter flags as given instead of cross-validating.
        #[arg(long)]
        fixed: bool,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        hp: HpArgs,
        /// Ridge strength for the baselines.
        #[arg(long, default_value_t = 1.0)]
        ridge: f64,
        /// Per-split results CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// Write the three-group synthetic dataset and its labels.
    Synth {
        #[arg(long, default_value_t = 100)]
        n_per_group: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Labels CSV; defaults to `<out stem>.labels.csv`.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    target: String,
}

#[derive(Args)]
struct HpArgs {
    #[arg(long, default_value_t = 3)]
    cadres: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_d: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_w: f64,
    #[arg(long, default_value_t = 0.95)]
    alpha_d: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha_w: f64,
}

impl HpArgs {
    fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            gamma: self.gamma,
            lambda_d: self.lambda_d,
            lambda_w: self.lambda_w,
            alpha_d: self.alpha_d,
            alpha_w: self.alpha_w,
            n_cadres: self.cadres,
        }
    }
}

#[derive(Args)]
struct GridArgs {
    /// Comma-separated cadre counts.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4, 5, 6])]
    grid_cadres: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0, 4.0])]
    grid_gamma: Vec<f64>,
    /// Shared values for λ_d and λ_W.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.1, 0.5])]
    grid_lambda: Vec<f64>,
}

impl GridArgs {
    fn grid(&self) -> Grid {
        Grid {
            m_values: self.grid_cadres.clone(),
            gamma_values: self.grid_gamma.clone(),
            lambda_d_values: self.grid_lambda.clone(),
            lambda_w_values: self.grid_lambda.clone(),
            ..Grid::default()
        }
    }
}

#[derive(Args)]
struct OptArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Independent initializations; the lowest-loss run is kept.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
}

impl OptArgs {
    fn config(&self) -> TrainConfig {
        let mut cfg = TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            seed: self.seed,
            patience: self.patience,
            restarts: self.restarts,
            ..TrainConfig::default()
        };
        cfg.adam.lr = self.lr;
        cfg
    }
}

fn create(path: &Path) -> cadre::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| CadreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> cadre::Result<()> {
    std::fs::write(path, text).map_err(|source| CadreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn standardized(input: &Input) -> cadre::Result<cadre::Dataset> {
    let ds = load_csv(&input.data, &input.target)?;
    fit_scaler(&ds)?.transform(&ds)
}

fn run(command: Command) -> cadre::Result<()> {
    match command {
        Command::Train { input, out, hp, opt } => {
            let raw = load_csv(&input.data, &input.target)?;
            let scaler = fit_scaler(&raw)?;
            let ds = scaler.transform(&raw)?;
            let hp = hp.hyperparams();
            let model = train(&ds, &hp, &opt.config())?;
            let parts = loss(&ds, &model.params, &hp)?;
            let mf = ModelFile::new(&model, scaler, raw.feature_names().to_vec(), raw.target_name())?;
            mf.save(&out)?;
            println!("epochs          {}", model.epochs_run);
            println!("loss            {:.6}", parts.total);
            println!("  weighted sse  {:.6}", parts.weighted_sse);
            println!("  penalty d     {:.6}", parts.penalty_d);
            println!("  penalty W     {:.6}", parts.penalty_w);
            println!("  log sigma^2   {:.6}", parts.log_sigma_term);
            println!("sigma^2         {:.6}", model.params.sigma2);
            println!("DR              {:.4}", density_rate(&model.params, DENSITY_THRESHOLD));
            println!("tau             {:.4}", tau_statistic(&model.params));
        }
        Command::Predict { model, data, out } => {
            let mf = ModelFile::load(&model)?;
            let file = File::open(&data).map_err(|source| CadreError::Io {
                path: data.clone(),
                source,
            })?;
            let (columns, table) = read_table(file)?;
            let preds = mf.predict_table(&columns, &table)?;
            let m = mf.hyperparams.n_cadres;
            let mut wtr = csv::Writer::from_writer(create(&out)?);
            let mut header = vec!["prediction".to_owned()];
            header.extend((1..=m).map(|i| format!("g{i}")));
            header.push("cadre".into());
            wtr.write_record(&header)?;
            for p in &preds {
                let mut rec = vec![p.value.to_string()];
                rec.extend(p.memberships.iter().map(f64::to_string));
                rec.push((p.cadre + 1).to_string());
                wtr.write_record(&rec)?;
            }
            wtr.flush().map_err(|source| CadreError::Io { path: out, source })?;
        }
        Command::Cv { input, grid, folds, out, opt } => {
            let ds = standardized(&input)?;
            let (best, table) = cross_validate(&ds, &grid.grid(), folds, &opt.config())?;
            if let Some(path) = out {
                table.write_csv(create(&path)?)?;
            }
            let score = table
                .rows
                .iter()
                .find(|r| r.hyperparams == best)
                .map_or(f64::NAN, |r| r.mean_mse);
            println!(
                "best: cadres={} gamma={} lambda_d={} lambda_w={} cv_mse={score:.6}",
                best.n_cadres, best.gamma, best.lambda_d, best.lambda_w
            );
        }
        Command::Bootstrap { input, b, out, assignments, hp, opt } => {
            let ds = standardized(&input)?;
            let cfg = opt.config();
            let report = bootstrap_quality(&ds, &hp.hyperparams(), &cfg, b, cfg.seed)?;
            for (m, v) in report.per_cadre_abm.iter().enumerate() {
                match v {
                    Some(v) => println!("cadre {}  ABM {v:.4}", m + 1),
                    None => println!("cadre {}  empty in reference model", m + 1),
                }
            }
            println!("model ABM {:.4}", report.model_abm);
            if !report.failed_replicas.is_empty() {
                println!("diverged replicas: {:?}", report.failed_replicas);
            }
            if let Some(path) = out {
                write_text(&path, &report.to_json()?)?;
            }
            if let Some(path) = assignments {
                report.assignment_table.write_csv(ds.row_ids(), create(&path)?)?;
            }
        }
        Command::Benchmark { input, splits, folds, fixed, grid, hp, ridge, out, opt } => {
            let ds = load_csv(&input.data, &input.target)?;
            let train_cfg = opt.config();
            let scm = if fixed {
                HyperparamChoice::Fixed(hp.hyperparams())
            } else {
                HyperparamChoice::CrossValidate { grid: grid.grid(), folds }
            };
            let cfg = BenchmarkConfig {
                n_splits: splits,
                seed: train_cfg.seed,
                scm,
                train: train_cfg,
                ridge,
                ..BenchmarkConfig::default()
            };
            let report = run_benchmark(&ds, &cfg)?;
            if let Some(path) = out {
                report.write_csv(create(&path)?)?;
            }
            println!("method     mean_mse  std_mse");
            for m in Method::ALL {
                if let Some(s) = report.summary_for(m) {
                    println!("{:<10} {:.4}    {:.4}", m.name(), s.mean_mse, s.std_mse);
                }
            }
        }
        Command::Synth { n_per_group, seed, out, labels } => {
            let (ds, truth) = gen_synthetic(n_per_group, seed)?;
            write_csv(&ds, create(&out)?)?;
            let labels = labels.unwrap_or_else(|| out.with_extension("labels.csv"));
            let mut wtr = csv::Writer::from_writer(create(&labels)?);
            wtr.write_record(["row", "group"])?;
            for (i, g) in truth.iter().enumerate() {
                wtr.write_record([i.to_string(), (g + 1).to_string()])?;
            }
            wtr.flush().map_err(|source| CadreError::Io { path: labels, source })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
