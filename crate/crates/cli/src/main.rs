//! `t2g`: file-based pipeline from telegram logs to time-to-green reports.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

mod manifest;
mod model;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use t2g_core::baseline::{naive_from_matrix, ols_fit};
use t2g_core::evaluation::{
    compute_metrics, plot_csv, report_row, split_point, DEFAULT_TRAIN_FRAC, REPORT_HEADER,
};
use t2g_core::features::{
    build_dataset, FeatureMatrix, FeatureSchema, DEFAULT_P_THRESHOLD_S,
};
use t2g_core::forest::{rf_fit, ForestParams};
use t2g_core::lstm::{lstm_fit, make_sequences, LstmParams};
use t2g_core::selection::{
    forest_params, random_search, rfe, trial_log_csv, ParamSet, Ranker, SearchSpace,
    DEFAULT_FOLDS,
};
use t2g_core::sim::{scenario, simulate, SimConfig};
use t2g_core::telegram::{
    clean, parse_log, rasterize, segment_cycles, write_cycles_csv, write_log, DeviceCatalog,
    Telegram, Window,
};

use manifest::Manifest;
use model::{ModelArtifact, TrainedModel};

#[derive(Debug, Parser)]
#[command(name = "t2g", version, about = "Time-to-green forecasting for actuated traffic signals")]
struct Cli {
    /// Run manifest (JSON). Inputs are checked against recorded hashes and
    /// every step is appended.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an actuated intersection and write its telegram log.
    Simulate(SimulateArgs),
    /// Clean a telegram log and segment signal cycles.
    Ingest(IngestArgs),
    /// Build the per-cycle feature matrix of one signal.
    Featurize(FeaturizeArgs),
    /// Recursive feature elimination on the training rows of a matrix.
    Rfe(RfeArgs),
    /// Random hyperparameter search with k-fold cross-validation.
    Tune(TuneArgs),
    /// Fit a model on the training rows of a matrix.
    Train(TrainArgs),
    /// Score a model and the naive baseline on the test rows.
    Evaluate(EvaluateArgs),
    /// Impurity importances of a random forest model.
    Importance(ImportanceArgs),
    /// Concatenate report files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Built-in scenario (cross_basic, zurich_like).
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    scenario: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Simulated seconds.
    #[arg(long, default_value_t = 86_400)]
    horizon: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Telegram log output.
    #[arg(short, long)]
    output: PathBuf,
    /// Ground-truth cycles CSV [default: <output>.truth.csv].
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Device catalog JSON [default: <output>.catalog.json].
    #[arg(long)]
    catalog_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WindowArgs {
    /// First second of the analysis window (Unix time) [default: first telegram].
    #[arg(long, requires = "window_len")]
    window_start: Option<i64>,
    /// Window length in seconds.
    #[arg(long, requires = "window_start")]
    window_len: Option<usize>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    telegrams: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    /// Cleaned telegram log.
    #[arg(short, long)]
    output: PathBuf,
    /// Cycle table of every signal.
    #[arg(long)]
    cycles: Option<PathBuf>,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    #[arg(long)]
    telegrams: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    /// Target signal id.
    #[arg(long)]
    signal: String,
    /// Occupation threshold for queue and congestion indicators, seconds.
    #[arg(long, default_value_t = DEFAULT_P_THRESHOLD_S)]
    p: u32,
    /// Fixed offset of local time from UTC for the clock features, seconds.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    utc_offset_s: i64,
    #[command(flatten)]
    window: WindowArgs,
    /// Matrix CSV; the schema goes to `<output stem>.schema.json`.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RankerKind {
    Rf,
    Ols,
}

#[derive(Debug, Args)]
struct RfeArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Number of columns to keep.
    #[arg(long)]
    keep: usize,
    #[arg(long, value_enum, default_value_t = RankerKind::Rf)]
    ranker: RankerKind,
    /// Required with the rf ranker.
    #[arg(long)]
    seed: Option<u64>,
    /// Columns dropped per round.
    #[arg(long, default_value_t = 1)]
    step: usize,
    /// Trees of the ranking forest.
    #[arg(long, default_value_t = 50)]
    trees: usize,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRAC)]
    train_frac: f64,
    /// Reduced matrix CSV (with schema sidecar).
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TuneModel {
    Rf,
    Lstm,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, value_enum)]
    model: TuneModel,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRAC)]
    train_frac: f64,
    #[command(flatten)]
    lstm: LstmFlags,
    /// Trial log CSV.
    #[arg(short, long)]
    output: PathBuf,
    /// Best parameter set (JSON), usable as `train --params`.
    #[arg(long)]
    best: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelKind {
    Naive,
    Lr,
    Rf,
    Lstm,
}

#[derive(Debug, Args)]
struct ForestFlags {
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_samples_split: Option<usize>,
    #[arg(long)]
    min_leaf_frac: Option<f64>,
    /// Features tried per split [default: all].
    #[arg(long)]
    max_features: Option<usize>,
}

#[derive(Debug, Args)]
struct LstmFlags {
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    dense_units: Option<usize>,
    /// Cycles per input window.
    #[arg(long)]
    lag: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, value_enum)]
    model: ModelKind,
    /// Required for rf and lstm.
    #[arg(long)]
    seed: Option<u64>,
    /// Parameter set from `tune --best`; explicit flags override it.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRAC)]
    train_frac: f64,
    #[command(flatten)]
    forest: ForestFlags,
    #[command(flatten)]
    lstm: LstmFlags,
    /// Model JSON.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Report CSV with the naive and model rows.
    #[arg(short, long)]
    output: PathBuf,
    /// Plot-ready `cycle,truth,prediction` CSV of the test rows.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ImportanceArgs {
    #[arg(long)]
    model: PathBuf,
    /// `feature,importance` CSV, most important first.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report files to merge, in order.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

/// Misuse of the command line that clap cannot express.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn require_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.ok_or_else(|| usage(format!("{what} is randomized and requires --seed")))
}

/// Files a step reads and writes, plus its seed.
#[derive(Default)]
struct Io {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let io = plan(&cli.command)?;
    let mut manifest = match &cli.manifest {
        Some(path) => {
            let m = Manifest::load_or_new(path)?;
            m.verify_inputs(&io.inputs)?;
            Some(m)
        }
        None => None,
    };
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a)?,
        Command::Ingest(a) => cmd_ingest(a)?,
        Command::Featurize(a) => cmd_featurize(a)?,
        Command::Rfe(a) => cmd_rfe(a)?,
        Command::Tune(a) => cmd_tune(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Evaluate(a) => cmd_evaluate(a)?,
        Command::Importance(a) => cmd_importance(a)?,
        Command::Report(a) => cmd_report(a)?,
    }
    if let (Some(m), Some(path)) = (manifest.as_mut(), &cli.manifest) {
        let args: Vec<String> = std::env::args().skip(1).collect();
        let name = args
            .iter()
            .find(|a| !a.starts_with('-') && Some(a.as_str()) != path.to_str())
            .cloned()
            .unwrap_or_default();
        m.record(&name, args, io.seed, &io.inputs, &io.outputs)?;
        m.save(path)?;
    }
    Ok(())
}

/// Validate flag combinations and list the files of a command.
fn plan(command: &Command) -> Result<Io> {
    Ok(match command {
        Command::Simulate(a) => Io {
            inputs: a.config.iter().cloned().collect(),
            outputs: vec![a.output.clone(), truth_path(a), catalog_out_path(a)],
            seed: Some(require_seed(a.seed, "simulate")?),
        },
        Command::Ingest(a) => Io {
            inputs: vec![a.telegrams.clone(), a.catalog.clone()],
            outputs: std::iter::once(a.output.clone()).chain(a.cycles.clone()).collect(),
            seed: None,
        },
        Command::Featurize(a) => Io {
            inputs: vec![a.telegrams.clone(), a.catalog.clone()],
            outputs: vec![a.output.clone(), schema_path(&a.output)],
            seed: None,
        },
        Command::Rfe(a) => {
            let seed = match a.ranker {
                RankerKind::Rf => Some(require_seed(a.seed, "rfe with the rf ranker")?),
                RankerKind::Ols => None,
            };
            Io {
                inputs: matrix_files(&a.matrix),
                outputs: vec![a.output.clone(), schema_path(&a.output)],
                seed,
            }
        }
        Command::Tune(a) => Io {
            inputs: matrix_files(&a.matrix),
            outputs: std::iter::once(a.output.clone()).chain(a.best.clone()).collect(),
            seed: Some(require_seed(a.seed, "tune")?),
        },
        Command::Train(a) => {
            let seed = match a.model {
                ModelKind::Rf => Some(require_seed(a.seed, "train --model rf")?),
                ModelKind::Lstm => Some(require_seed(a.seed, "train --model lstm")?),
                ModelKind::Naive | ModelKind::Lr => None,
            };
            Io {
                inputs: matrix_files(&a.matrix).into_iter().chain(a.params.clone()).collect(),
                outputs: vec![a.output.clone()],
                seed,
            }
        }
        Command::Evaluate(a) => Io {
            inputs: matrix_files(&a.matrix).into_iter().chain([a.model.clone()]).collect(),
            outputs: std::iter::once(a.output.clone()).chain(a.predictions.clone()).collect(),
            seed: None,
        },
        Command::Importance(a) => Io {
            inputs: vec![a.model.clone()],
            outputs: vec![a.output.clone()],
            seed: None,
        },
        Command::Report(a) => Io {
            inputs: a.inputs.clone(),
            outputs: vec![a.output.clone()],
            seed: None,
        },
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn schema_path(matrix: &Path) -> PathBuf {
    sibling(matrix, "schema.json")
}

fn matrix_files(matrix: &Path) -> Vec<PathBuf> {
    vec![matrix.to_path_buf(), schema_path(matrix)]
}

fn truth_path(a: &SimulateArgs) -> PathBuf {
    a.truth.clone().unwrap_or_else(|| sibling(&a.output, "truth.csv"))
}

fn catalog_out_path(a: &SimulateArgs) -> PathBuf {
    a.catalog_out.clone().unwrap_or_else(|| sibling(&a.output, "catalog.json"))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_matrix(path: &Path) -> Result<FeatureMatrix> {
    let schema: FeatureSchema = read_json(&schema_path(path))?;
    let m = FeatureMatrix::from_csv(&read_text(path)?, schema)
        .with_context(|| format!("loading matrix {}", path.display()))?;
    Ok(m)
}

fn write_matrix(path: &Path, m: &FeatureMatrix) -> Result<()> {
    write_text(path, &m.to_csv())?;
    write_json(&schema_path(path), &m.schema)
}

fn read_catalog(path: &Path) -> Result<DeviceCatalog> {
    let catalog: DeviceCatalog = read_json(path)?;
    catalog.validate()?;
    Ok(catalog)
}

/// Parse and clean a log, and fix the analysis window.
fn load_telegrams(
    path: &Path,
    catalog: &DeviceCatalog,
    window: &WindowArgs,
) -> Result<(Vec<Telegram>, Window)> {
    let raw = parse_log(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let telegrams = clean(&raw, catalog);
    let window = match (window.window_start, window.window_len) {
        (Some(start), Some(len)) => Window::new(start, len),
        _ => Window::covering(&telegrams)
            .with_context(|| format!("{} has no telegrams of catalog devices", path.display()))?,
    };
    Ok((telegrams, window))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let config: SimConfig = match (&a.scenario, &a.config) {
        (Some(name), _) => {
            scenario(name).ok_or_else(|| usage(format!("unknown scenario {name:?}")))?
        }
        (None, Some(path)) => read_json(path)?,
        (None, None) => return Err(usage("give --scenario or --config")),
    };
    let seed = require_seed(a.seed, "simulate")?;
    let run = simulate(&config, a.horizon, seed)?;
    write_text(&a.output, &write_log(&run.telegrams))?;
    write_text(&truth_path(a), &write_cycles_csv(&run.all_cycles()))?;
    write_json(&catalog_out_path(a), &config.catalog)?;
    println!(
        "{} telegrams, {} cycles",
        run.telegrams.len(),
        run.all_cycles().len()
    );
    Ok(())
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let catalog = read_catalog(&a.catalog)?;
    let (telegrams, window) = load_telegrams(&a.telegrams, &catalog, &a.window)?;
    write_text(&a.output, &write_log(&telegrams))?;
    if let Some(path) = &a.cycles {
        let series = rasterize(&telegrams, &catalog, window)?;
        let cycles: Vec<_> = catalog
            .signals
            .iter()
            .flat_map(|s| segment_cycles(&series[s]))
            .collect();
        write_text(path, &write_cycles_csv(&cycles))?;
    }
    Ok(())
}

fn cmd_featurize(a: &FeaturizeArgs) -> Result<()> {
    let catalog = read_catalog(&a.catalog)?;
    let (telegrams, window) = load_telegrams(&a.telegrams, &catalog, &a.window)?;
    let series = rasterize(&telegrams, &catalog, window)?;
    let m = build_dataset(&a.signal, &series, &catalog, a.p, a.utc_offset_s)?;
    write_matrix(&a.output, &m)?;
    println!("{} rows, {} columns", m.n_rows(), m.n_cols());
    Ok(())
}

fn training_rows(m: &FeatureMatrix, train_frac: f64) -> Result<usize> {
    Ok(split_point(m.n_rows(), train_frac)?)
}

fn cmd_rfe(a: &RfeArgs) -> Result<()> {
    let m = read_matrix(&a.matrix)?;
    let n_train = training_rows(&m, a.train_frac)?;
    let ranker = match a.ranker {
        RankerKind::Ols => Ranker::Ols,
        RankerKind::Rf => Ranker::Forest(ForestParams {
            n_estimators: a.trees,
            seed: require_seed(a.seed, "rfe with the rf ranker")?,
            ..Default::default()
        }),
    };
    let kept = rfe(&m.rows[..n_train], &m.targets[..n_train], a.keep, &ranker, a.step)?;
    let reduced = m.select_columns(&kept);
    write_matrix(&a.output, &reduced)?;
    println!("kept {}", reduced.schema.names().join(","));
    Ok(())
}

fn lstm_params(base: LstmParams, f: &LstmFlags) -> LstmParams {
    LstmParams {
        units: f.units.unwrap_or(base.units),
        layers: f.layers.unwrap_or(base.layers),
        dropout: f.dropout.unwrap_or(base.dropout),
        dense_units: f.dense_units.unwrap_or(base.dense_units),
        lag: f.lag.unwrap_or(base.lag),
        epochs: f.epochs.unwrap_or(base.epochs),
        batch_size: f.batch_size.unwrap_or(base.batch_size),
        learning_rate: f.learning_rate.unwrap_or(base.learning_rate),
        patience: f.patience.unwrap_or(base.patience),
        ..base
    }
}

fn cmd_tune(a: &TuneArgs) -> Result<()> {
    let seed = require_seed(a.seed, "tune")?;
    let m = read_matrix(&a.matrix)?;
    let n_train = training_rows(&m, a.train_frac)?;
    let rows = &m.rows[..n_train];
    let targets = &m.targets[..n_train];
    let outcome = match a.model {
        TuneModel::Rf => random_search(&SearchSpace::forest(), a.trials, targets, a.folds, seed, |set, tr, va| {
            let params = forest_params(set, seed)?;
            let x: Vec<Vec<f64>> = tr.iter().map(|&i| rows[i].clone()).collect();
            let y: Vec<f64> = tr.iter().map(|&i| targets[i]).collect();
            let forest = rf_fit(&x, &y, &params)?;
            va.iter().map(|&i| forest.predict(&rows[i])).collect()
        })?,
        TuneModel::Lstm => {
            let base = lstm_params(LstmParams { seed, ..Default::default() }, &a.lstm);
            // folds run over windows, each labelled by its last row
            let data = make_sequences(rows, targets, base.lag)?;
            random_search(&SearchSpace::lstm(), a.trials, &data.targets(), a.folds, seed, |set, tr, va| {
                let params = base.with_sample(set)?;
                let fit = lstm_fit(&data.subset(tr), &params)?;
                va.iter().map(|&n| fit.model.forward(data.window(n))).collect()
            })?
        }
    };
    write_text(&a.output, &trial_log_csv(&outcome.trials))?;
    let best = outcome.best_trial();
    if let Some(path) = &a.best {
        write_json(path, &best.params)?;
    }
    println!("best trial {} mean MAE {:.4}", best.trial, best.scores.mean_mae);
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let m = read_matrix(&a.matrix)?;
    let n_train = training_rows(&m, a.train_frac)?;
    let rows = &m.rows[..n_train];
    let targets = &m.targets[..n_train];
    let params: Option<ParamSet> = a.params.as_deref().map(read_json).transpose()?;
    let model = match a.model {
        ModelKind::Naive => TrainedModel::Naive,
        ModelKind::Lr => TrainedModel::Lr(ols_fit(rows, targets)?),
        ModelKind::Rf => {
            let seed = require_seed(a.seed, "train --model rf")?;
            let base = match &params {
                Some(set) => forest_params(set, seed)?,
                None => ForestParams { seed, ..Default::default() },
            };
            let f = &a.forest;
            let p = ForestParams {
                n_estimators: f.trees.unwrap_or(base.n_estimators),
                max_depth: f.max_depth.unwrap_or(base.max_depth),
                min_samples_split: f.min_samples_split.unwrap_or(base.min_samples_split),
                min_weight_fraction_leaf: f.min_leaf_frac.unwrap_or(base.min_weight_fraction_leaf),
                features_per_split: f.max_features.or(base.features_per_split),
                ..base
            };
            let forest = rf_fit(rows, targets, &p)?;
            if let Some(oob) = forest.oob_mae {
                println!("out-of-bag MAE {oob:.4}");
            }
            TrainedModel::Rf(forest)
        }
        ModelKind::Lstm => {
            let seed = require_seed(a.seed, "train --model lstm")?;
            let mut base = LstmParams { seed, ..Default::default() };
            if let Some(set) = &params {
                base = base.with_sample(set)?;
            }
            let p = lstm_params(base, &a.lstm);
            let data = make_sequences(rows, targets, p.lag)?;
            let fit = lstm_fit(&data, &p)?;
            println!(
                "best epoch {} validation loss {:.4}",
                fit.best_epoch, fit.best_val_loss
            );
            TrainedModel::Lstm(fit.model)
        }
    };
    let artifact = ModelArtifact {
        schema_hash: m.schema.hash(),
        target_signal: m.schema.target_signal.clone(),
        columns: m.schema.names().iter().map(|s| s.to_string()).collect(),
        train_frac: a.train_frac,
        n_train,
        model,
    };
    write_json(&a.output, &artifact)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let m = read_matrix(&a.matrix)?;
    let artifact: ModelArtifact = read_json(&a.model)?;
    artifact.check_matrix(&m)?;
    let n_train = training_rows(&m, artifact.train_frac)?;
    if n_train != artifact.n_train {
        anyhow::bail!(
            "matrix has {} rows; the model was trained on {} of a different row count",
            m.n_rows(),
            artifact.n_train
        );
    }
    let truths = &m.targets[n_train..];
    let naive = compute_metrics(&naive_from_matrix(&m, n_train)?, truths, None)?;
    let predictions = artifact.predict_from(&m, n_train)?;
    let scored = compute_metrics(&predictions, truths, Some(&naive))?;
    let signal = &artifact.target_signal;
    let mut report = format!("{REPORT_HEADER}\n{}\n", report_row(signal, "naive", &naive));
    if !matches!(artifact.model, TrainedModel::Naive) {
        report += &report_row(signal, artifact.model.name(), &scored);
        report.push('\n');
    }
    write_text(&a.output, &report)?;
    if let Some(path) = &a.predictions {
        write_text(path, &plot_csv(&m.cycle_index[n_train..], truths, &predictions))?;
    }
    print!("{report}");
    Ok(())
}

fn cmd_importance(a: &ImportanceArgs) -> Result<()> {
    let artifact: ModelArtifact = read_json(&a.model)?;
    let TrainedModel::Rf(forest) = &artifact.model else {
        anyhow::bail!("importances need an rf model, got {}", artifact.model.name());
    };
    let mut ranked: Vec<(&String, f64)> =
        artifact.columns.iter().zip(forest.importances.iter().copied()).collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1));
    let mut csv = String::from("feature,importance\n");
    for (name, v) in ranked {
        csv += &format!("{name},{v:.6}\n");
    }
    write_text(&a.output, &csv)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut out = format!("{REPORT_HEADER}\n");
    for path in &a.inputs {
        let text = read_text(path)?;
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            anyhow::bail!("{} is not a report file", path.display());
        }
        for line in lines.filter(|l| !l.trim().is_empty()) {
            out += line;
            out.push('\n');
        }
    }
    write_text(&a.output, &out)?;
    print!("{out}");
    Ok(())
}
