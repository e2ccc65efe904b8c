//! Command implementations behind the `dladmm` binary.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 dataset
//! error, 4 numeric failure, 5 checkpoint error.

pub mod checkpoint;
pub mod config;
pub mod metrics;

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use dladmm::data::load_pair;
use dladmm::trainer::TrainOutcome;
use dladmm::{
    accuracy, init_state, train, train_baseline, Architecture, Dataset64, EvalPolicy, Hyperparams, IterationRecord,
    RhoSchedule, Trainer64,
};

use config::{BenchConfig, RunConfig};
use metrics::MetricsWriter;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("{0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Dataset(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Checkpoint(_) => 5,
        }
    }
}

impl From<dladmm::Error> for CliError {
    fn from(e: dladmm::Error) -> Self {
        use dladmm::Error as E;
        match e {
            E::NumericFailure { .. } | E::NonFinite(_) => CliError::Numeric(e.to_string()),
            E::Idx(_) | E::Dataset(_) | E::DimensionMismatch(_) => CliError::Dataset(e.to_string()),
            E::InvalidArchitecture(_) | E::InvalidHyperparams(_) | E::LayerOutOfRange { .. } | E::EmptyHistory => {
                CliError::Config(e.to_string())
            }
            E::Io(io) => CliError::Io(io),
        }
    }
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BENCH_WIDTH_FILE: &str = "bench_width.csv";
pub const BENCH_SAMPLES_FILE: &str = "bench_samples.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub command: String,
    pub iterations: usize,
    pub final_objective: Option<f64>,
    pub final_train_accuracy: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    pub best_train_accuracy: Option<f64>,
    pub best_test_accuracy: Option<f64>,
    pub total_wall_ms: f64,
}

fn best(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values
        .flatten()
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
}

impl Summary {
    fn from_history(command: &str, history: &[IterationRecord]) -> Self {
        let last = history.last();
        Summary {
            command: command.to_string(),
            iterations: history.len(),
            final_objective: last.map(|r| r.objective_f),
            final_train_accuracy: last.and_then(|r| r.train_accuracy),
            final_test_accuracy: last.and_then(|r| r.test_accuracy),
            best_train_accuracy: best(history.iter().map(|r| r.train_accuracy)),
            best_test_accuracy: best(history.iter().map(|r| r.test_accuracy)),
            total_wall_ms: history.iter().map(|r| r.wall_ms).sum(),
        }
    }
}

fn prepare_output(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_summary(dir: &Path, summary: &Summary) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(summary).map_err(std::io::Error::other)?;
    std::fs::write(dir.join(SUMMARY_FILE), text + "\n")?;
    Ok(())
}

/// `train <config>`: runs the ADMM solver and writes metrics, summary and checkpoint.
pub fn cmd_train(config_path: &Path) -> Result<Summary, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let (train_set, test_set) = cfg.load_data()?;
    let dir = prepare_output(&cfg)?;
    let mut writer = MetricsWriter::create(&dir, cfg.metrics_format)?;
    let mut write_err = None;
    let result = train(
        &cfg.architecture,
        &cfg.hyper,
        &cfg.risk,
        &train_set,
        test_set.as_ref(),
        EvalPolicy { every: cfg.eval_every },
        |rec| {
            if write_err.is_none() {
                write_err = writer.append(rec).err();
            }
        },
    );
    if let Some(e) = write_err {
        return Err(e);
    }
    let TrainOutcome { history, state } = result?;
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &state.network())?;
    let summary = Summary::from_history("train", &history);
    write_summary(&dir, &summary)?;
    Ok(summary)
}

/// `baseline <config>`: full-batch gradient training with the configured optimizer.
pub fn cmd_baseline(config_path: &Path) -> Result<Summary, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let base = cfg
        .baseline
        .clone()
        .ok_or_else(|| CliError::Config("missing `baseline` section".into()))?;
    let (train_set, test_set) = cfg.load_data()?;
    let dir = prepare_output(&cfg)?;
    let mut writer = MetricsWriter::create(&dir, cfg.metrics_format)?;
    let mut write_err = None;
    let result = train_baseline(
        &cfg.architecture,
        base.optimizer,
        base.epochs,
        cfg.hyper.seed,
        &train_set,
        test_set.as_ref(),
        EvalPolicy { every: cfg.eval_every },
        |rec| {
            if write_err.is_none() {
                write_err = writer.append(rec).err();
            }
        },
    );
    if let Some(e) = write_err {
        return Err(e);
    }
    let outcome = result?;
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &outcome.network)?;
    let summary = Summary::from_history(&format!("baseline-{}", base.optimizer.name()), &outcome.history);
    write_summary(&dir, &summary)?;
    Ok(summary)
}

/// One benchmark cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub hidden: usize,
    pub samples: usize,
    pub rho: f64,
    pub mean_ms_per_iter: f64,
    pub timed_iters: usize,
}

/// Mean wall time of one iteration for a given width, sample count and ρ.
pub fn time_cell(
    data: &Dataset64,
    hyper: &Hyperparams,
    bench: &BenchConfig,
    arch: &Architecture,
    hidden: usize,
    samples: usize,
    rho: f64,
) -> Result<BenchRow, CliError> {
    if samples > data.num_samples() {
        return Err(CliError::Dataset(format!(
            "bench needs {samples} samples, dataset has {}",
            data.num_samples()
        )));
    }
    let subset = data.truncate(samples);
    let mut dims = vec![data.num_features()];
    dims.extend(std::iter::repeat_n(hidden, bench.hidden_layers));
    dims.push(data.num_classes());
    let arch = Architecture::new(dims, arch.activation)?;
    let hyper = Hyperparams {
        rho0: rho,
        rho_schedule: RhoSchedule::Fixed,
        ..hyper.clone()
    };
    let state = init_state(&arch, &subset, &hyper)?;
    let mut trainer = Trainer64::new(state, hyper, dladmm::RiskSpec::default())?;
    for _ in 0..bench.warmup_iters {
        trainer.iterate(&subset)?;
    }
    let mut total = 0.0;
    for _ in 0..bench.timed_iters {
        total += trainer.iterate(&subset)?.wall_ms;
    }
    Ok(BenchRow {
        hidden,
        samples,
        rho,
        mean_ms_per_iter: total / bench.timed_iters as f64,
        timed_iters: bench.timed_iters,
    })
}

fn write_bench(path: &Path, rows: &[BenchRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `bench <config>`: per-iteration time versus hidden width and versus sample
/// count, each across the configured ρ grid.
pub fn cmd_bench(config_path: &Path) -> Result<(Vec<BenchRow>, Vec<BenchRow>), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let bench = cfg.bench.clone().unwrap_or_default();
    let (train_set, _) = cfg.load_data()?;
    let dir = prepare_output(&cfg)?;
    let mut width = Vec::new();
    for &h in &bench.hidden_sizes {
        for &rho in &bench.rhos {
            width.push(time_cell(
                &train_set,
                &cfg.hyper,
                &bench,
                &cfg.architecture,
                h,
                bench.width_samples,
                rho,
            )?);
        }
    }
    write_bench(&dir.join(BENCH_WIDTH_FILE), &width)?;
    let mut samples = Vec::new();
    for &n in &bench.sample_counts {
        for &rho in &bench.rhos {
            samples.push(time_cell(
                &train_set,
                &cfg.hyper,
                &bench,
                &cfg.architecture,
                bench.samples_hidden,
                n,
                rho,
            )?);
        }
    }
    write_bench(&dir.join(BENCH_SAMPLES_FILE), &samples)?;
    Ok((width, samples))
}

/// Finds the image/label pair for `eval`: a directory holding the MNIST test
/// files, or an image file whose label file follows the MNIST naming scheme.
pub fn resolve_eval_data(data: &Path, labels: Option<&Path>) -> Result<(PathBuf, PathBuf), CliError> {
    if let Some(l) = labels {
        return Ok((data.to_path_buf(), l.to_path_buf()));
    }
    if data.is_dir() {
        for suffix in ["", ".gz"] {
            let img = data.join(format!("t10k-images-idx3-ubyte{suffix}"));
            let lab = data.join(format!("t10k-labels-idx1-ubyte{suffix}"));
            if img.exists() && lab.exists() {
                return Ok((img, lab));
            }
        }
        return Err(CliError::Dataset(format!("no t10k IDX files in {}", data.display())));
    }
    let name = data
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Dataset(format!("bad data path {}", data.display())))?;
    if !name.contains("images-idx3") {
        return Err(CliError::Dataset(format!(
            "cannot infer the label file for {}; pass --labels",
            data.display()
        )));
    }
    Ok((
        data.to_path_buf(),
        data.with_file_name(name.replace("images-idx3", "labels-idx1")),
    ))
}

/// `eval <ckpt> <data>`: accuracy of a saved network.
pub fn cmd_eval(ckpt: &Path, data: &Path, labels: Option<&Path>) -> Result<f64, CliError> {
    let net = checkpoint::load(ckpt)?;
    let (img, lab) = resolve_eval_data(data, labels)?;
    for p in [&img, &lab] {
        if !p.exists() {
            return Err(CliError::Dataset(format!("{} does not exist", p.display())));
        }
    }
    let classes = net.weights.last().map(|w| w.nrows()).unwrap_or(0);
    let set: Dataset64 = load_pair(&img, &lab, classes, None, 0, false)?;
    let preds = net.predict(set.x.view())?;
    Ok(accuracy(&preds, &set.labels))
}
