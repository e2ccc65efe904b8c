use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dladmm::data::{load_pair, synthetic_blobs};
use dladmm::{Architecture, Dataset64, Hyperparams, OptimizerSpec, RiskSpec};

use crate::CliError;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "DLADMM_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsFormat {
    #[default]
    Csv,
    JsonLines,
}

/// Where training and test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default = "default_classes")]
        num_classes: usize,
        /// Keep only the first 55,000 rows of a 60,000-row training file.
        #[serde(default = "default_true")]
        mnist_split: bool,
    },
    Synthetic {
        features: usize,
        classes: usize,
        train_samples: usize,
        #[serde(default)]
        test_samples: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_classes() -> usize {
    10
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub optimizer: OptimizerSpec,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub hidden_sizes: Vec<usize>,
    pub sample_counts: Vec<usize>,
    pub rhos: Vec<f64>,
    /// Sample count used by the width sweep.
    pub width_samples: usize,
    /// Hidden width used by the sample sweep.
    pub samples_hidden: usize,
    pub hidden_layers: usize,
    pub warmup_iters: usize,
    pub timed_iters: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            hidden_sizes: vec![50, 100, 200, 400],
            sample_counts: vec![1000, 2000, 4000],
            rhos: vec![1e-6, 1.0],
            width_samples: 1000,
            samples_hidden: 100,
            hidden_layers: 2,
            warmup_iters: 2,
            timed_iters: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataConfig,
    /// Seeded random subset of the training set.
    #[serde(default)]
    pub subsample_n: Option<usize>,
    pub architecture: Architecture,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default)]
    pub risk: RiskSpec,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
    #[serde(default)]
    pub bench: Option<BenchConfig>,
    /// Accuracy evaluation interval in iterations; 0 evaluates only at the end.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub metrics_format: MetricsFormat,
}

fn default_eval_every() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("dladmm-out")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks values only; file existence is checked when data is loaded.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: dladmm::Error| CliError::Config(e.to_string());
        self.architecture.validate().map_err(cfg)?;
        self.hyper.validate().map_err(cfg)?;
        if let Some(b) = &self.baseline {
            b.optimizer.validate().map_err(cfg)?;
        }
        if self.risk.lipschitz_h.is_nan() || self.risk.lipschitz_h <= 0.0 {
            return Err(CliError::Config("risk.lipschitz_h must be > 0".into()));
        }
        if let Some(bench) = &self.bench {
            if bench.timed_iters == 0 || bench.hidden_layers == 0 {
                return Err(CliError::Config(
                    "bench needs timed_iters >= 1 and hidden_layers >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Makes relative data paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        if let DataConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = &mut self.data
        {
            for p in [
                Some(train_images),
                Some(train_labels),
                test_images.as_mut(),
                test_labels.as_mut(),
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    /// Output directory, honoring the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Loads the training set (subsampled if requested) and the optional test set.
    pub fn load_data(&self) -> Result<(Dataset64, Option<Dataset64>), CliError> {
        let ds = |e: dladmm::Error| CliError::Dataset(e.to_string());
        match &self.data {
            DataConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                num_classes,
                mnist_split,
            } => {
                for p in [
                    Some(train_images),
                    Some(train_labels),
                    test_images.as_ref(),
                    test_labels.as_ref(),
                ]
                .into_iter()
                .flatten()
                {
                    if !p.exists() {
                        return Err(CliError::Dataset(format!("{} does not exist", p.display())));
                    }
                }
                let train = load_pair(
                    train_images,
                    train_labels,
                    *num_classes,
                    self.subsample_n,
                    self.hyper.seed,
                    *mnist_split,
                )
                .map_err(ds)?;
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(load_pair(i, l, *num_classes, None, 0, false).map_err(ds)?),
                    (None, None) => None,
                    _ => return Err(CliError::Config("test_images and test_labels go together".into())),
                };
                Ok((train, test))
            }
            DataConfig::Synthetic {
                features,
                classes,
                train_samples,
                test_samples,
                seed,
            } => {
                let total = train_samples + test_samples;
                let all = synthetic_blobs(*features, *classes, total, *seed).map_err(ds)?;
                let train_idx: Vec<usize> = (0..*train_samples).collect();
                let test_idx: Vec<usize> = (*train_samples..total).collect();
                let mut train = all.select(&train_idx);
                if let Some(n) = self.subsample_n {
                    if n > train.num_samples() {
                        return Err(CliError::Dataset(format!(
                            "requested {n} samples from {}",
                            train.num_samples()
                        )));
                    }
                    train = train.truncate(n);
                }
                let test = (*test_samples > 0).then(|| all.select(&test_idx));
                Ok((train, test))
            }
        }
    }
}
