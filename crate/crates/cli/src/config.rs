//! Flat TOML experiment configuration.
//!
//! ```toml
//! dataset = "mnist"
//! activations = ["pltanh", "relu", "lrelu", "alrelu"]
//! alpha = 0.01
//! epochs = 10
//! subset = 10000
//! out = "results/mnist.csv"
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use pltanh_core::{ActivationKind, Architecture, TrainConfig, DEFAULT_ALPHA};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Overrides `data_dir` from the config file.
pub const DATA_DIR_ENV: &str = "PLTANH_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Cifar10,
    Blobs,
}

impl DatasetName {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion-mnist",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Blobs => "blobs",
        }
    }

    pub fn default_architecture(&self) -> Option<Architecture> {
        match self {
            DatasetName::Mnist | DatasetName::FashionMnist => Some(Architecture::MnistCnn),
            DatasetName::Cifar10 => Some(Architecture::Cifar10Cnn),
            DatasetName::Blobs => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetName,
    /// Root holding one directory per dataset.
    pub data_dir: Option<PathBuf>,
    /// Defaults from the dataset; required for blobs.
    pub architecture: Option<Architecture>,
    pub activations: Vec<String>,
    /// PLTanh slope.
    pub alpha: f64,
    /// Slope of LReLU and ALReLU.
    pub baseline_alpha: f64,
    /// Grid for `sweep` when `--alphas` is not given.
    pub alphas: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub folds: usize,
    /// Keep only the first `subset` samples.
    pub subset: Option<usize>,
    pub width_divisor: usize,
    pub out: PathBuf,
    pub checkpoint_dir: Option<PathBuf>,
    pub blob_samples: usize,
    pub blob_classes: usize,
    pub blob_shape: [usize; 3],
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetName::Mnist,
            data_dir: None,
            architecture: None,
            activations: ["pltanh", "relu", "lrelu", "alrelu"].map(String::from).to_vec(),
            alpha: DEFAULT_ALPHA,
            baseline_alpha: DEFAULT_ALPHA,
            alphas: Vec::new(),
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            folds: 5,
            subset: None,
            width_divisor: 1,
            out: PathBuf::from("results.csv"),
            checkpoint_dir: None,
            blob_samples: 1000,
            blob_classes: 10,
            blob_shape: [28, 28, 1],
        }
    }
}

impl FromStr for ExperimentConfig {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let table: toml::Table = s.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if !table.contains_key("dataset") {
            return Err(CliError::Config("missing key `dataset`".into()));
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
            .map_err(|e: CliError| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.activations.is_empty() {
            return bad("activations is empty".into());
        }
        self.architecture()?;
        for kind in self.activation_kinds()? {
            self.train_config(kind)?
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(n) = self.subset {
            if n < self.folds {
                return bad(format!("subset {n} is smaller than {} folds", self.folds));
            }
        }
        if self.dataset == DatasetName::Blobs {
            if self.blob_classes < 2 || self.blob_samples < self.blob_classes.max(self.folds) {
                return bad("blobs need at least 2 classes and one sample per class and fold".into());
            }
            if self.blob_shape.contains(&0) {
                return bad("blob_shape has a zero dimension".into());
            }
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<Architecture, CliError> {
        self.architecture
            .or(self.dataset.default_architecture())
            .ok_or_else(|| CliError::Config(format!("{} needs an explicit architecture", self.dataset.as_str())))
    }

    /// Parsed activations with their slopes filled in.
    pub fn activation_kinds(&self) -> Result<Vec<ActivationKind>, CliError> {
        self.activations
            .iter()
            .map(|name| {
                let kind: ActivationKind = name.parse().map_err(|e| CliError::Config(format!("{e}")))?;
                Ok(match kind {
                    ActivationKind::PlTanh { .. } => kind.with_alpha(self.alpha),
                    other => other.with_alpha(self.baseline_alpha),
                })
            })
            .collect()
    }

    /// Dataset column value; subsets are marked as `name@n`.
    pub fn dataset_label(&self) -> String {
        match self.subset {
            Some(n) => format!("{}@{n}", self.dataset.as_str()),
            None => self.dataset.as_str().to_string(),
        }
    }

    /// `PLTANH_DATA_DIR`, then `data_dir`, then `./data`.
    pub fn data_root(&self) -> PathBuf {
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.data_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR)),
        }
    }

    pub fn train_config(&self, activation: ActivationKind) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            folds: self.folds,
            width_divisor: self.width_divisor,
            checkpoint_dir: self.checkpoint_dir.clone(),
            ..TrainConfig::new(self.dataset_label(), self.architecture()?, activation)
        })
    }
}
