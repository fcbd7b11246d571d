//! Adam, the per-fold training loop, k-fold experiments and alpha sweeps.

use std::path::PathBuf;
use std::time::Instant;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::ActivationKind;
use crate::autodiff::{cross_entropy_value, Tape, TapeError};
use crate::data::{batch_iter, kfold_split, DataError, Dataset, FoldSplit};
use crate::metrics::{evaluate, FoldMetrics, MetricsError, MetricsReport};
use crate::model::{init_params, predict, record_forward, Architecture, ModelError, ModelParams, ModelSpec};
use crate::tensor::{Mode, Real, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite ({loss}) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl TrainError {
    /// Looks through fold wrappers.
    pub fn root(&self) -> &TrainError {
        match self {
            TrainError::Fold { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Mean over the batch of `-log(p_true)`, probabilities clamped to `1e-12`.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, one_hot: &Tensor<T>) -> Result<T, TensorError> {
    cross_entropy_value(probs, one_hot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// First and second moment estimates for a list of parameters.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[&Tensor<T>], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update:
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Config(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(TrainError::Config(format!(
                "parameter {:?}, gradient {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
    }
    state.t += 1;
    let c = state.config;
    let t = state.t as i32;
    let lr = T::from_f64(c.learning_rate);
    let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
    let corr1 = T::from_f64(1.0 - c.beta1.powi(t));
    let corr2 = T::from_f64(1.0 - c.beta2.powi(t));
    let eps = T::from_f64(c.epsilon);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Everything that defines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: String,
    pub architecture: Architecture,
    pub activation: ActivationKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub folds: usize,
    /// Divides conv filters and hidden dense widths; 1 is the published size.
    pub width_divisor: usize,
    /// Writes each fold's final parameters here when set.
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(dataset: impl Into<String>, architecture: Architecture, activation: ActivationKind) -> Self {
        Self {
            dataset: dataset.into(),
            architecture,
            activation,
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            folds: 5,
            width_divisor: 1,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.folds < 2 {
            return bad("need at least 2 folds");
        }
        if self.width_divisor == 0 {
            return bad("width divisor must be positive");
        }
        self.activation
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))
    }

    /// The model this configuration trains on `dataset`.
    pub fn model_spec(&self, dataset: &Dataset) -> Result<ModelSpec, TrainError> {
        let spec = self
            .architecture
            .build(self.activation, dataset.classes)?
            .scaled(self.width_divisor)
            .with_input_shape(dataset.image_shape());
        if spec.classes != dataset.classes {
            return Err(TrainError::Config(format!(
                "{} predicts {} classes but {} has {}",
                self.architecture, spec.classes, dataset.name, dataset.classes
            )));
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Mixes a base seed with tags (splitmix64 finaliser per step).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut z = base;
    for &tag in tags {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(tag);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_DROPOUT: u64 = 3;
const EVAL_BATCH: usize = 256;

/// Result of training one fold.
#[derive(Debug, Clone)]
pub struct FoldOutcome<T> {
    pub params: ModelParams<T>,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    pub metrics: FoldMetrics,
}

/// Trains on `fold.train` and scores `fold.validation` in inference mode.
pub fn train_fold<T: Real>(
    spec: &ModelSpec,
    dataset: &Dataset,
    fold: &FoldSplit,
    config: &TrainConfig,
) -> Result<FoldOutcome<T>, TrainError> {
    config.validate()?;
    let mut params = init_params::<T>(spec, derive_seed(config.seed, &[TAG_INIT, fold.fold as u64]))?;
    let losses = fit(spec, &mut params, dataset, &fold.train, config, fold.fold)?;
    let (images, labels) = dataset.select::<T>(&fold.validation);
    let probs = predict(spec, &params, &images, EVAL_BATCH)?;
    let metrics = evaluate(&probs, &labels)?;
    Ok(FoldOutcome {
        params,
        losses,
        metrics,
    })
}

/// Runs `config.epochs` of mini-batch Adam over `indices`, returning the mean
/// loss of each epoch.
pub fn fit<T: Real>(
    spec: &ModelSpec,
    params: &mut ModelParams<T>,
    dataset: &Dataset,
    indices: &[usize],
    config: &TrainConfig,
    fold: usize,
) -> Result<Vec<f64>, TrainError> {
    let adam_config = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(&params.trainable(), adam_config);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[TAG_DROPOUT, fold as u64]));
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let shuffle = derive_seed(config.seed, &[TAG_SHUFFLE, fold as u64, epoch as u64]);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (batch_index, batch) in batch_iter::<T>(dataset, indices, config.batch_size, Some(shuffle)).enumerate() {
            let n = batch.labels.len();
            let mut tape = Tape::new();
            let x = tape.constant(batch.images);
            let pass = record_forward(spec, params, &mut tape, x, Mode::Train, &mut dropout_rng, true)?;
            let loss_node = tape.softmax_cross_entropy(pass.logits, batch.one_hot)?;
            let loss = tape.value(loss_node)?.data()[0].to_f64();
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_index,
                    loss,
                });
            }
            let mut grads = tape.backward(loss_node)?;
            let grads = pass
                .params
                .iter()
                .map(|&id| grads.take(id))
                .collect::<Result<Vec<_>, _>>()?;
            params.update_running_stats(&tape, &pass)?;
            adam_step(&mut params.trainable_mut(), &grads, &mut adam)?;
            total += loss * n as f64;
            seen += n;
        }
        let mean = total / seen.max(1) as f64;
        debug!(
            "fold {fold} epoch {} loss {mean:.5} ({:.1}s)",
            epoch + 1,
            started.elapsed().as_secs_f64()
        );
        losses.push(mean);
    }
    Ok(losses)
}

/// Fold-by-fold outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub report: MetricsReport,
    pub losses: Vec<Vec<f64>>,
    pub seconds: f64,
}

/// k-fold cross-validation with `f32` training.
pub fn run_experiment(config: &TrainConfig, dataset: &Dataset) -> Result<ExperimentResult, TrainError> {
    config.validate()?;
    let started = Instant::now();
    let spec = config.model_spec(dataset)?;
    let splits = kfold_split(dataset.len(), config.folds, config.seed)?;
    let mut folds = Vec::with_capacity(splits.len());
    let mut losses = Vec::with_capacity(splits.len());
    for split in &splits {
        let wrap = |e: TrainError| TrainError::Fold {
            fold: split.fold,
            source: Box::new(e),
        };
        let outcome = train_fold::<f32>(&spec, dataset, split, config).map_err(wrap)?;
        info!(
            "{} {} fold {}: accuracy {:.4}",
            config.dataset,
            config.activation,
            split.fold,
            outcome.metrics.accuracy
        );
        if let Some(dir) = &config.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|source| {
                wrap(TrainError::Data(DataError::Io {
                    path: dir.clone(),
                    source,
                }))
            })?;
            let name = format!("{}_{}_fold{}.pltk", config.dataset, config.activation.name(), split.fold);
            outcome
                .params
                .save(&dir.join(name))
                .map_err(|e| wrap(e.into()))?;
        }
        folds.push(outcome.metrics);
        losses.push(outcome.losses);
    }
    Ok(ExperimentResult {
        report: MetricsReport::from_folds(folds)?,
        losses,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// One row per alpha plus the index of the most accurate.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<(f64, ExperimentResult)>,
    pub best: usize,
}

/// Index of the highest accuracy; equal accuracies go to the smaller alpha.
pub fn best_alpha(rows: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(alpha, acc)) in rows.iter().enumerate() {
        best = match best {
            Some(b) if rows[b].1 > acc || (rows[b].1 == acc && rows[b].0 <= alpha) => Some(b),
            _ => Some(i),
        };
    }
    best
}

/// Runs [`run_experiment`] once per alpha with the same seed.
pub fn alpha_sweep(config: &TrainConfig, dataset: &Dataset, alphas: &[f64]) -> Result<SweepResult, TrainError> {
    if alphas.is_empty() {
        return Err(TrainError::Config("alpha list is empty".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(TrainError::Config(format!("alpha {a} must be finite and non-negative")));
    }
    if config.activation.alpha().is_none() {
        return Err(TrainError::Config(format!("{} has no alpha to sweep", config.activation)));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cfg = TrainConfig {
            activation: config.activation.with_alpha(alpha),
            ..config.clone()
        };
        rows.push((alpha, run_experiment(&cfg, dataset)?));
    }
    let summary: Vec<(f64, f64)> = rows.iter().map(|(a, r)| (*a, r.report.mean.accuracy)).collect();
    let best = best_alpha(&summary).expect("non-empty sweep");
    Ok(SweepResult { rows, best })
}
