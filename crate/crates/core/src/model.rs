//! The four CNN architectures, their parameters, and forward wiring.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::ActivationKind;
use crate::autodiff::{NodeId, Tape, TapeError};
use crate::checkpoint::{self, CheckpointError};
use crate::tensor::{Mode, Padding, Real, RunningStats, Tensor, BN_EPSILON, BN_MOMENTUM, POOL_SIZE};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("layer {index} ({kind}): {source}")]
    Layer {
        index: usize,
        kind: &'static str,
        #[source]
        source: TapeError,
    },
    #[error("input shape {actual:?} does not match model input [N, {expected:?}]")]
    InputShape {
        expected: [usize; 3],
        actual: Vec<usize>,
    },
    #[error("invalid model: {0}")]
    InvalidSpec(String),
    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel_size: usize,
        padding: Padding,
    },
    MaxPool,
    Dropout {
        rate: f64,
    },
    BatchNorm,
    Dense {
        units: usize,
    },
    Flatten,
    GlobalAvgPool,
    Activation {
        activation: ActivationKind,
    },
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Flatten => "flatten",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Softmax => "softmax",
        }
    }

    fn conv(filters: usize, kernel_size: usize, padding: Padding) -> Self {
        LayerSpec::Conv2d {
            filters,
            kernel_size,
            padding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    MnistCnn,
    FlowersCnn,
    Cifar10Cnn,
    HistoCnn,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::MnistCnn,
        Architecture::FlowersCnn,
        Architecture::Cifar10Cnn,
        Architecture::HistoCnn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::MnistCnn => "mnist_cnn",
            Architecture::FlowersCnn => "flowers_cnn",
            Architecture::Cifar10Cnn => "cifar10_cnn",
            Architecture::HistoCnn => "histo_cnn",
        }
    }

    /// Full-size model. `classes` only matters for the histopathology head.
    pub fn build(&self, activation: ActivationKind, classes: usize) -> Result<ModelSpec, ModelError> {
        match self {
            Architecture::MnistCnn => Ok(build_mnist_cnn(activation)),
            Architecture::FlowersCnn => Ok(build_flowers_cnn(activation)),
            Architecture::Cifar10Cnn => Ok(build_cifar10_cnn(activation)),
            Architecture::HistoCnn => build_histo_cnn(activation, classes),
        }
    }

    /// Same layer sequence with narrow layers and small inputs, cheap enough
    /// for whole-network finite differences.
    pub fn toy(&self, activation: ActivationKind) -> ModelSpec {
        let spec = self.build(activation, 2).expect("two classes is valid");
        match self {
            Architecture::MnistCnn => spec.scaled(8).with_input_shape([8, 8, 1]),
            Architecture::FlowersCnn => spec.scaled(16).with_input_shape([18, 18, 3]),
            Architecture::Cifar10Cnn => spec.scaled(16).with_input_shape([8, 8, 3]),
            Architecture::HistoCnn => spec.scaled(32).with_input_shape([32, 32, 3]),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| ModelError::UnknownArchitecture(s.to_string()))
    }
}

/// An ordered layer list plus the per-sample input shape `[H, W, C]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: Architecture,
    pub layers: Vec<LayerSpec>,
    pub input_shape: [usize; 3],
    pub classes: usize,
}

pub fn build_mnist_cnn(activation: ActivationKind) -> ModelSpec {
    ModelSpec {
        name: Architecture::MnistCnn,
        layers: vec![
            LayerSpec::conv(32, 3, Padding::Valid),
            LayerSpec::Activation { activation },
            LayerSpec::MaxPool,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 10 },
            LayerSpec::Softmax,
        ],
        input_shape: [28, 28, 1],
        classes: 10,
    }
}

pub fn build_flowers_cnn(activation: ActivationKind) -> ModelSpec {
    let act = LayerSpec::Activation { activation };
    ModelSpec {
        name: Architecture::FlowersCnn,
        layers: vec![
            LayerSpec::conv(32, 3, Padding::Valid),
            act,
            LayerSpec::MaxPool,
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::conv(64, 3, Padding::Valid),
            act,
            LayerSpec::MaxPool,
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::conv(128, 3, Padding::Valid),
            act,
            LayerSpec::Dropout { rate: 0.4 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 128 },
            act,
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Dense { units: 5 },
            LayerSpec::Softmax,
        ],
        input_shape: [32, 32, 3],
        classes: 5,
    }
}

pub fn build_cifar10_cnn(activation: ActivationKind) -> ModelSpec {
    let act = LayerSpec::Activation { activation };
    let mut layers = Vec::new();
    for (filters, rate) in [(32, 0.2), (64, 0.3), (128, 0.4)] {
        layers.extend([
            LayerSpec::conv(filters, 3, Padding::Same),
            act,
            LayerSpec::BatchNorm,
            LayerSpec::conv(filters, 3, Padding::Same),
            act,
            LayerSpec::BatchNorm,
            LayerSpec::MaxPool,
            LayerSpec::Dropout { rate },
        ]);
    }
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 128 },
        act,
        LayerSpec::BatchNorm,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense { units: 10 },
        LayerSpec::Softmax,
    ]);
    ModelSpec {
        name: Architecture::Cifar10Cnn,
        layers,
        input_shape: [32, 32, 3],
        classes: 10,
    }
}

pub fn build_histo_cnn(activation: ActivationKind, classes: usize) -> Result<ModelSpec, ModelError> {
    if classes < 2 {
        return Err(ModelError::InvalidSpec(format!("need at least 2 classes, got {classes}")));
    }
    let act = LayerSpec::Activation { activation };
    let mut layers = Vec::new();
    for (filters, kernel, rate) in [(32, 5, 0.1), (64, 3, 0.2), (128, 3, 0.3), (256, 3, 0.4), (512, 3, 0.5)] {
        layers.extend([
            LayerSpec::conv(filters, kernel, Padding::Same),
            act,
            LayerSpec::MaxPool,
            LayerSpec::BatchNorm,
            LayerSpec::Dropout { rate },
        ]);
    }
    layers.extend([
        LayerSpec::GlobalAvgPool,
        act,
        LayerSpec::BatchNorm,
        LayerSpec::Dropout { rate: 0.3 },
        LayerSpec::Dense { units: 256 },
        act,
        LayerSpec::BatchNorm,
        LayerSpec::Dropout { rate: 0.4 },
        LayerSpec::Dense { units: classes },
        LayerSpec::Softmax,
    ]);
    Ok(ModelSpec {
        name: Architecture::HistoCnn,
        layers,
        input_shape: [96, 96, 3],
        classes,
    })
}

impl ModelSpec {
    pub fn with_input_shape(mut self, shape: [usize; 3]) -> Self {
        self.input_shape = shape;
        self
    }

    /// Replaces every activation layer's kind. Parameter shapes are unaffected.
    pub fn with_activation(mut self, activation: ActivationKind) -> Self {
        for layer in &mut self.layers {
            if let LayerSpec::Activation { activation: a } = layer {
                *a = activation;
            }
        }
        self
    }

    /// Divides conv filters and hidden dense widths by `divisor` (minimum 1).
    /// The output layer keeps one unit per class.
    pub fn scaled(mut self, divisor: usize) -> Self {
        let divisor = divisor.max(1);
        let last_dense = self
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dense { .. }));
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                LayerSpec::Conv2d { filters, .. } => *filters = (*filters / divisor).max(1),
                LayerSpec::Dense { units } if Some(i) != last_dense => {
                    *units = (*units / divisor).max(1)
                }
                _ => {}
            }
        }
        self
    }

    pub fn activations(&self) -> impl Iterator<Item = ActivationKind> + '_ {
        self.layers.iter().filter_map(|l| match l {
            LayerSpec::Activation { activation } => Some(*activation),
            _ => None,
        })
    }

    /// Per-sample output shape of every layer. Fails if consecutive layers do
    /// not compose or the head is not `dense(classes)` followed by softmax.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        let invalid = |i: usize, layer: &LayerSpec, msg: String| {
            ModelError::InvalidSpec(format!("layer {i} ({}): {msg}", layer.kind()))
        };
        let mut shape = self.input_shape.to_vec();
        if shape.contains(&0) {
            return Err(ModelError::InvalidSpec(format!("input shape {shape:?} has a zero dimension")));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (*layer, shape.as_slice()) {
                (
                    LayerSpec::Conv2d {
                        filters,
                        kernel_size,
                        padding,
                    },
                    &[h, w, _],
                ) => {
                    if filters == 0 || kernel_size == 0 {
                        return Err(invalid(i, layer, "zero filters or kernel size".into()));
                    }
                    match padding {
                        Padding::Same => vec![h, w, filters],
                        Padding::Valid if h >= kernel_size && w >= kernel_size => {
                            vec![h - kernel_size + 1, w - kernel_size + 1, filters]
                        }
                        Padding::Valid => {
                            return Err(invalid(i, layer, format!("{h}x{w} input smaller than kernel")))
                        }
                    }
                }
                (LayerSpec::MaxPool, &[h, w, c]) => {
                    if h < POOL_SIZE || w < POOL_SIZE {
                        return Err(invalid(i, layer, format!("{h}x{w} input smaller than window")));
                    }
                    vec![h / POOL_SIZE, w / POOL_SIZE, c]
                }
                (LayerSpec::GlobalAvgPool, &[_, _, c]) => vec![c],
                (LayerSpec::Flatten, s) => vec![s.iter().product()],
                (LayerSpec::Dense { units }, &[_]) if units > 0 => vec![units],
                (LayerSpec::Softmax, s @ &[k]) if k >= 2 => s.to_vec(),
                (LayerSpec::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(invalid(i, layer, format!("rate {rate} outside [0, 1)")));
                    }
                    s.to_vec()
                }
                (LayerSpec::BatchNorm | LayerSpec::Activation { .. }, s) => s.to_vec(),
                (_, s) => return Err(invalid(i, layer, format!("cannot follow shape {s:?}"))),
            };
            shapes.push(shape.clone());
        }
        let n = self.layers.len();
        let head_ok = n >= 2
            && matches!(self.layers[n - 1], LayerSpec::Softmax)
            && self.layers[n - 2] == LayerSpec::Dense { units: self.classes };
        if !head_ok {
            return Err(ModelError::InvalidSpec(format!(
                "model must end with dense({}) and softmax",
                self.classes
            )));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.layer_shapes()?;
        for a in self.activations() {
            a.validate()
                .map_err(|e| ModelError::InvalidSpec(format!("activation {a}: {e}")))?;
        }
        Ok(())
    }

    /// Trainable scalar count (batch-norm running statistics excluded).
    pub fn param_count(&self) -> Result<usize, ModelError> {
        Ok(self.param_shapes()?.iter().flatten().map(|s| s.iter().product::<usize>()).sum())
    }

    /// Trainable tensor shapes per layer, in [`ModelParams::trainable`] order.
    fn param_shapes(&self) -> Result<Vec<Vec<Vec<usize>>>, ModelError> {
        let shapes = self.layer_shapes()?;
        let mut input = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (layer, output) in self.layers.iter().zip(&shapes) {
            let fan_in = *input.last().expect("shapes are non-empty");
            out.push(match layer {
                LayerSpec::Conv2d {
                    filters,
                    kernel_size,
                    ..
                } => vec![vec![*kernel_size, *kernel_size, fan_in, *filters], vec![*filters]],
                LayerSpec::Dense { units } => vec![vec![fan_in, *units], vec![*units]],
                LayerSpec::BatchNorm => vec![vec![fan_in]; 2],
                _ => vec![],
            });
            input = output.clone();
        }
        Ok(out)
    }
}

/// Parameters attached to one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    None,
    Conv {
        kernel: Tensor<T>,
        bias: Tensor<T>,
    },
    Dense {
        weights: Tensor<T>,
        bias: Tensor<T>,
    },
    BatchNorm {
        gamma: Tensor<T>,
        beta: Tensor<T>,
        running: RunningStats<T>,
    },
}

/// One [`LayerParams`] per layer of a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub layers: Vec<LayerParams<T>>,
}

fn glorot<T: Real>(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-limit..limit)))
}

/// Glorot-uniform weights, zero biases, `gamma = 1`, `beta = 0`, running
/// mean 0 and variance 1.
pub fn init_params<T: Real>(spec: &ModelSpec, seed: u64) -> Result<ModelParams<T>, ModelError> {
    let shapes = spec.param_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .layers
        .iter()
        .zip(shapes)
        .map(|(layer, mut s)| match layer {
            LayerSpec::Conv2d { .. } => {
                let ks = s.remove(0);
                let area = ks[0] * ks[1];
                let (fan_in, fan_out) = (area * ks[2], area * ks[3]);
                LayerParams::Conv {
                    kernel: glorot(ks, fan_in, fan_out, &mut rng),
                    bias: Tensor::zeros(s.remove(0)),
                }
            }
            LayerSpec::Dense { .. } => {
                let ws = s.remove(0);
                let (fan_in, fan_out) = (ws[0], ws[1]);
                LayerParams::Dense {
                    weights: glorot(ws, fan_in, fan_out, &mut rng),
                    bias: Tensor::zeros(s.remove(0)),
                }
            }
            LayerSpec::BatchNorm => {
                let c = s[0][0];
                LayerParams::BatchNorm {
                    gamma: Tensor::full(vec![c], T::one()),
                    beta: Tensor::zeros(vec![c]),
                    running: RunningStats::new(c),
                }
            }
            _ => LayerParams::None,
        })
        .collect();
    Ok(ModelParams { layers })
}

impl<T: Real> ModelParams<T> {
    pub fn trainable(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerParams::Conv { kernel, bias } => out.extend([kernel, bias]),
                LayerParams::Dense { weights, bias } => out.extend([weights, bias]),
                LayerParams::BatchNorm { gamma, beta, .. } => out.extend([gamma, beta]),
                LayerParams::None => {}
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                LayerParams::Conv { kernel, bias } => out.extend([kernel, bias]),
                LayerParams::Dense { weights, bias } => out.extend([weights, bias]),
                LayerParams::BatchNorm { gamma, beta, .. } => out.extend([gamma, beta]),
                LayerParams::None => {}
            }
        }
        out
    }

    /// Every stored tensor, including running statistics, with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerParams::Conv { kernel, bias } => {
                    out.push((format!("layer{i}.kernel"), kernel));
                    out.push((format!("layer{i}.bias"), bias));
                }
                LayerParams::Dense { weights, bias } => {
                    out.push((format!("layer{i}.weights"), weights));
                    out.push((format!("layer{i}.bias"), bias));
                }
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running,
                } => {
                    out.push((format!("layer{i}.gamma"), gamma));
                    out.push((format!("layer{i}.beta"), beta));
                    out.push((format!("layer{i}.running_mean"), &running.mean));
                    out.push((format!("layer{i}.running_var"), &running.var));
                }
                LayerParams::None => {}
            }
        }
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                LayerParams::Conv { kernel, bias } => {
                    out.push((format!("layer{i}.kernel"), kernel));
                    out.push((format!("layer{i}.bias"), bias));
                }
                LayerParams::Dense { weights, bias } => {
                    out.push((format!("layer{i}.weights"), weights));
                    out.push((format!("layer{i}.bias"), bias));
                }
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running,
                } => {
                    out.push((format!("layer{i}.gamma"), gamma));
                    out.push((format!("layer{i}.beta"), beta));
                    out.push((format!("layer{i}.running_mean"), &mut running.mean));
                    out.push((format!("layer{i}.running_var"), &mut running.var));
                }
                LayerParams::None => {}
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.all_finite())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(checkpoint::save(path, &self.named_tensors())?)
    }

    /// Loads a checkpoint written for `spec`, checking every tensor's shape.
    pub fn load(spec: &ModelSpec, path: &Path) -> Result<Self, ModelError> {
        let mut params = init_params::<T>(spec, 0)?;
        let mut stored = checkpoint::load::<T>(path)?;
        for (name, slot) in params.named_tensors_mut() {
            let pos = stored
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            let (_, tensor) = stored.swap_remove(pos);
            if tensor.shape() != slot.shape() {
                return Err(CheckpointError::Shape {
                    name,
                    expected: slot.shape().to_vec(),
                    actual: tensor.shape().to_vec(),
                }
                .into());
            }
            *slot = tensor;
        }
        Ok(params)
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// averages.
    pub fn update_running_stats(&mut self, tape: &Tape<T>, pass: &ForwardPass) -> Result<(), ModelError> {
        for &(layer, node) in &pass.batchnorms {
            if let (LayerParams::BatchNorm { running, .. }, Some((mean, var))) =
                (&mut self.layers[layer], tape.batch_statistics(node)?)
            {
                running.update(mean, var, BN_MOMENTUM);
            }
        }
        Ok(())
    }
}

/// Nodes recorded by [`record_forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Pre-softmax scores.
    pub logits: NodeId,
    pub probs: NodeId,
    /// Parameter leaves in [`ModelParams::trainable`] order.
    pub params: Vec<NodeId>,
    /// `(layer index, node)` of every batch-norm layer.
    pub batchnorms: Vec<(usize, NodeId)>,
}

/// Records the model on `tape`. Parameters become gradient-tracking leaves
/// when `track_params` is set, constants otherwise.
pub fn record_forward<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    tape: &mut Tape<T>,
    input: NodeId,
    mode: Mode,
    rng: &mut R,
    track_params: bool,
) -> Result<ForwardPass, ModelError> {
    let shape = tape.value(input)?.shape();
    if shape.len() != 4 || shape[1..] != spec.input_shape {
        return Err(ModelError::InputShape {
            expected: spec.input_shape,
            actual: shape.to_vec(),
        });
    }
    if params.layers.len() != spec.layers.len() {
        return Err(ModelError::InvalidSpec(format!(
            "{} parameter slots for {} layers",
            params.layers.len(),
            spec.layers.len()
        )));
    }
    let leaf = |tape: &mut Tape<T>, t: &Tensor<T>| {
        if track_params {
            tape.parameter(t.clone())
        } else {
            tape.constant(t.clone())
        }
    };
    let mut x = input;
    let mut logits = None;
    let mut param_nodes = Vec::new();
    let mut batchnorms = Vec::new();
    for (index, (layer, p)) in spec.layers.iter().zip(&params.layers).enumerate() {
        let at = |source: TapeError| ModelError::Layer {
            index,
            kind: layer.kind(),
            source,
        };
        let mismatch = || ModelError::InvalidSpec(format!("layer {index} ({}) has wrong parameters", layer.kind()));
        x = match (layer, p) {
            (LayerSpec::Conv2d { padding, .. }, LayerParams::Conv { kernel, bias }) => {
                let (k, b) = (leaf(tape, kernel), leaf(tape, bias));
                param_nodes.extend([k, b]);
                tape.conv2d(x, k, b, *padding).map_err(at)?
            }
            (LayerSpec::Dense { .. }, LayerParams::Dense { weights, bias }) => {
                let (w, b) = (leaf(tape, weights), leaf(tape, bias));
                param_nodes.extend([w, b]);
                tape.dense(x, w, b).map_err(at)?
            }
            (
                LayerSpec::BatchNorm,
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running,
                },
            ) => {
                let (g, b) = (leaf(tape, gamma), leaf(tape, beta));
                param_nodes.extend([g, b]);
                let node = tape.batchnorm(x, g, b, running, mode, BN_EPSILON).map_err(at)?;
                batchnorms.push((index, node));
                node
            }
            (LayerSpec::MaxPool, LayerParams::None) => tape.maxpool2d(x).map_err(at)?,
            (LayerSpec::Dropout { rate }, LayerParams::None) => {
                tape.dropout(x, *rate, mode, rng).map_err(at)?
            }
            (LayerSpec::Flatten, LayerParams::None) => tape.flatten(x).map_err(at)?,
            (LayerSpec::GlobalAvgPool, LayerParams::None) => tape.global_avg_pool(x).map_err(at)?,
            (LayerSpec::Activation { activation }, LayerParams::None) => {
                tape.activation(x, *activation).map_err(at)?
            }
            (LayerSpec::Softmax, LayerParams::None) => {
                logits = Some(x);
                tape.softmax(x).map_err(at)?
            }
            _ => return Err(mismatch()),
        };
    }
    let logits = logits.ok_or_else(|| ModelError::InvalidSpec("model has no softmax".into()))?;
    Ok(ForwardPass {
        logits,
        probs: x,
        params: param_nodes,
        batchnorms,
    })
}

/// Class probabilities for a batch, without gradient tracking.
pub fn forward<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    input: &Tensor<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor<T>, ModelError> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let pass = record_forward(spec, params, &mut tape, x, mode, rng, false)?;
    Ok(tape.value(pass.probs)?.clone())
}

/// Inference-mode probabilities, evaluated in chunks of `batch_size` rows.
pub fn predict<T: Real>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    input: &Tensor<T>,
    batch_size: usize,
) -> Result<Tensor<T>, ModelError> {
    let n = input.shape().first().copied().unwrap_or(0);
    let row: usize = input.shape().iter().skip(1).product();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(n * spec.classes);
    for start in (0..n).step_by(batch_size.max(1)) {
        let end = (start + batch_size.max(1)).min(n);
        let mut shape = input.shape().to_vec();
        shape[0] = end - start;
        let chunk = Tensor::new(shape, input.data()[start * row..end * row].to_vec())
            .map_err(TapeError::from)?;
        out.extend_from_slice(forward(spec, params, &chunk, Mode::Infer, &mut rng)?.data());
    }
    Ok(Tensor::new(vec![n, spec.classes], out).map_err(TapeError::from)?)
}
