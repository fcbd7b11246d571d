//! Finite-difference verification of activation derivatives and of whole
//! network gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationKind;
use crate::autodiff::{finite_difference_gradient, Tape};
use crate::data::one_hot;
use crate::model::{init_params, record_forward, Architecture, LayerParams, ModelError, ModelParams, ModelSpec};
use crate::tensor::{Mode, Tensor};

/// Step for activation checks.
pub const ACTIVATION_STEP: f64 = 1e-6;
/// Pass threshold for activation checks.
pub const ACTIVATION_TOLERANCE: f64 = 1e-6;
/// Denominator floor for activation checks. Below it the error is absolute.
pub const ACTIVATION_FLOOR: f64 = 1e-3;
/// Sampling interval for activation checks.
pub const ACTIVATION_RANGE: (f64, f64) = (-50.0, 150.0);
/// Points closer than this to a kink are skipped.
pub const KINK_EXCLUSION: f64 = 1e-3;

pub const NETWORK_STEP: f64 = 1e-5;
pub const NETWORK_TOLERANCE: f64 = 1e-4;
pub const NETWORK_FLOOR: f64 = 1e-5;
pub const NETWORK_BATCH: usize = 4;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Outcome of one gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub worst_relative_error: f64,
    /// Where the worst error occurred (input value or parameter coordinate).
    pub worst_at: String,
    pub tolerance: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.worst_relative_error <= self.tolerance
    }

    fn record(&mut self, err: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        // A NaN stays as the worst error once seen.
        if self.worst_relative_error.is_nan() {
            return;
        }
        if err.is_nan() || err > self.worst_relative_error || self.worst_at.is_empty() {
            self.worst_relative_error = err;
            self.worst_at = at();
        }
    }
}

fn new_report(name: String, tolerance: f64) -> CheckReport {
    CheckReport {
        name,
        worst_relative_error: 0.0,
        worst_at: String::new(),
        tolerance,
        checked: 0,
        skipped: 0,
    }
}

/// Whether `x` lies within [`KINK_EXCLUSION`] of a kink or its mirror image.
pub fn near_kink(kind: &ActivationKind, x: f64) -> bool {
    kind.kinks()
        .iter()
        .any(|&k| (x - k).abs() < KINK_EXCLUSION || (x + k).abs() < KINK_EXCLUSION)
}

/// Compares `derivative` against central differences of `kind.forward` at
/// `points` uniform draws from [`ACTIVATION_RANGE`].
pub fn check_activation_with(
    kind: ActivationKind,
    derivative: impl Fn(f64) -> f64,
    points: usize,
    seed: u64,
) -> CheckReport {
    let mut report = new_report(kind.to_string(), ACTIVATION_TOLERANCE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = ACTIVATION_RANGE;
    while report.checked < points {
        let x: f64 = rng.random_range(lo..hi);
        if near_kink(&kind, x) {
            report.skipped += 1;
            continue;
        }
        let probe = Tensor::scalar(x);
        let numeric = finite_difference_gradient(|t| kind.forward(t.data()[0]), &probe, ACTIVATION_STEP).data()[0];
        let err = relative_error(derivative(x), numeric, ACTIVATION_FLOOR);
        report.record(err, || format!("x = {x}"));
    }
    report
}

pub fn check_activation(kind: ActivationKind, points: usize, seed: u64) -> CheckReport {
    check_activation_with(kind, |x| kind.derivative(x), points, seed)
}

/// The kinds and alphas exercised by the activation suite.
pub fn activation_suite(alphas: &[f64]) -> Vec<ActivationKind> {
    let mut kinds = vec![ActivationKind::Relu, ActivationKind::Tanh];
    for &alpha in alphas {
        kinds.extend([
            ActivationKind::LeakyRelu { alpha },
            ActivationKind::AbsLeakyRelu { alpha },
            ActivationKind::PlTanh { alpha },
        ]);
    }
    kinds
}

/// Moves every trainable value off its initial value so zero biases and unit
/// scales do not hide mistakes.
fn jitter(params: &mut ModelParams<f64>, rng: &mut ChaCha8Rng) {
    for layer in &mut params.layers {
        match layer {
            LayerParams::Conv { bias, .. } | LayerParams::Dense { bias, .. } => {
                bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
            }
            LayerParams::BatchNorm { gamma, beta, .. } => {
                gamma.data_mut().iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
                beta.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
            }
            LayerParams::None => {}
        }
    }
}

/// A toy network, its parameters and a fixed batch.
pub struct NetworkFixture {
    pub spec: ModelSpec,
    pub params: ModelParams<f64>,
    pub input: Tensor<f64>,
    pub targets: Tensor<f64>,
    dropout_seed: u64,
}

impl NetworkFixture {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = init_params::<f64>(&spec, seed)?;
        jitter(&mut params, &mut rng);
        let [h, w, c] = spec.input_shape;
        let input = Tensor::from_fn(vec![NETWORK_BATCH, h, w, c], |_| rng.random_range(0.0..1.0));
        let labels: Vec<usize> = (0..NETWORK_BATCH).map(|_| rng.random_range(0..spec.classes)).collect();
        let targets = one_hot(&labels, spec.classes);
        Ok(Self {
            spec,
            params,
            input,
            targets,
            dropout_seed: seed ^ 0x5eed,
        })
    }

    /// Training-mode loss and branch signature. Dropout masks repeat on every
    /// call.
    pub fn loss(&self, params: &ModelParams<f64>) -> Result<(f64, Vec<u64>), ModelError> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let x = tape.constant(self.input.clone());
        let pass = record_forward(&self.spec, params, &mut tape, x, Mode::Train, &mut rng, false)?;
        let loss = tape.softmax_cross_entropy(pass.logits, self.targets.clone())?;
        Ok((tape.value(loss)?.data()[0], tape.branch_signature()))
    }

    /// Tape gradients of [`loss`](Self::loss), in trainable order.
    pub fn gradients(&self) -> Result<Vec<Tensor<f64>>, ModelError> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let x = tape.constant(self.input.clone());
        let pass = record_forward(&self.spec, &self.params, &mut tape, x, Mode::Train, &mut rng, true)?;
        let loss = tape.softmax_cross_entropy(pass.logits, self.targets.clone())?;
        let grads = tape.backward(loss)?;
        Ok(pass
            .params
            .iter()
            .map(|&id| grads.wrt(id))
            .collect::<Result<Vec<_>, _>>()?)
    }
}

/// Whole-network check: every trainable coordinate (or at most
/// `max_per_tensor` evenly spaced ones) is perturbed by +-[`NETWORK_STEP`].
/// Coordinates whose perturbation changes an activation region or a pooling
/// winner are skipped.
pub fn check_network(spec: ModelSpec, seed: u64, max_per_tensor: Option<usize>) -> Result<CheckReport, ModelError> {
    let kinds: Vec<String> = {
        let mut k: Vec<String> = spec.activations().map(|a| a.to_string()).collect();
        k.dedup();
        k
    };
    let name = format!("{} [{}]", spec.name, kinds.join(", "));
    let fixture = NetworkFixture::new(spec, seed)?;
    let analytic = fixture.gradients()?;
    let (_, baseline) = fixture.loss(&fixture.params)?;
    let mut report = new_report(name, NETWORK_TOLERANCE);
    let mut probe = fixture.params.clone();
    for (t, grad) in analytic.iter().enumerate() {
        let len = grad.len();
        let stride = max_per_tensor.map_or(1, |m| len.div_ceil(m.max(1)));
        for i in (0..len).step_by(stride) {
            let original = probe.trainable()[t].data()[i];
            let mut eval = |value: f64| -> Result<(f64, Vec<u64>), ModelError> {
                probe.trainable_mut()[t].data_mut()[i] = value;
                fixture.loss(&probe)
            };
            let (plus, sig_plus) = eval(original + NETWORK_STEP)?;
            let (minus, sig_minus) = eval(original - NETWORK_STEP)?;
            eval(original)?;
            if sig_plus != baseline || sig_minus != baseline {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * NETWORK_STEP);
            let err = relative_error(grad.data()[i], numeric, NETWORK_FLOOR);
            report.record(err, || format!("tensor {t} index {i}"));
        }
    }
    Ok(report)
}

/// Toy-size check of one architecture with one activation.
pub fn check_architecture(
    arch: Architecture,
    kind: ActivationKind,
    seed: u64,
    max_per_tensor: Option<usize>,
) -> Result<CheckReport, ModelError> {
    check_network(arch.toy(kind), seed, max_per_tensor)
}
