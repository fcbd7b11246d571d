//! Elementwise activation functions and their derivatives.
//!
//! The Parametric Leaky Tanh is
//!
//! ```text
//! pltanh(x) = max(tanh(x), alpha * |x|)
//! ```
//!
//! For `x < 0` the linear arm always wins (`tanh(x) < 0 <= alpha|x|`), so the
//! slope there is `-alpha`. For `x >= 0` the tanh arm is active up to the
//! crossover `x*` where `tanh(x*) = alpha * x*` (only when `0 < alpha < 1`),
//! after which the slope is `alpha`. Wherever tanh is the active arm the
//! derivative is `sech^2(x)`. At the kinks (`x = 0`, `x = x*`) the derivative
//! is taken from the tanh arm.
//!
//! Baselines: ReLU, Leaky ReLU (`alpha * x` for `x <= 0`), Absolute Leaky ReLU
//! (`alpha * |x|` for `x <= 0`) and tanh.

use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Real, Tensor, TensorError};

/// Slope used when none is given.
pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActivationError {
    #[error("alpha must be a finite non-negative number, got {0}")]
    InvalidAlpha(f64),
    #[error("no positive crossover of tanh(x) = alpha*x for alpha = {0}; it exists only for 0 < alpha < 1")]
    NoCrossover(f64),
    #[error("unknown activation `{0}` (expected relu, lrelu, alrelu, tanh or pltanh)")]
    UnknownName(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which activation a layer applies, with its slope parameter where it has one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    #[serde(rename = "lrelu")]
    LeakyRelu { alpha: f64 },
    #[serde(rename = "alrelu")]
    AbsLeakyRelu { alpha: f64 },
    Tanh,
    #[serde(rename = "pltanh")]
    PlTanh { alpha: f64 },
}

impl ActivationKind {
    /// The five kinds, with `alpha` for the parametric ones.
    pub fn all(alpha: f64) -> [ActivationKind; 5] {
        [
            ActivationKind::Relu,
            ActivationKind::LeakyRelu { alpha },
            ActivationKind::AbsLeakyRelu { alpha },
            ActivationKind::Tanh,
            ActivationKind::PlTanh { alpha },
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu { .. } => "lrelu",
            ActivationKind::AbsLeakyRelu { .. } => "alrelu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::PlTanh { .. } => "pltanh",
        }
    }

    /// Slope parameter, `None` for ReLU and tanh.
    pub fn alpha(&self) -> Option<f64> {
        match *self {
            ActivationKind::LeakyRelu { alpha }
            | ActivationKind::AbsLeakyRelu { alpha }
            | ActivationKind::PlTanh { alpha } => Some(alpha),
            ActivationKind::Relu | ActivationKind::Tanh => None,
        }
    }

    /// Same kind with a different slope; no-op for kinds without one.
    pub fn with_alpha(self, alpha: f64) -> Self {
        match self {
            ActivationKind::LeakyRelu { .. } => ActivationKind::LeakyRelu { alpha },
            ActivationKind::AbsLeakyRelu { .. } => ActivationKind::AbsLeakyRelu { alpha },
            ActivationKind::PlTanh { .. } => ActivationKind::PlTanh { alpha },
            other => other,
        }
    }

    pub fn validate(&self) -> Result<(), ActivationError> {
        match self.alpha() {
            Some(a) if !(a.is_finite() && a >= 0.0) => Err(ActivationError::InvalidAlpha(a)),
            _ => Ok(()),
        }
    }

    pub fn forward<T: Float>(&self, x: T) -> T {
        match *self {
            ActivationKind::Relu => relu_fwd(x),
            ActivationKind::LeakyRelu { alpha } => lrelu_fwd(x, cast(alpha)),
            ActivationKind::AbsLeakyRelu { alpha } => alrelu_fwd(x, cast(alpha)),
            ActivationKind::Tanh => tanh_fwd(x),
            ActivationKind::PlTanh { alpha } => pltanh_fwd(x, cast(alpha)),
        }
    }

    pub fn derivative<T: Float>(&self, x: T) -> T {
        match *self {
            ActivationKind::Relu => relu_bwd(x),
            ActivationKind::LeakyRelu { alpha } => lrelu_bwd(x, cast(alpha)),
            ActivationKind::AbsLeakyRelu { alpha } => alrelu_bwd(x, cast(alpha)),
            ActivationKind::Tanh => tanh_bwd(x),
            ActivationKind::PlTanh { alpha } => pltanh_bwd(x, cast(alpha)),
        }
    }

    /// Points where the function is not differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            ActivationKind::Relu
            | ActivationKind::LeakyRelu { .. }
            | ActivationKind::AbsLeakyRelu { .. } => vec![0.0],
            ActivationKind::Tanh => vec![],
            ActivationKind::PlTanh { alpha } => match solve_crossover(alpha) {
                Ok(c) => vec![0.0, c.x_star],
                Err(_) => vec![0.0],
            },
        }
    }

    /// Index of the piece of the function that is active at `x`. Two inputs
    /// with the same region share one smooth branch.
    pub fn region<T: Float>(&self, x: T) -> u8 {
        match *self {
            ActivationKind::Tanh => 0,
            ActivationKind::PlTanh { alpha } => {
                if x < T::zero() {
                    0
                } else if x.tanh() >= cast::<T>(alpha) * x {
                    1
                } else {
                    2
                }
            }
            _ => u8::from(x > T::zero()),
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.alpha() {
            Some(a) => write!(f, "{}(alpha={a})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

impl FromStr for ActivationKind {
    type Err = ActivationError;

    /// Parses a bare name; parametric kinds get [`DEFAULT_ALPHA`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let alpha = DEFAULT_ALPHA;
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(ActivationKind::Relu),
            "lrelu" | "leaky_relu" | "leakyrelu" => Ok(ActivationKind::LeakyRelu { alpha }),
            "alrelu" => Ok(ActivationKind::AbsLeakyRelu { alpha }),
            "tanh" => Ok(ActivationKind::Tanh),
            "pltanh" => Ok(ActivationKind::PlTanh { alpha }),
            _ => Err(ActivationError::UnknownName(s.to_string())),
        }
    }
}

#[inline]
fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("f64 converts to any float type")
}

#[inline]
pub fn relu_fwd<T: Float>(x: T) -> T {
    x.max(T::zero())
}

/// 1 for `x > 0`, else 0 (including at 0).
#[inline]
pub fn relu_bwd<T: Float>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

#[inline]
pub fn lrelu_fwd<T: Float>(x: T, alpha: T) -> T {
    if x > T::zero() {
        x
    } else {
        alpha * x
    }
}

#[inline]
pub fn lrelu_bwd<T: Float>(x: T, alpha: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        alpha
    }
}

#[inline]
pub fn alrelu_fwd<T: Float>(x: T, alpha: T) -> T {
    if x > T::zero() {
        x
    } else {
        alpha * x.abs()
    }
}

/// 1 for `x > 0`, `-alpha` otherwise (including at 0).
#[inline]
pub fn alrelu_bwd<T: Float>(x: T, alpha: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        -alpha
    }
}

#[inline]
pub fn tanh_fwd<T: Float>(x: T) -> T {
    x.tanh()
}

#[inline]
pub fn tanh_bwd<T: Float>(x: T) -> T {
    let t = x.tanh();
    T::one() - t * t
}

/// `max(tanh(x), alpha * |x|)`. Requires `alpha >= 0`.
#[inline]
pub fn pltanh_fwd<T: Float>(x: T, alpha: T) -> T {
    x.tanh().max(alpha * x.abs())
}

/// Derivative of the active arm of [`pltanh_fwd`]; ties go to the tanh arm.
#[inline]
pub fn pltanh_bwd<T: Float>(x: T, alpha: T) -> T {
    if x < T::zero() {
        return -alpha;
    }
    let t = x.tanh();
    if t >= alpha * x {
        T::one() - t * t
    } else {
        alpha
    }
}

/// Positive root of `tanh(x) = alpha * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossoverPoint {
    pub alpha: f64,
    pub x_star: f64,
}

impl CrossoverPoint {
    /// `|tanh(x*) - alpha * x*|`.
    pub fn residual(&self) -> f64 {
        (self.x_star.tanh() - self.alpha * self.x_star).abs()
    }
}

/// Bisection on `g(x) = tanh(x) - alpha*x` over `(0, 2/alpha]`, run until the
/// bracket stops shrinking in `f64`.
pub fn solve_crossover(alpha: f64) -> Result<CrossoverPoint, ActivationError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ActivationError::NoCrossover(alpha));
    }
    let g = |x: f64| x.tanh() - alpha * x;
    // tanh(x) ~ x near zero, so g > 0 just right of the origin.
    let mut lo = f64::MIN_POSITIVE.sqrt();
    let mut hi = 2.0 / alpha;
    debug_assert!(g(lo) > 0.0 && g(hi) < 0.0);
    loop {
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x_star = if g(lo).abs() <= g(hi).abs() { lo } else { hi };
    Ok(CrossoverPoint { alpha, x_star })
}

/// Applies `kind` elementwise.
pub fn apply_activation<T: Real>(
    kind: ActivationKind,
    input: &Tensor<T>,
) -> Result<Tensor<T>, ActivationError> {
    kind.validate()?;
    Ok(match kind {
        ActivationKind::Relu => input.map(relu_fwd),
        ActivationKind::LeakyRelu { alpha } => {
            let a = T::from_f64(alpha);
            input.map(|x| lrelu_fwd(x, a))
        }
        ActivationKind::AbsLeakyRelu { alpha } => {
            let a = T::from_f64(alpha);
            input.map(|x| alrelu_fwd(x, a))
        }
        ActivationKind::Tanh => {
            let mut out = input.clone();
            T::pltanh_slice(input.data(), -T::one(), out.data_mut());
            out
        }
        ActivationKind::PlTanh { alpha } => {
            let mut out = input.clone();
            T::pltanh_slice(input.data(), T::from_f64(alpha), out.data_mut());
            out
        }
    })
}

/// `grad_out * f'(input)` elementwise.
pub fn activation_backward<T: Real>(
    kind: ActivationKind,
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, ActivationError> {
    kind.validate()?;
    let op = "activation_backward";
    // One loop per kind, so the slope is hoisted and the select vectorizes.
    Ok(match kind {
        ActivationKind::Relu => input.zip_map(grad_out, op, |x, g| relu_bwd(x) * g),
        ActivationKind::LeakyRelu { alpha } => {
            let a = T::from_f64(alpha);
            input.zip_map(grad_out, op, |x, g| lrelu_bwd(x, a) * g)
        }
        ActivationKind::AbsLeakyRelu { alpha } => {
            let a = T::from_f64(alpha);
            input.zip_map(grad_out, op, |x, g| alrelu_bwd(x, a) * g)
        }
        ActivationKind::Tanh => input.zip_map(grad_out, op, |x, g| tanh_bwd(x) * g),
        ActivationKind::PlTanh { alpha } => {
            let a = T::from_f64(alpha);
            input.zip_map(grad_out, op, |x, g| pltanh_bwd(x, a) * g)
        }
    }?)
}

/// Same as [`activation_backward`] for the output of [`apply_activation`],
/// reusing `output` so the tanh arm needs no second evaluation.
pub fn activation_backward_from_output<T: Real>(
    kind: ActivationKind,
    input: &Tensor<T>,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, ActivationError> {
    kind.validate()?;
    if input.shape() != output.shape() || input.shape() != grad_out.shape() {
        return activation_backward(kind, input, grad_out);
    }
    let alpha = match kind {
        ActivationKind::Tanh => -T::one(),
        ActivationKind::PlTanh { alpha } => T::from_f64(alpha),
        _ => return activation_backward(kind, input, grad_out),
    };
    let mut out = grad_out.clone();
    T::pltanh_backward_slice(input.data(), output.data(), alpha, out.data_mut());
    Ok(out)
}
