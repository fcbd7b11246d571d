use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Real, Tensor, TensorError};

/// Variance floor added before the square root.
pub const BN_EPSILON: f64 = 1e-3;
/// Weight of the old running statistic in the exponential moving average.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Moving per-channel mean and (biased) variance used at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::full(vec![channels], T::one()),
        }
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T], momentum: f64) {
        let keep = T::from_f64(momentum);
        let take = T::from_f64(1.0 - momentum);
        for (r, &b) in self.mean.data_mut().iter_mut().zip(batch_mean) {
            *r = keep * *r + take * b;
        }
        for (r, &b) in self.var.data_mut().iter_mut().zip(batch_var) {
            *r = keep * *r + take * b;
        }
    }
}

/// Forward context needed by [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub mode: Mode,
    /// `(x - mean) / sqrt(var + eps)` for every element.
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

fn channels<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<usize, TensorError> {
    if input.rank() != 2 && input.rank() != 4 {
        return Err(TensorError::Rank {
            op: "batchnorm",
            expected: 4,
            shape: input.shape().to_vec(),
        });
    }
    let c = *input.shape().last().expect("rank checked");
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::Dimension {
            op: "batchnorm",
            detail: format!(
                "gamma {:?} / beta {:?} do not match {c} channels",
                gamma.shape(),
                beta.shape()
            ),
        });
    }
    Ok(c)
}

fn affine<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let c = mean.len();
    let mut normalized = input.clone();
    let mut out = input.clone();
    for (xh, y) in normalized
        .data_mut()
        .chunks_exact_mut(c)
        .zip(out.data_mut().chunks_exact_mut(c))
    {
        for j in 0..c {
            xh[j] = (xh[j] - mean[j]) * inv_std[j];
            y[j] = xh[j] * gamma.data()[j] + beta.data()[j];
        }
    }
    (out, normalized)
}

/// Normalizes with the statistics of this batch. Channels are the last axis;
/// statistics reduce over every other axis (`N,H,W` for images, `N` for
/// dense activations).
pub fn batchnorm_train<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>), TensorError> {
    let c = channels(input, gamma, beta)?;
    let m = input.len() / c;
    if m == 0 {
        return Err(TensorError::InvalidArgument {
            op: "batchnorm",
            detail: "empty batch".into(),
        });
    }
    let mut sum = vec![0.0f64; c];
    for row in input.data().chunks_exact(c) {
        for (s, &v) in sum.iter_mut().zip(row) {
            *s += v.to_f64();
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / m as f64).collect();
    let mut sq = vec![0.0f64; c];
    for row in input.data().chunks_exact(c) {
        for j in 0..c {
            let d = row[j].to_f64() - mean[j];
            sq[j] += d * d;
        }
    }
    let var: Vec<f64> = sq.iter().map(|s| s / m as f64).collect();
    let inv_std: Vec<T> = var.iter().map(|v| T::from_f64(1.0 / (v + eps).sqrt())).collect();
    let batch_mean: Vec<T> = mean.iter().map(|&v| T::from_f64(v)).collect();
    let (out, normalized) = affine(input, gamma, beta, &batch_mean, &inv_std);
    Ok((
        out,
        BatchNormCache {
            mode: Mode::Train,
            normalized,
            inv_std,
            batch_mean,
            batch_var: var.into_iter().map(T::from_f64).collect(),
        },
    ))
}

/// Normalizes with the supplied running statistics.
pub fn batchnorm_infer<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>), TensorError> {
    let c = channels(input, gamma, beta)?;
    if stats.mean.shape() != [c] || stats.var.shape() != [c] {
        return Err(TensorError::Dimension {
            op: "batchnorm",
            detail: format!("running statistics do not match {c} channels"),
        });
    }
    let eps = T::from_f64(eps);
    let inv_std: Vec<T> = stats.var.data().iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let (out, normalized) = affine(input, gamma, beta, stats.mean.data(), &inv_std);
    Ok((
        out,
        BatchNormCache {
            mode: Mode::Infer,
            normalized,
            inv_std,
            batch_mean: stats.mean.data().to_vec(),
            batch_var: stats.var.data().to_vec(),
        },
    ))
}

/// Batch normalization in either mode; train mode also folds the batch
/// statistics into `stats`.
pub fn batchnorm<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>), TensorError> {
    match mode {
        Mode::Train => {
            let (out, cache) = batchnorm_train(input, gamma, beta, eps)?;
            stats.update(&cache.batch_mean, &cache.batch_var, momentum);
            Ok((out, cache))
        }
        Mode::Infer => batchnorm_infer(input, gamma, beta, stats, eps),
    }
}

pub fn batchnorm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>, TensorError> {
    super::ensure_same_shape("batchnorm_backward", &cache.normalized, grad_out)?;
    let c = cache.inv_std.len();
    let m = grad_out.len() / c;
    let mut d_gamma = vec![T::zero(); c];
    let mut d_beta = vec![T::zero(); c];
    for (g, xh) in grad_out
        .data()
        .chunks_exact(c)
        .zip(cache.normalized.data().chunks_exact(c))
    {
        for j in 0..c {
            d_beta[j] += g[j];
            d_gamma[j] += g[j] * xh[j];
        }
    }
    let mut dx = grad_out.clone();
    match cache.mode {
        Mode::Infer => {
            for row in dx.data_mut().chunks_exact_mut(c) {
                for j in 0..c {
                    row[j] *= gamma.data()[j] * cache.inv_std[j];
                }
            }
        }
        Mode::Train => {
            // dx = gamma * inv_std / m * (m*g - sum(g) - xh * sum(g*xh))
            let mf = T::from_f64(m as f64);
            for (row, xh) in dx
                .data_mut()
                .chunks_exact_mut(c)
                .zip(cache.normalized.data().chunks_exact(c))
            {
                for j in 0..c {
                    let scale = gamma.data()[j] * cache.inv_std[j] / mf;
                    row[j] = scale * (mf * row[j] - d_beta[j] - xh[j] * d_gamma[j]);
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: Tensor::new(vec![c], d_gamma)?,
        beta: Tensor::new(vec![c], d_beta)?,
    })
}

/// Inverted dropout.
///
/// In train mode every element is zeroed with probability `rate` and the
/// survivors are scaled by `1 / (1 - rate)`. Returns the output and the 0/1
/// keep mask. Infer mode is the identity with an all-ones mask.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidArgument {
            op: "dropout",
            detail: format!("rate must lie in [0, 1), got {rate}"),
        });
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), Tensor::full(input.shape().to_vec(), T::one())));
    }
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(input.shape().to_vec(), |_| {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            T::one()
        }
    });
    let out = input.zip_map(&mask, "dropout", |x, k| x * k * scale)?;
    Ok((out, mask))
}

pub fn dropout_backward<T: Real>(
    mask: &Tensor<T>,
    rate: f64,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let scale = T::from_f64(1.0 / (1.0 - rate));
    grad_out.zip_map(mask, "dropout_backward", |g, k| g * k * scale)
}
