//! Define-by-run reverse-mode differentiation over tensor kernels.
//!
//! Every operation appends a node holding its forward value plus whatever
//! context its backward pass needs (pool argmaxes, dropout masks, batch-norm
//! statistics). [`Tape::backward`] walks the nodes once in reverse, summing
//! gradients at fan-out.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use thiserror::Error;

use crate::activations::{activation_backward_from_output, apply_activation, ActivationError, ActivationKind};
use crate::tensor::{
    batchnorm_backward, batchnorm_infer, batchnorm_train, conv2d, conv2d_backward, dense,
    dense_backward, dropout, dropout_backward, global_avg_pool, global_avg_pool_backward,
    maxpool2d, maxpool2d_backward, softmax, softmax_backward, BatchNormCache, Mode, Padding, Real,
    RunningStats, Tensor, TensorError,
};

/// Probabilities are clamped to this floor before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TapeError {
    #[error("node {0:?} was not recorded on this tape")]
    ForeignNode(NodeId),
    #[error("backward needs a single-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Activation(#[from] ActivationError),
}

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

impl NodeId {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        padding: Padding,
    },
    MaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    Dense {
        input: usize,
        weights: usize,
        bias: usize,
    },
    Activation {
        input: usize,
        kind: ActivationKind,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        cache: BatchNormCache<T>,
    },
    Dropout {
        input: usize,
        mask: Tensor<T>,
        rate: f64,
    },
    GlobalAvgPool {
        input: usize,
    },
    Reshape {
        input: usize,
    },
    Softmax {
        input: usize,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        targets: Tensor<T>,
        probs: Tensor<T>,
    },
    CrossEntropy {
        probs: usize,
        targets: Tensor<T>,
    },
    Add {
        lhs: usize,
        rhs: usize,
    },
    Mul {
        lhs: usize,
        rhs: usize,
    },
    Sum {
        input: usize,
    },
    Scale {
        input: usize,
        factor: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
#[derive(Debug)]
pub struct Tape<T: Real = f64> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn resolve(&self, id: NodeId) -> Result<usize, TapeError> {
        if id.tape != self.id || id.index >= self.nodes.len() {
            return Err(TapeError::ForeignNode(id));
        }
        Ok(id.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn grad_any(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>, TapeError> {
        Ok(&self.nodes[self.resolve(id)?].value)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient [`backward`](Self::backward) reports.
    pub fn parameter(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        padding: Padding,
    ) -> Result<NodeId, TapeError> {
        let (input, kernel, bias) = (self.resolve(input)?, self.resolve(kernel)?, self.resolve(bias)?);
        let value = conv2d(
            &self.nodes[input].value,
            &self.nodes[kernel].value,
            &self.nodes[bias].value,
            padding,
        )?;
        let rg = self.grad_any(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            },
            rg,
        ))
    }

    pub fn maxpool2d(&mut self, input: NodeId) -> Result<NodeId, TapeError> {
        let input = self.resolve(input)?;
        let (value, argmax) = maxpool2d(&self.nodes[input].value)?;
        let rg = self.grad_any(&[input]);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    pub fn dense(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId, TapeError> {
        let (input, weights, bias) = (self.resolve(input)?, self.resolve(weights)?, self.resolve(bias)?);
        let value = dense(
            &self.nodes[input].value,
            &self.nodes[weights].value,
            &self.nodes[bias].value,
        )?;
        let rg = self.grad_any(&[input, weights, bias]);
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weights,
                bias,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, input: NodeId, kind: ActivationKind) -> Result<NodeId, TapeError> {
        let input = self.resolve(input)?;
        let value = apply_activation(kind, &self.nodes[input].value)?;
        let rg = self.grad_any(&[input]);
        Ok(self.push(value, Op::Activation { input, kind }, rg))
    }

    /// Batch normalization. Train mode normalizes with batch statistics
    /// (retrieve them with [`batch_statistics`](Self::batch_statistics));
    /// infer mode uses `stats`.
    pub fn batchnorm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: &RunningStats<T>,
        mode: Mode,
        eps: f64,
    ) -> Result<NodeId, TapeError> {
        let (input, gamma, beta) = (self.resolve(input)?, self.resolve(gamma)?, self.resolve(beta)?);
        let (x, g, b) = (
            &self.nodes[input].value,
            &self.nodes[gamma].value,
            &self.nodes[beta].value,
        );
        let (value, cache) = match mode {
            Mode::Train => batchnorm_train(x, g, b, eps)?,
            Mode::Infer => batchnorm_infer(x, g, b, stats, eps)?,
        };
        let rg = self.grad_any(&[input, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                cache,
            },
            rg,
        ))
    }

    /// Per-channel `(mean, variance)` a batch-norm node normalized with.
    pub fn batch_statistics(&self, id: NodeId) -> Result<Option<(&[T], &[T])>, TapeError> {
        let i = self.resolve(id)?;
        Ok(match &self.nodes[i].op {
            Op::BatchNorm { cache, .. } => Some((&cache.batch_mean, &cache.batch_var)),
            _ => None,
        })
    }

    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: NodeId,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<NodeId, TapeError> {
        let input = self.resolve(input)?;
        let (value, mask) = dropout(&self.nodes[input].value, rate, mode, rng)?;
        let rg = self.grad_any(&[input]);
        Ok(self.push(value, Op::Dropout { input, mask, rate }, rg))
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId, TapeError> {
        let input = self.resolve(input)?;
        let value = global_avg_pool(&self.nodes[input].value)?;
        let rg = self.grad_any(&[input]);
        Ok(self.push(value, Op::GlobalAvgPool { input }, rg))
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId, TapeError> {
        let input = self.resolve(input)?;
        let value = self.nodes[input].value.reshape(shape)?;
        let rg = self.grad_any(&[input]);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    /// `[N, ...] -> [N, D]`.
    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId, TapeError> {
        let shape = self.value(input)?.shape();
        let n = shape[0];
        let d = shape.iter().skip(1).product();
        self.reshape(input, vec![n, d])
    }

    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId, TapeError> {
        let input = self.resolve(input)?;
        let value = softmax(&self.nodes[input].value)?;
        let rg = self.grad_any(&[input]);
        Ok(self.push(value, Op::Softmax { input }, rg))
    }

    /// Mean cross-entropy of `softmax(logits)` against `targets`, fused so the
    /// logit gradient is `(p - y) / N`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: Tensor<T>) -> Result<NodeId, TapeError> {
        let logits = self.resolve(logits)?;
        let probs = softmax(&self.nodes[logits].value)?;
        let loss = cross_entropy_value(&probs, &targets)?;
        let rg = self.grad_any(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            },
            rg,
        ))
    }

    /// Mean cross-entropy of probability rows against `targets`.
    pub fn cross_entropy(&mut self, probs: NodeId, targets: Tensor<T>) -> Result<NodeId, TapeError> {
        let probs = self.resolve(probs)?;
        let loss = cross_entropy_value(&self.nodes[probs].value, &targets)?;
        let rg = self.grad_any(&[probs]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { probs, targets }, rg))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId, TapeError> {
        let (lhs, rhs) = (self.resolve(lhs)?, self.resolve(rhs)?);
        let value = self.nodes[lhs]
            .value
            .zip_map(&self.nodes[rhs].value, "add", |a, b| a + b)?;
        let rg = self.grad_any(&[lhs, rhs]);
        Ok(self.push(value, Op::Add { lhs, rhs }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId, TapeError> {
        let (lhs, rhs) = (self.resolve(lhs)?, self.resolve(rhs)?);
        let value = self.nodes[lhs]
            .value
            .zip_map(&self.nodes[rhs].value, "mul", |a, b| a * b)?;
        let rg = self.grad_any(&[lhs, rhs]);
        Ok(self.push(value, Op::Mul { lhs, rhs }, rg))
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId, TapeError> {
        let input = self.resolve(input)?;
        let value = Tensor::scalar(self.nodes[input].value.sum());
        let rg = self.grad_any(&[input]);
        Ok(self.push(value, Op::Sum { input }, rg))
    }

    pub fn scale(&mut self, input: NodeId, factor: T) -> Result<NodeId, TapeError> {
        let input = self.resolve(input)?;
        let value = self.nodes[input].value.map(|x| x * factor);
        let rg = self.grad_any(&[input]);
        Ok(self.push(value, Op::Scale { input, factor }, rg))
    }

    /// Which smooth piece every recorded non-smooth op is on: activation
    /// regions followed by pooling argmaxes, in recording order. Two forward
    /// passes with equal signatures follow the same branches.
    pub fn branch_signature(&self) -> Vec<u64> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Activation { input, kind } => sig.extend(
                    self.nodes[*input]
                        .value
                        .data()
                        .iter()
                        .map(|&x| kind.region(x) as u64),
                ),
                Op::MaxPool { argmax, .. } => sig.extend(argmax.iter().map(|&i| i as u64)),
                _ => {}
            }
        }
        sig
    }

    /// Inputs of every recorded activation, in recording order.
    pub fn activation_inputs(&self) -> impl Iterator<Item = (ActivationKind, &Tensor<T>)> {
        self.nodes.iter().filter_map(move |n| match &n.op {
            Op::Activation { input, kind } => Some((*kind, &self.nodes[*input].value)),
            _ => None,
        })
    }

    /// Gradients of a single-element `loss` with respect to every parameter
    /// leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, TapeError> {
        let loss_idx = self.resolve(loss)?;
        let loss_value = &self.nodes[loss_idx].value;
        if !loss_value.is_scalar() {
            return Err(TapeError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut pending: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss_idx].requires_grad {
            pending[loss_idx] = Some(Tensor::full(loss_value.shape().to_vec(), T::one()));
        }

        for i in (0..=loss_idx).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            let mut send = |target: usize, grad: Tensor<T>| -> Result<(), TapeError> {
                if !self.nodes[target].requires_grad {
                    return Ok(());
                }
                match &mut pending[target] {
                    Some(existing) => existing.add_assign(&grad)?,
                    slot @ None => *slot = Some(grad),
                }
                Ok(())
            };
            match &node.op {
                Op::Leaf => leaves[i] = Some(g),
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    padding,
                } => {
                    let need_input = self.nodes[*input].requires_grad;
                    let grads = conv2d_backward(
                        &self.nodes[*input].value,
                        &self.nodes[*kernel].value,
                        &g,
                        *padding,
                        need_input,
                    )?;
                    if let Some(dx) = grads.input {
                        send(*input, dx)?;
                    }
                    send(*kernel, grads.kernel)?;
                    send(*bias, grads.bias)?;
                }
                Op::MaxPool { input, argmax } => {
                    let dx = maxpool2d_backward(self.nodes[*input].value.shape(), argmax, &g)?;
                    send(*input, dx)?;
                }
                Op::Dense {
                    input,
                    weights,
                    bias,
                } => {
                    let need_input = self.nodes[*input].requires_grad;
                    let grads = dense_backward(
                        &self.nodes[*input].value,
                        &self.nodes[*weights].value,
                        &g,
                        need_input,
                    )?;
                    if let Some(dx) = grads.input {
                        send(*input, dx)?;
                    }
                    send(*weights, grads.weights)?;
                    send(*bias, grads.bias)?;
                }
                Op::Activation { input, kind } => {
                    let dx = activation_backward_from_output(*kind, &self.nodes[*input].value, &node.value, &g)?;
                    send(*input, dx)?;
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    cache,
                } => {
                    let grads = batchnorm_backward(cache, &self.nodes[*gamma].value, &g)?;
                    send(*input, grads.input)?;
                    send(*gamma, grads.gamma)?;
                    send(*beta, grads.beta)?;
                }
                Op::Dropout { input, mask, rate } => {
                    send(*input, dropout_backward(mask, *rate, &g)?)?;
                }
                Op::GlobalAvgPool { input } => {
                    let dx = global_avg_pool_backward(self.nodes[*input].value.shape(), &g)?;
                    send(*input, dx)?;
                }
                Op::Reshape { input } => {
                    send(*input, g.into_reshape(self.nodes[*input].value.shape().to_vec())?)?;
                }
                Op::Softmax { input } => {
                    send(*input, softmax_backward(&node.value, &g)?)?;
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let upstream = g.data()[0];
                    let n = T::from_f64(probs.shape()[0] as f64);
                    let dx = probs.zip_map(targets, "softmax_cross_entropy", |p, y| {
                        (p - y) / n * upstream
                    })?;
                    send(*logits, dx)?;
                }
                Op::CrossEntropy { probs, targets } => {
                    let upstream = g.data()[0];
                    let p = &self.nodes[*probs].value;
                    let n = T::from_f64(p.shape()[0] as f64);
                    let floor = T::from_f64(LOG_FLOOR);
                    let dx = p.zip_map(targets, "cross_entropy", |p, y| {
                        if p > floor {
                            -y / (p * n) * upstream
                        } else {
                            T::zero()
                        }
                    })?;
                    send(*probs, dx)?;
                }
                Op::Add { lhs, rhs } => {
                    send(*lhs, g.clone())?;
                    send(*rhs, g)?;
                }
                Op::Mul { lhs, rhs } => {
                    let (a, b) = (&self.nodes[*lhs].value, &self.nodes[*rhs].value);
                    let da = g.zip_map(b, "mul", |u, b| u * b)?;
                    let db = g.zip_map(a, "mul", |u, a| u * a)?;
                    send(*lhs, da)?;
                    send(*rhs, db)?;
                }
                Op::Sum { input } => {
                    let shape = self.nodes[*input].value.shape().to_vec();
                    send(*input, Tensor::full(shape, g.data()[0]))?;
                }
                Op::Scale { input, factor } => {
                    let f = *factor;
                    send(*input, g.map(|u| u * f))?;
                }
            }
        }

        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads: leaves,
        })
    }
}

/// `-(1/N) * sum(y * log(max(p, floor)))`.
pub(crate) fn cross_entropy_value<T: Real>(
    probs: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<T, TensorError> {
    let (n, _) = probs.dims2("cross_entropy")?;
    if probs.shape() != targets.shape() {
        return Err(TensorError::Dimension {
            op: "cross_entropy",
            detail: format!(
                "probabilities {:?} and targets {:?} differ",
                probs.shape(),
                targets.shape()
            ),
        });
    }
    let floor = T::from_f64(LOG_FLOOR);
    let mut total = 0.0f64;
    for (&p, &y) in probs.data().iter().zip(targets.data()) {
        if y != T::zero() {
            // Written so a NaN probability stays NaN.
            let p = if p < floor { floor } else { p };
            total -= (y * p.ln()).to_f64();
        }
    }
    Ok(T::from_f64(total / n as f64))
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf; `None` if the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        if id.tape != self.tape {
            return None;
        }
        self.grads.get(id.index).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, or zeros shaped like it when the loss does not
    /// depend on it.
    pub fn wrt(&self, id: NodeId) -> Result<Tensor<T>, TapeError> {
        if id.tape != self.tape || id.index >= self.shapes.len() {
            return Err(TapeError::ForeignNode(id));
        }
        Ok(self
            .get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[id.index].clone())))
    }

    /// Moves a leaf gradient out.
    pub fn take(&mut self, id: NodeId) -> Result<Tensor<T>, TapeError> {
        if id.tape != self.tape || id.index >= self.shapes.len() {
            return Err(TapeError::ForeignNode(id));
        }
        Ok(self.grads[id.index]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[id.index].clone())))
    }
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn finite_difference_gradient<T: Real>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    h: T,
) -> Tensor<T> {
    let mut probe = x.clone();
    let two_h = h + h;
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((plus - minus) / two_h);
    }
    Tensor::new(x.shape().to_vec(), grad).expect("same shape as x")
}
