use super::{matmul, Real, Tensor, TensorError};

/// Affine map `input · weights + bias` for `[N, D] x [D, U] + [U]`.
pub fn dense<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let (n, d) = input.dims2("dense")?;
    let (wd, u) = weights.dims2("dense")?;
    if wd != d {
        return Err(TensorError::Dimension {
            op: "dense",
            detail: format!("input has {d} features, weights expect {wd}"),
        });
    }
    if bias.shape() != [u] {
        return Err(TensorError::Dimension {
            op: "dense",
            detail: format!("bias shape {:?} does not match {u} units", bias.shape()),
        });
    }
    let mut out = Vec::with_capacity(n * u);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    matmul(input.data(), false, weights.data(), false, &mut out, n, d, u, true);
    Tensor::new(vec![n, u], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<DenseGrads<T>, TensorError> {
    let (n, d) = input.dims2("dense_backward")?;
    let (_, u) = weights.dims2("dense_backward")?;
    if grad_out.shape() != [n, u] {
        return Err(TensorError::Dimension {
            op: "dense_backward",
            detail: format!("upstream {:?}, expected [{n}, {u}]", grad_out.shape()),
        });
    }
    let mut dw = vec![T::zero(); d * u];
    matmul(input.data(), true, grad_out.data(), false, &mut dw, d, n, u, false);
    let mut db = vec![T::zero(); u];
    for row in grad_out.data().chunks_exact(u) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    let dx = if need_input_grad {
        let mut dx = vec![T::zero(); n * d];
        matmul(grad_out.data(), false, weights.data(), true, &mut dx, n, u, d, false);
        Some(Tensor::new(vec![n, d], dx)?)
    } else {
        None
    };
    Ok(DenseGrads {
        input: dx,
        weights: Tensor::new(vec![d, u], dw)?,
        bias: Tensor::new(vec![u], db)?,
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (_, k) = input.dims2("softmax")?;
    if k < 2 {
        return Err(TensorError::InvalidArgument {
            op: "softmax",
            detail: format!("need at least 2 classes, got {k}"),
        });
    }
    let mut out = input.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax given its output `probs`.
pub fn softmax_backward<T: Real>(
    probs: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let (_, k) = probs.dims2("softmax_backward")?;
    super::ensure_same_shape("softmax_backward", probs, grad_out)?;
    let mut dx = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks_exact(k).zip(grad_out.data().chunks_exact(k)) {
        let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        dx.extend(p.iter().zip(g).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::new(probs.shape().to_vec(), dx)
}

/// `[N, ...] -> [N, D]`, row-major.
pub fn flatten<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let n = input.shape()[0];
    input.reshape(vec![n, input.len() / n])
}

/// Inverse of [`flatten`].
pub fn unflatten<T: Real>(input: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>, TensorError> {
    input.reshape(shape.to_vec())
}
