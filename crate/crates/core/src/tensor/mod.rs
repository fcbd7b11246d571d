//! Dense row-major tensors and the CPU kernels the network layers are built from.
//!
//! Every kernel is a pure function of its arguments. Image tensors use the
//! `(N, H, W, C)` layout; dense activations use `(N, D)`.

mod conv;
mod gemm;
mod linear;
mod norm;
mod pool;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conv::{conv2d, conv2d_backward, Conv2dGrads, Padding};
pub use linear::{
    dense, dense_backward, flatten, softmax, softmax_backward, unflatten, DenseGrads,
};
pub use norm::{
    batchnorm, batchnorm_backward, batchnorm_infer, batchnorm_train, dropout, dropout_backward,
    BatchNormCache, BatchNormGrads, Mode, RunningStats, BN_EPSILON, BN_MOMENTUM,
};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, maxpool2d, maxpool2d_backward, POOL_SIZE,
};

pub(crate) use gemm::matmul;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    Length {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {shape:?} has a zero-sized dimension")]
    ZeroDimension { shape: Vec<usize> },
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
}

/// Storage precision tag, used by checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
}

/// Floating-point element type accepted by the kernels (`f32` or `f64`).
pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const DTYPE: DType;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Hyperbolic tangent used by the activation kernels.
    fn tanh_kernel(self) -> Self;

    /// `dst[i] = max(tanh_kernel(src[i]), alpha * |src[i]|)`. A negative
    /// `alpha` drops the linear arm.
    fn pltanh_slice(src: &[Self], alpha: Self, dst: &mut [Self]);

    /// Multiplies `grad` by the derivative of [`pltanh_slice`] given its input
    /// `x` and output `y`.
    fn pltanh_backward_slice(x: &[Self], y: &[Self], alpha: Self, grad: &mut [Self]);

    /// `c = alpha * a * b + beta * c` with explicit strides.
    ///
    /// # Safety
    /// Every index reachable through the given dimensions and strides must lie
    /// inside the corresponding slice. Callers go through [`matmul`], which
    /// checks this.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn tanh_kernel(self) -> Self {
        tanh_f32(self)
    }

    fn pltanh_slice(src: &[Self], alpha: Self, dst: &mut [Self]) {
        pltanh_forward_into(src, alpha, dst)
    }

    fn pltanh_backward_slice(x: &[Self], y: &[Self], alpha: Self, grad: &mut [Self]) {
        pltanh_backward_into(x, y, alpha, grad)
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn tanh_kernel(self) -> Self {
        self.tanh()
    }

    fn pltanh_slice(src: &[Self], alpha: Self, dst: &mut [Self]) {
        pltanh_forward_into(src, alpha, dst)
    }

    fn pltanh_backward_slice(x: &[Self], y: &[Self], alpha: Self, grad: &mut [Self]) {
        pltanh_backward_into(x, y, alpha, grad)
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Rational minimax approximation of tanh, within 4e-7 relative of the exact
/// value. Branch free, so it vectorizes.
#[inline]
pub fn tanh_f32(x: f32) -> f32 {
    const CLAMP: f32 = 7.905_311;
    const A: [f32; 7] = [
        4.893_524_6e-3,
        6.372_619_3e-4,
        1.485_722_4e-5,
        5.122_297e-8,
        -8.604_672e-11,
        2.000_188e-13,
        -2.760_768_5e-16,
    ];
    const B: [f32; 4] = [4.893_525e-3, 2.268_434_6e-3, 1.185_347_1e-4, 1.198_258_4e-6];
    let x = x.clamp(-CLAMP, CLAMP);
    let x2 = x * x;
    let mut p = A[6];
    for &a in A[..6].iter().rev() {
        p = p * x2 + a;
    }
    let mut q = B[3];
    for &b in B[..3].iter().rev() {
        q = q * x2 + b;
    }
    x * p / q
}

// Kept out of the trait's default methods so the loops are compiled, and
// vectorized, inside this crate.
fn pltanh_forward_into<T: Real>(src: &[T], alpha: T, dst: &mut [T]) {
    if alpha < T::zero() {
        for (d, &x) in dst.iter_mut().zip(src) {
            *d = x.tanh_kernel();
        }
    } else {
        for (d, &x) in dst.iter_mut().zip(src) {
            let t = x.tanh_kernel();
            let l = alpha * x.abs();
            *d = if l > t { l } else { t };
        }
    }
}

fn pltanh_backward_into<T: Real>(x: &[T], y: &[T], alpha: T, grad: &mut [T]) {
    let one = T::one();
    if alpha < T::zero() {
        for (g, &y) in grad.iter_mut().zip(y) {
            *g *= one - y * y;
        }
        return;
    }
    // Branch-free over fixed chunks so the common path vectorizes. `y == alpha * x`
    // with `x >= 0` is either the linear arm or an exact tie, which goes to
    // tanh; only chunks containing such points recompute tanh.
    const CHUNK: usize = 64;
    let mut d = [T::zero(); CHUNK];
    for ((g, x), y) in grad.chunks_mut(CHUNK).zip(x.chunks(CHUNK)).zip(y.chunks(CHUNK)) {
        let d = &mut d[..g.len()];
        let mut on_line = false;
        for ((d, &x), &y) in d.iter_mut().zip(x).zip(y) {
            let linear = y == alpha * x;
            on_line |= linear & (x >= T::zero());
            *d = if x < T::zero() {
                -alpha
            } else if linear {
                alpha
            } else {
                one - y * y
            };
        }
        if on_line {
            for ((d, &x), &y) in d.iter_mut().zip(x).zip(y) {
                if x >= T::zero() && y == alpha * x {
                    let t = x.tanh_kernel();
                    if t >= alpha * x {
                        *d = one - t * t;
                    }
                }
            }
        }
        for (g, &d) in g.iter_mut().zip(d.iter()) {
            *g *= d;
        }
    }
}

/// Batch, height, width, channels of an image tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape4 {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self { n, h, w, c }
    }

    pub fn to_vec(self) -> Vec<usize> {
        vec![self.n, self.h, self.w, self.c]
    }

    pub fn numel(self) -> usize {
        self.n * self.h * self.w * self.c
    }

    /// Flat row-major offset of `(n, y, x, c)`.
    #[inline]
    pub fn index(self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + c
    }
}

/// Dense n-dimensional array stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        check_dims(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Length {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// # Panics
    /// If any dimension is zero.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    /// # Panics
    /// If any dimension is zero.
    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        assert!(
            check_dims(&shape).is_ok(),
            "tensor shape {shape:?} has a zero-sized dimension"
        );
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        assert!(
            check_dims(&shape).is_ok(),
            "tensor shape {shape:?} has a zero-sized dimension"
        );
        let len: usize = shape.iter().product();
        Self {
            shape,
            data: (0..len).map(f).collect(),
        }
    }

    /// A single-element tensor of shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The sole element of a single-element tensor.
    pub fn item(&self) -> Option<T> {
        if self.is_scalar() {
            Some(self.data[0])
        } else {
            None
        }
    }

    pub fn dims4(&self, op: &'static str) -> Result<Shape4, TensorError> {
        match *self.shape.as_slice() {
            [n, h, w, c] => Ok(Shape4 { n, h, w, c }),
            _ => Err(TensorError::Rank {
                op,
                expected: 4,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::Rank {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        self.clone().into_reshape(shape)
    }

    pub fn into_reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self, TensorError> {
        ensure_same_shape(op, self, other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<(), TensorError> {
        ensure_same_shape("add_assign", self, other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a - b).abs())
                .fold(T::zero(), T::max),
        )
    }
}

fn check_dims(shape: &[usize]) -> Result<(), TensorError> {
    if shape.iter().any(|&d| d == 0) {
        return Err(TensorError::ZeroDimension {
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn ensure_same_shape<T>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(), TensorError> {
    if a.shape != b.shape {
        return Err(TensorError::Dimension {
            op,
            detail: format!("shapes {:?} and {:?} differ", a.shape, b.shape),
        });
    }
    Ok(())
}
