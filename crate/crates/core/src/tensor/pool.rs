use super::{Real, Shape4, Tensor, TensorError};

/// Window size and stride of [`maxpool2d`].
pub const POOL_SIZE: usize = 2;

/// 2x2, stride-2 max pooling.
///
/// Odd trailing rows/columns are dropped (floor division). Returns the pooled
/// tensor and, per output element, the flat input index of the winning value.
/// Ties go to the first element of the window in row-major order.
pub fn maxpool2d<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    let s = input.dims4("maxpool2d")?;
    let (oh, ow) = (s.h / POOL_SIZE, s.w / POOL_SIZE);
    if oh == 0 || ow == 0 {
        return Err(TensorError::Dimension {
            op: "maxpool2d",
            detail: format!("{}x{} input is smaller than the 2x2 window", s.h, s.w),
        });
    }
    let os = Shape4::new(s.n, oh, ow, s.c);
    let x = input.data();
    let mut out = vec![T::zero(); os.numel()];
    let mut argmax = vec![0usize; os.numel()];
    // Window cells in row-major order, so strict `>` keeps the first winner.
    let row = s.w * s.c;
    let mut o = 0;
    for n in 0..s.n {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = s.index(n, oy * POOL_SIZE, ox * POOL_SIZE, 0);
                let cell = |off: usize| &x[base + off..base + off + s.c];
                let (a, b, c, d) = (cell(0), cell(s.c), cell(row), cell(row + s.c));
                let dst = &mut out[o..o + s.c];
                let arg = &mut argmax[o..o + s.c];
                for k in 0..s.c {
                    let (mut bv, mut bo) = (a[k], 0);
                    if b[k] > bv {
                        (bv, bo) = (b[k], s.c);
                    }
                    if c[k] > bv {
                        (bv, bo) = (c[k], row);
                    }
                    if d[k] > bv {
                        (bv, bo) = (d[k], row + s.c);
                    }
                    dst[k] = bv;
                    arg[k] = base + bo + k;
                }
                o += s.c;
            }
        }
    }
    Ok((Tensor::new(os.to_vec(), out)?, argmax))
}

/// Routes each upstream gradient to the input element recorded in `argmax`.
pub fn maxpool2d_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    if argmax.len() != grad_out.len() {
        return Err(TensorError::Dimension {
            op: "maxpool2d_backward",
            detail: format!(
                "{} argmax entries for {} upstream gradients",
                argmax.len(),
                grad_out.len()
            ),
        });
    }
    let mut grad = Tensor::zeros(input_shape.to_vec());
    let len = grad.len();
    let g = grad.data_mut();
    for (&idx, &u) in argmax.iter().zip(grad_out.data()) {
        if idx >= len {
            return Err(TensorError::InvalidArgument {
                op: "maxpool2d_backward",
                detail: format!("argmax index {idx} outside input of {len} elements"),
            });
        }
        g[idx] += u;
    }
    Ok(grad)
}

/// Per-channel mean over all spatial positions: `[N, H, W, C] -> [N, C]`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let s = input.dims4("global_avg_pool")?;
    let area = s.h * s.w;
    let scale = T::from_f64(1.0 / area as f64);
    let mut out = vec![T::zero(); s.n * s.c];
    for (n, sample) in input.data().chunks_exact(area * s.c).enumerate() {
        let dst = &mut out[n * s.c..(n + 1) * s.c];
        for pixel in sample.chunks_exact(s.c) {
            for (d, &v) in dst.iter_mut().zip(pixel) {
                *d += v;
            }
        }
        for d in dst.iter_mut() {
            *d *= scale;
        }
    }
    Tensor::new(vec![s.n, s.c], out)
}

pub fn global_avg_pool_backward<T: Real>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let [n, h, w, c] = *input_shape else {
        return Err(TensorError::Rank {
            op: "global_avg_pool_backward",
            expected: 4,
            shape: input_shape.to_vec(),
        });
    };
    if grad_out.shape() != [n, c] {
        return Err(TensorError::Dimension {
            op: "global_avg_pool_backward",
            detail: format!("upstream {:?}, expected [{n}, {c}]", grad_out.shape()),
        });
    }
    let scale = T::from_f64(1.0 / (h * w) as f64);
    let mut grad = Vec::with_capacity(n * h * w * c);
    for row in grad_out.data().chunks_exact(c) {
        for _ in 0..h * w {
            grad.extend(row.iter().map(|&u| u * scale));
        }
    }
    Tensor::new(input_shape.to_vec(), grad)
}
