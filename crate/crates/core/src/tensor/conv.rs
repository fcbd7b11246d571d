use serde::{Deserialize, Serialize};

use super::{matmul, Real, Shape4, Tensor, TensorError};

/// Spatial padding mode for stride-1 convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding; output shrinks by `k - 1`.
    Valid,
    /// Zero padding that preserves the spatial size. The extra row/column of an
    /// even kernel goes to the bottom/right.
    Same,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    input: Shape4,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.input.c
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    fn output(&self) -> Shape4 {
        Shape4::new(self.input.n, self.oh, self.ow, self.cout)
    }

    /// Samples unfolded per GEMM call, bounded so the patch matrix stays
    /// near [`COLS_BUDGET`] elements.
    fn group(&self) -> usize {
        (COLS_BUDGET / (self.out_pixels() * self.patch_len()).max(1)).clamp(1, self.input.n.max(1))
    }

    /// Unfolds consecutive samples into stacked patch rows; returns the
    /// number of rows written.
    fn unfold<T: Real>(&self, samples: &[T], in_stride: usize, cols: &mut [T]) -> usize {
        let rows = self.out_pixels() * self.patch_len();
        for (sample, dst) in samples.chunks_exact(in_stride).zip(cols.chunks_exact_mut(rows)) {
            im2col(self, sample, dst);
        }
        samples.len() / in_stride * self.out_pixels()
    }
}

const COLS_BUDGET: usize = 1 << 20;

fn geometry<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    padding: Padding,
) -> Result<Geometry, TensorError> {
    let input_shape = input.dims4("conv2d")?;
    let [kh, kw, cin, cout] = *kernel.shape() else {
        return Err(TensorError::Rank {
            op: "conv2d",
            expected: 4,
            shape: kernel.shape().to_vec(),
        });
    };
    if cin != input_shape.c {
        return Err(TensorError::Dimension {
            op: "conv2d",
            detail: format!(
                "kernel expects {cin} input channels, input {:?} has {}",
                input.shape(),
                input_shape.c
            ),
        });
    }
    let (oh, ow, pad_top, pad_left) = match padding {
        Padding::Valid => {
            if kh > input_shape.h || kw > input_shape.w {
                return Err(TensorError::Dimension {
                    op: "conv2d",
                    detail: format!(
                        "{kh}x{kw} kernel does not fit a {}x{} input without padding",
                        input_shape.h, input_shape.w
                    ),
                });
            }
            (input_shape.h - kh + 1, input_shape.w - kw + 1, 0, 0)
        }
        Padding::Same => (input_shape.h, input_shape.w, (kh - 1) / 2, (kw - 1) / 2),
    };
    Ok(Geometry {
        input: input_shape,
        kh,
        kw,
        cout,
        oh,
        ow,
        pad_top,
        pad_left,
    })
}

/// Output columns `ox` whose input column `ox + dx - pad_left` lies inside the
/// image.
fn valid_columns(g: &Geometry, dx: usize) -> std::ops::Range<usize> {
    let lo = g.pad_left.saturating_sub(dx);
    let hi = (g.input.w + g.pad_left).saturating_sub(dx).min(g.ow);
    lo..hi.max(lo)
}

/// Unfolds one sample into a `(oh*ow) x (kh*kw*cin)` patch matrix whose column
/// order matches the `[kh, kw, cin, cout]` kernel layout.
fn im2col<T: Real>(g: &Geometry, sample: &[T], cols: &mut [T]) {
    let Shape4 { h, w, c: cin, .. } = g.input;
    let patch = g.patch_len();
    for oy in 0..g.oh {
        let rows = &mut cols[oy * g.ow * patch..(oy + 1) * g.ow * patch];
        for dy in 0..g.kh {
            let iy = (oy + dy) as isize - g.pad_top as isize;
            for dx in 0..g.kw {
                let offset = (dy * g.kw + dx) * cin;
                let valid = if iy >= 0 && (iy as usize) < h {
                    valid_columns(g, dx)
                } else {
                    0..0
                };
                for ox in (0..valid.start).chain(valid.end.max(valid.start)..g.ow) {
                    rows[ox * patch + offset..][..cin].fill(T::zero());
                }
                if valid.is_empty() {
                    continue;
                }
                let row_start = iy as usize * w;
                if cin == 1 {
                    let src = &sample[row_start + valid.start + dx - g.pad_left..][..valid.len()];
                    let dst = rows[valid.start * patch + offset..].iter_mut().step_by(patch);
                    for (d, &v) in dst.zip(src) {
                        *d = v;
                    }
                } else {
                    for ox in valid {
                        let src = (row_start + ox + dx - g.pad_left) * cin;
                        rows[ox * patch + offset..][..cin].copy_from_slice(&sample[src..src + cin]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the sample.
fn col2im<T: Real>(g: &Geometry, cols: &[T], sample: &mut [T]) {
    let Shape4 { h, w, c: cin, .. } = g.input;
    let patch = g.patch_len();
    for oy in 0..g.oh {
        let rows = &cols[oy * g.ow * patch..(oy + 1) * g.ow * patch];
        for dy in 0..g.kh {
            let iy = (oy + dy) as isize - g.pad_top as isize;
            if iy < 0 || iy as usize >= h {
                continue;
            }
            let row_start = iy as usize * w;
            for dx in 0..g.kw {
                let offset = (dy * g.kw + dx) * cin;
                if cin == 1 {
                    let valid = valid_columns(g, dx);
                    if valid.is_empty() {
                        continue;
                    }
                    let dst = &mut sample[row_start + valid.start + dx - g.pad_left..][..valid.len()];
                    let src = rows[valid.start * patch + offset..].iter().step_by(patch);
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d += v;
                    }
                } else {
                    for ox in valid_columns(g, dx) {
                        let dst = (row_start + ox + dx - g.pad_left) * cin;
                        let src = &rows[ox * patch + offset..][..cin];
                        for (d, &v) in sample[dst..dst + cin].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 2-D cross-correlation (no kernel flip).
///
/// `input` is `[N, H, W, Cin]`, `kernel` is `[kh, kw, Cin, Cout]`, `bias` is
/// `[Cout]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>, TensorError> {
    let g = geometry(input, kernel, padding)?;
    if bias.shape() != [g.cout] {
        return Err(TensorError::Dimension {
            op: "conv2d",
            detail: format!("bias shape {:?} does not match {} filters", bias.shape(), g.cout),
        });
    }
    let out_shape = g.output();
    let mut out = vec![T::zero(); out_shape.numel()];
    let group = g.group();
    let mut cols = vec![T::zero(); group * g.out_pixels() * g.patch_len()];
    let in_stride = g.input.h * g.input.w * g.input.c;
    let out_stride = g.out_pixels() * g.cout;
    for (samples, dst) in input
        .data()
        .chunks(group * in_stride)
        .zip(out.chunks_mut(group * out_stride))
    {
        let m = g.unfold(samples, in_stride, &mut cols);
        for row in dst.chunks_exact_mut(g.cout) {
            row.copy_from_slice(bias.data());
        }
        matmul(&cols[..m * g.patch_len()], false, kernel.data(), false, dst, m, g.patch_len(), g.cout, true);
    }
    Tensor::new(out_shape.to_vec(), out)
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads<T> {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: Padding,
    need_input_grad: bool,
) -> Result<Conv2dGrads<T>, TensorError> {
    let g = geometry(input, kernel, padding)?;
    if grad_out.shape() != g.output().to_vec().as_slice() {
        return Err(TensorError::Dimension {
            op: "conv2d_backward",
            detail: format!(
                "upstream gradient {:?} does not match output {:?}",
                grad_out.shape(),
                g.output().to_vec()
            ),
        });
    }
    let patch = g.patch_len();
    let pixels = g.out_pixels();
    let in_stride = g.input.h * g.input.w * g.input.c;
    let out_stride = pixels * g.cout;

    let mut d_kernel = vec![T::zero(); kernel.len()];
    let mut d_bias = vec![T::zero(); g.cout];
    let mut d_input = need_input_grad.then(|| vec![T::zero(); input.len()]);
    let group = g.group();
    let mut cols = vec![T::zero(); group * pixels * patch];
    let mut d_cols = vec![T::zero(); if need_input_grad { group * pixels * patch } else { 0 }];

    for (chunk, (samples, upstream)) in input
        .data()
        .chunks(group * in_stride)
        .zip(grad_out.data().chunks(group * out_stride))
        .enumerate()
    {
        let m = g.unfold(samples, in_stride, &mut cols);
        matmul(&cols[..m * patch], true, upstream, false, &mut d_kernel, patch, m, g.cout, true);
        for row in upstream.chunks_exact(g.cout) {
            for (b, &u) in d_bias.iter_mut().zip(row) {
                *b += u;
            }
        }
        if let Some(d_input) = d_input.as_mut() {
            let d_cols = &mut d_cols[..m * patch];
            matmul(upstream, false, kernel.data(), true, d_cols, m, g.cout, patch, false);
            let start = chunk * group * in_stride;
            let dst = &mut d_input[start..start + samples.len()];
            for (sample, rows) in dst.chunks_exact_mut(in_stride).zip(d_cols.chunks_exact(pixels * patch)) {
                col2im(&g, rows, sample);
            }
        }
    }

    Ok(Conv2dGrads {
        input: d_input
            .map(|d| Tensor::new(input.shape().to_vec(), d))
            .transpose()?,
        kernel: Tensor::new(kernel.shape().to_vec(), d_kernel)?,
        bias: Tensor::new(vec![g.cout], d_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    /// Direct six-loop cross-correlation.
    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, padding: Padding) -> Tensor<f64> {
        let s = x.dims4("naive").unwrap();
        let [kh, kw, cin, cout] = *k.shape() else { unreachable!() };
        let (oh, ow, pt, pl) = match padding {
            Padding::Valid => (s.h - kh + 1, s.w - kw + 1, 0isize, 0isize),
            Padding::Same => (s.h, s.w, ((kh - 1) / 2) as isize, ((kw - 1) / 2) as isize),
        };
        let os = Shape4::new(s.n, oh, ow, cout);
        let mut out = Tensor::zeros(os.to_vec());
        for n in 0..s.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..cout {
                        let mut acc = b.data()[co];
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = oy as isize + dy as isize - pt;
                                let ix = ox as isize + dx as isize - pl;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += x.data()[s.index(n, iy as usize, ix as usize, ci)]
                                        * k.data()[((dy * kw + dx) * cin + ci) * cout + co];
                                }
                            }
                        }
                        out.data_mut()[os.index(n, oy, ox, co)] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn one_by_one() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![5.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let b = Tensor::new(vec![1], vec![0.0]).unwrap();
        let y = conv2d(&x, &k, &b, Padding::Valid).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data(), [10.0]);
    }

    #[test]
    fn sum_of_ones() {
        let x = Tensor::full(vec![1, 3, 3, 1], 1.0);
        let k = Tensor::full(vec![3, 3, 1, 1], 1.0);
        let b = Tensor::zeros(vec![1]);
        let y = conv2d(&x, &k, &b, Padding::Valid).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data(), [9.0]);
    }

    #[test]
    fn same_padding_keeps_size_and_zero_pads() {
        let x = Tensor::full(vec![1, 3, 3, 1], 1.0);
        let k = Tensor::full(vec![3, 3, 1, 1], 1.0);
        let b = Tensor::zeros(vec![1]);
        let y = conv2d(&x, &k, &b, Padding::Same).unwrap();
        assert_eq!(y.shape(), [1, 3, 3, 1]);
        assert_eq!(y.data(), [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn matches_naive_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[2, 8, 8, 3], &mut rng);
        let k = random(&[3, 3, 3, 4], &mut rng);
        let b = random(&[4], &mut rng);
        for padding in [Padding::Valid, Padding::Same] {
            let fast = conv2d(&x, &k, &b, padding).unwrap();
            let slow = naive_conv(&x, &k, &b, padding);
            assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-10);
        }
        for _ in 0..50 {
            let n = rng.random_range(1..3);
            let kh = rng.random_range(1..5);
            let kw = rng.random_range(1..5);
            let h = rng.random_range(kh..kh + 6);
            let w = rng.random_range(kw..kw + 6);
            let cin = rng.random_range(1..4);
            let cout = rng.random_range(1..5);
            let x = random(&[n, h, w, cin], &mut rng);
            let k = random(&[kh, kw, cin, cout], &mut rng);
            let b = random(&[cout], &mut rng);
            let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
            let fast = conv2d(&x, &k, &b, padding).unwrap();
            let slow = naive_conv(&x, &k, &b, padding);
            assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-10, "{:?}", x.shape());
        }
    }

    #[test]
    fn grouped_unfolding_matches_per_sample() {
        // 64x64 'same' output with 5x5x4 patches: two samples per group, so
        // five samples split 2 + 2 + 1.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[5, 64, 64, 4], &mut rng);
        let k = random(&[5, 5, 4, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let g = geometry(&x, &k, Padding::Same).unwrap();
        assert_eq!(g.group(), 2);
        let y = conv2d(&x, &k, &b, Padding::Same).unwrap();
        assert!(y.max_abs_diff(&naive_conv(&x, &k, &b, Padding::Same)).unwrap() <= 1e-10);
        let u = random(y.shape(), &mut rng);
        let all = conv2d_backward(&x, &k, &u, Padding::Same, true).unwrap();
        let (xs, us) = (64 * 64 * 4, 64 * 64 * 3);
        let mut dk = Tensor::zeros(k.shape().to_vec());
        for n in 0..5 {
            let xn = Tensor::new(vec![1, 64, 64, 4], x.data()[n * xs..(n + 1) * xs].to_vec()).unwrap();
            let un = Tensor::new(vec![1, 64, 64, 3], u.data()[n * us..(n + 1) * us].to_vec()).unwrap();
            let one = conv2d_backward(&xn, &k, &un, Padding::Same, true).unwrap();
            let dx = one.input.unwrap();
            let got = &all.input.as_ref().unwrap().data()[n * xs..(n + 1) * xs];
            assert!(dx.data().iter().zip(got).all(|(p, q)| (p - q).abs() <= 1e-12));
            dk.add_assign(&one.kernel).unwrap();
        }
        assert!(dk.max_abs_diff(&all.kernel).unwrap() <= 1e-9);
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), u> is linear in x and k, so the gradients must satisfy
        // <dx, x> + <dk, k> + <db, b> == <conv(x), u>.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for padding in [Padding::Valid, Padding::Same] {
            let x = random(&[2, 6, 5, 2], &mut rng);
            let k = random(&[3, 2, 2, 3], &mut rng);
            let b = random(&[3], &mut rng);
            let y = conv2d(&x, &k, &b, padding).unwrap();
            let u = random(y.shape(), &mut rng);
            let g = conv2d_backward(&x, &k, &u, padding, true).unwrap();
            let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum()
            };
            let lhs = dot(&y, &u);
            let dx = g.input.unwrap();
            // x enters bilinearly with k, so <dx,x> == <dk,k> == <y - b, u>.
            let bias_part = dot(&g.bias, &b);
            assert!((dot(&dx, &x) + bias_part - lhs).abs() < 1e-10);
            assert!((dot(&g.kernel, &k) + bias_part - lhs).abs() < 1e-10);
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::<f64>::zeros(vec![1, 4, 4, 2]);
        let k = Tensor::zeros(vec![3, 3, 3, 1]);
        let b = Tensor::zeros(vec![1]);
        let err = conv2d(&x, &k, &b, Padding::Valid).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn oversized_kernel_rejected_for_valid() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 2, 1]);
        let k = Tensor::zeros(vec![3, 3, 1, 1]);
        let b = Tensor::zeros(vec![1]);
        assert!(conv2d(&x, &k, &b, Padding::Valid).is_err());
        assert!(conv2d(&x, &k, &b, Padding::Same).is_ok());
    }
}
