//! Patch-unrolling convolution kernels.
//!
//! All three kernels share one trilinear form `<conv(x, w), gy>`: the
//! transposed convolution is its adjoint in `x`, the weight gradient its
//! adjoint in `w`. Columns for a whole batch are laid out as a single
//! `[C*KH*KW, N*OH*OW]` matrix so each kernel is one GEMM.

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{gemm, Element, MatRef, Tensor};

/// Output length of a strided, padded cross-correlation along one axis.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Invalid("stride must be >= 1".into()));
    }
    if input + 2 * pad < kernel {
        return Err(Error::Invalid(format!(
            "non-positive output size: input {input} + 2*pad {pad} < kernel {kernel}"
        )));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

/// Output length of a transposed convolution along one axis.
pub fn conv_transpose_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Invalid("stride must be >= 1".into()));
    }
    let full = (input - 1) * stride + kernel;
    if full <= 2 * pad {
        return Err(Error::Invalid(format!(
            "non-positive transposed output size for input {input}, kernel {kernel}, stride {stride}, pad {pad}"
        )));
    }
    Ok(full - 2 * pad)
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Dims {
    fn spatial_out(&self) -> usize {
        self.oh * self.ow
    }

    fn cols_width(&self) -> usize {
        self.n * self.spatial_out()
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }
}

fn im2col<T: Element>(x: &[T], d: &Dims) -> Vec<T> {
    let width = d.cols_width();
    let l = d.spatial_out();
    let mut cols = vec![T::zero(); d.patch_len() * width];
    parallel::for_each_chunk_mut(&mut cols, width, |r, row| {
        let kj = r % d.kw;
        let ki = (r / d.kw) % d.kh;
        let c = r / (d.kw * d.kh);
        for n in 0..d.n {
            let plane = &x[(n * d.c + c) * d.h * d.w..][..d.h * d.w];
            let dst = &mut row[n * l..][..l];
            for oh in 0..d.oh {
                let ih = (oh * d.stride + ki) as isize - d.pad as isize;
                if ih < 0 || ih >= d.h as isize {
                    continue;
                }
                let src = &plane[ih as usize * d.w..][..d.w];
                for ow in 0..d.ow {
                    let iw = (ow * d.stride + kj) as isize - d.pad as isize;
                    if iw >= 0 && iw < d.w as isize {
                        dst[oh * d.ow + ow] = src[iw as usize];
                    }
                }
            }
        }
    });
    cols
}

fn col2im<T: Element>(cols: &[T], d: &Dims) -> Vec<T> {
    let width = d.cols_width();
    let l = d.spatial_out();
    let mut x = vec![T::zero(); d.n * d.c * d.h * d.w];
    parallel::for_each_chunk_mut(&mut x, d.h * d.w, |p, plane| {
        let n = p / d.c;
        let c = p % d.c;
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let r = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[r * width + n * l..][..l];
                for oh in 0..d.oh {
                    let ih = (oh * d.stride + ki) as isize - d.pad as isize;
                    if ih < 0 || ih >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * d.w..][..d.w];
                    for ow in 0..d.ow {
                        let iw = (ow * d.stride + kj) as isize - d.pad as isize;
                        if iw >= 0 && iw < d.w as isize {
                            dst[iw as usize] = dst[iw as usize] + src[oh * d.ow + ow];
                        }
                    }
                }
            }
        }
    });
    x
}

/// `[N, O, L]` -> `[O, N*L]`
fn batch_to_channel_major<T: Element>(y: &[T], n: usize, o: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); y.len()];
    for ni in 0..n {
        for oi in 0..o {
            out[oi * n * l + ni * l..][..l].copy_from_slice(&y[(ni * o + oi) * l..][..l]);
        }
    }
    out
}

/// `[O, N*L]` -> `[N, O, L]`
fn channel_to_batch_major<T: Element>(y: &[T], n: usize, o: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); y.len()];
    for oi in 0..o {
        for ni in 0..n {
            out[(ni * o + oi) * l..][..l].copy_from_slice(&y[oi * n * l + ni * l..][..l]);
        }
    }
    out
}

fn expect_rank4<T: Element>(t: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: format!("{what} must be rank 4"),
        }),
    }
}

/// Cross-correlation of `x [N,C,H,W]` with `w [O,C,KH,KW]`.
pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, wd] = expect_rank4(x, "conv2d input")?;
    let [o, ci, kh, kw] = expect_rank4(w, "conv2d weight")?;
    if c != ci {
        return Err(Error::shape("conv2d (channels)", x.shape(), w.shape()));
    }
    let d = Dims {
        n,
        c,
        h,
        w: wd,
        kh,
        kw,
        oh: conv_output_len(h, kh, stride, pad)?,
        ow: conv_output_len(wd, kw, stride, pad)?,
        stride,
        pad,
    };
    let cols = im2col(x.data(), &d);
    let mut yc = vec![T::zero(); o * d.cols_width()];
    gemm(
        MatRef::row_major(w.data(), o, d.patch_len()),
        MatRef::row_major(&cols, d.patch_len(), d.cols_width()),
        &mut yc,
        false,
    );
    let y = channel_to_batch_major(&yc, n, o, d.spatial_out());
    Ok(Tensor::from_parts(vec![n, o, d.oh, d.ow], y))
}

/// Adjoint of [`conv2d_forward`] in its input: maps `y [N,O,OH,OW]` back to
/// `[N,C,H,W]` using the same weight `w [O,C,KH,KW]`.
pub fn conv2d_transpose_forward<T: Element>(
    y: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
) -> Result<Tensor<T>> {
    let [n, o, oh, ow] = expect_rank4(y, "conv2d_transpose input")?;
    let [wo, c, kh, kw] = expect_rank4(w, "conv2d_transpose weight")?;
    if o != wo {
        return Err(Error::shape("conv2d_transpose (channels)", y.shape(), w.shape()));
    }
    let (h, wd) = out_hw;
    if conv_output_len(h, kh, stride, pad)? != oh || conv_output_len(wd, kw, stride, pad)? != ow {
        return Err(Error::Invalid(format!(
            "conv2d_transpose: target {h}x{wd} does not map back to {oh}x{ow}"
        )));
    }
    let d = Dims {
        n,
        c,
        h,
        w: wd,
        kh,
        kw,
        oh,
        ow,
        stride,
        pad,
    };
    let yc = batch_to_channel_major(y.data(), n, o, d.spatial_out());
    let mut cols = vec![T::zero(); d.patch_len() * d.cols_width()];
    gemm(
        MatRef::row_major(w.data(), o, d.patch_len()).t(),
        MatRef::row_major(&yc, o, d.cols_width()),
        &mut cols,
        false,
    );
    Ok(Tensor::from_parts(vec![n, c, h, wd], col2im(&cols, &d)))
}

/// Adjoint of [`conv2d_forward`] in its weight: `sum_n gy_n * cols(x_n)^T`.
pub fn conv2d_weight_grad<T: Element>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    kernel: (usize, usize),
) -> Result<Tensor<T>> {
    let [n, c, h, wd] = expect_rank4(x, "conv2d_weight_grad input")?;
    let [gn, o, oh, ow] = expect_rank4(gy, "conv2d_weight_grad output grad")?;
    let (kh, kw) = kernel;
    if gn != n
        || conv_output_len(h, kh, stride, pad)? != oh
        || conv_output_len(wd, kw, stride, pad)? != ow
    {
        return Err(Error::shape("conv2d_weight_grad", x.shape(), gy.shape()));
    }
    let d = Dims {
        n,
        c,
        h,
        w: wd,
        kh,
        kw,
        oh,
        ow,
        stride,
        pad,
    };
    let cols = im2col(x.data(), &d);
    let gyc = batch_to_channel_major(gy.data(), n, o, d.spatial_out());
    let mut gw = vec![T::zero(); o * d.patch_len()];
    gemm(
        MatRef::row_major(&gyc, o, d.cols_width()),
        MatRef::row_major(&cols, d.patch_len(), d.cols_width()).t(),
        &mut gw,
        false,
    );
    Ok(Tensor::from_parts(vec![o, c, kh, kw], gw))
}
