//! 1-D convolution kernels over `[channels, time]` buffers, lowered to GEMM.
//!
//! Neither direction pads implicitly: `conv1d` produces
//! `floor((T - K) / stride) + 1` frames and `conv1d_transpose` produces
//! `(T - 1) * stride + K` samples.

use crate::tensor::{gemm, Layout, Scalar};

pub fn conv1d_out_len(t: usize, kernel: usize, stride: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || t < kernel {
        None
    } else {
        Some((t - kernel) / stride + 1)
    }
}

pub fn conv1d_transpose_out_len(t: usize, kernel: usize, stride: usize) -> usize {
    (t - 1) * stride + kernel
}

/// `cols[(c * k + j) * t_out + t] = x[c, t * stride + j]`.
fn im2col<T: Scalar>(x: &[T], c: usize, t_in: usize, k: usize, stride: usize, t_out: usize) -> Vec<T> {
    let mut cols = vec![T::zero(); c * k * t_out];
    for ci in 0..c {
        let xrow = &x[ci * t_in..(ci + 1) * t_in];
        for j in 0..k {
            let dst = &mut cols[(ci * k + j) * t_out..(ci * k + j + 1) * t_out];
            if stride == 1 {
                dst.copy_from_slice(&xrow[j..j + t_out]);
            } else {
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = xrow[t * stride + j];
                }
            }
        }
    }
    cols
}

/// Scatter-add adjoint of [`im2col`].
fn col2im_add<T: Scalar>(cols: &[T], c: usize, t_in: usize, k: usize, stride: usize, t_out: usize, x: &mut [T]) {
    for ci in 0..c {
        let xrow = &mut x[ci * t_in..(ci + 1) * t_in];
        for j in 0..k {
            let src = &cols[(ci * k + j) * t_out..(ci * k + j + 1) * t_out];
            for (t, &v) in src.iter().enumerate() {
                xrow[t * stride + j] += v;
            }
        }
    }
}

fn add_channel_bias<T: Scalar>(y: &mut [T], bias: &[T], t: usize) {
    for (row, &b) in y.chunks_mut(t).zip(bias) {
        for v in row {
            *v += b;
        }
    }
}

fn channel_sums<T: Scalar>(dy: &[T], c: usize, t: usize) -> Vec<T> {
    (0..c).map(|i| dy[i * t..(i + 1) * t].iter().copied().sum()).collect()
}

/// Cross-correlation. `x: [c_in, t]`, `w: [c_out, c_in, k]` → `[c_out, t_out]`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward<T: Scalar>(
    x: &[T],
    c_in: usize,
    t: usize,
    w: &[T],
    c_out: usize,
    k: usize,
    bias: Option<&[T]>,
    stride: usize,
) -> Vec<T> {
    let t_out = conv1d_out_len(t, k, stride).expect("validated by caller");
    let mut y = vec![T::zero(); c_out * t_out];
    if k == 1 && stride == 1 {
        gemm(c_out, c_in, t_out, w, Layout::N, x, Layout::N, T::zero(), &mut y);
    } else {
        let cols = im2col(x, c_in, t, k, stride, t_out);
        gemm(c_out, c_in * k, t_out, w, Layout::N, &cols, Layout::N, T::zero(), &mut y);
    }
    if let Some(b) = bias {
        add_channel_bias(&mut y, b, t_out);
    }
    y
}

/// Returns `(dx, dw, db)` for [`conv1d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    c_in: usize,
    t: usize,
    w: &[T],
    c_out: usize,
    k: usize,
    stride: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let t_out = conv1d_out_len(t, k, stride).expect("validated by caller");
    let mut dw = vec![T::zero(); c_out * c_in * k];
    let mut dx = vec![T::zero(); c_in * t];
    if k == 1 && stride == 1 {
        gemm(c_out, t_out, c_in, dy, Layout::N, x, Layout::T, T::zero(), &mut dw);
        gemm(c_in, c_out, t_out, w, Layout::T, dy, Layout::N, T::zero(), &mut dx);
    } else {
        let cols = im2col(x, c_in, t, k, stride, t_out);
        gemm(c_out, t_out, c_in * k, dy, Layout::N, &cols, Layout::T, T::zero(), &mut dw);
        let mut dcols = vec![T::zero(); c_in * k * t_out];
        gemm(c_in * k, c_out, t_out, w, Layout::T, dy, Layout::N, T::zero(), &mut dcols);
        col2im_add(&dcols, c_in, t, k, stride, t_out, &mut dx);
    }
    let db = channel_sums(dy, c_out, t_out);
    (dx, dw, db)
}

/// Transposed convolution. `x: [c_in, t]`, `w: [c_in, c_out, k]` →
/// `[c_out, (t - 1) * stride + k]`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_transpose_forward<T: Scalar>(
    x: &[T],
    c_in: usize,
    t: usize,
    w: &[T],
    c_out: usize,
    k: usize,
    bias: Option<&[T]>,
    stride: usize,
) -> Vec<T> {
    let t_out = conv1d_transpose_out_len(t, k, stride);
    let mut z = vec![T::zero(); c_out * k * t];
    gemm(c_out * k, c_in, t, w, Layout::T, x, Layout::N, T::zero(), &mut z);
    let mut y = vec![T::zero(); c_out * t_out];
    col2im_add(&z, c_out, t_out, k, stride, t, &mut y);
    if let Some(b) = bias {
        add_channel_bias(&mut y, b, t_out);
    }
    y
}

/// Returns `(dx, dw, db)` for [`conv1d_transpose_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv1d_transpose_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    c_in: usize,
    t: usize,
    w: &[T],
    c_out: usize,
    k: usize,
    stride: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let t_out = conv1d_transpose_out_len(t, k, stride);
    let dz = im2col(dy, c_out, t_out, k, stride, t);
    let mut dx = vec![T::zero(); c_in * t];
    gemm(c_in, c_out * k, t, w, Layout::N, &dz, Layout::N, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); c_in * c_out * k];
    gemm(c_in, t, c_out * k, x, Layout::N, &dz, Layout::T, T::zero(), &mut dw);
    let db = channel_sums(dy, c_out, t_out);
    (dx, dw, db)
}
