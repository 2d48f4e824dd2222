//! Gather-multiply-scatter kernels for generalized sparse convolution.
//!
//! Each kernel offset is an independent GEMM over its gathered rows, so the
//! per-offset products run in parallel. Scatter-accumulation then runs
//! serially in offset order, which fixes the summation order of every output
//! row regardless of thread count.

use rayon::prelude::*;

use crate::sparse::kernel_map::KernelMap;
use crate::tensor::{gemm, Layout, Scalar};

fn gather<T: Scalar>(src: &[T], width: usize, rows: impl Iterator<Item = u32>, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * width);
    for r in rows {
        let r = r as usize;
        out.extend_from_slice(&src[r * width..(r + 1) * width]);
    }
    out
}

fn scatter_add<T: Scalar>(dst: &mut [T], width: usize, rows: impl Iterator<Item = u32>, src: &[T]) {
    for (r, chunk) in rows.zip(src.chunks_exact(width)) {
        let r = r as usize;
        for (d, &s) in dst[r * width..(r + 1) * width].iter_mut().zip(chunk) {
            *d += s;
        }
    }
}

/// `x: [n_in, c_in]`, `w: [kv, c_in, c_out]` → `[n_out, c_out]`.
pub fn forward<T: Scalar>(
    x: &[T],
    c_in: usize,
    w: &[T],
    c_out: usize,
    bias: Option<&[T]>,
    map: &KernelMap,
) -> Vec<T> {
    let kv = map.kernel_volume();
    let partial: Vec<Option<Vec<T>>> = (0..kv)
        .into_par_iter()
        .map(|d| {
            let pairs = map.pairs(d);
            if pairs.is_empty() {
                return None;
            }
            let wd = &w[d * c_in * c_out..(d + 1) * c_in * c_out];
            let p = pairs.len();
            let mut prod = vec![T::zero(); p * c_out];
            if map.is_identity(d) {
                gemm(p, c_in, c_out, x, Layout::N, wd, Layout::N, T::zero(), &mut prod);
            } else {
                let a = gather(x, c_in, pairs.iter().map(|&(i, _)| i), p);
                gemm(p, c_in, c_out, &a, Layout::N, wd, Layout::N, T::zero(), &mut prod);
            }
            Some(prod)
        })
        .collect();

    let mut y = vec![T::zero(); map.n_out() * c_out];
    if let Some(b) = bias {
        for row in y.chunks_exact_mut(c_out) {
            row.copy_from_slice(b);
        }
    }
    for (d, prod) in partial.iter().enumerate() {
        if let Some(prod) = prod {
            scatter_add(&mut y, c_out, map.pairs(d).iter().map(|&(_, o)| o), prod);
        }
    }
    y
}

/// Returns `(dx, dw, db)` for [`forward`].
pub fn backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    c_in: usize,
    w: &[T],
    c_out: usize,
    map: &KernelMap,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let kv = map.kernel_volume();
    let per_offset: Vec<Option<(Vec<T>, Vec<T>)>> = (0..kv)
        .into_par_iter()
        .map(|d| {
            let pairs = map.pairs(d);
            if pairs.is_empty() {
                return None;
            }
            let p = pairs.len();
            let wd = &w[d * c_in * c_out..(d + 1) * c_in * c_out];
            let identity = map.is_identity(d);
            let g_owned;
            let a_owned;
            let (g, a): (&[T], &[T]) = if identity {
                (dy, x)
            } else {
                g_owned = gather(dy, c_out, pairs.iter().map(|&(_, o)| o), p);
                a_owned = gather(x, c_in, pairs.iter().map(|&(i, _)| i), p);
                (&g_owned, &a_owned)
            };
            let mut dx_part = vec![T::zero(); p * c_in];
            gemm(p, c_out, c_in, g, Layout::N, wd, Layout::T, T::zero(), &mut dx_part);
            let mut dw_d = vec![T::zero(); c_in * c_out];
            gemm(c_in, p, c_out, a, Layout::T, g, Layout::N, T::zero(), &mut dw_d);
            Some((dx_part, dw_d))
        })
        .collect();

    let mut dx = vec![T::zero(); map.n_in() * c_in];
    let mut dw = vec![T::zero(); kv * c_in * c_out];
    for (d, part) in per_offset.into_iter().enumerate() {
        if let Some((dx_part, dw_d)) = part {
            scatter_add(&mut dx, c_in, map.pairs(d).iter().map(|&(i, _)| i), &dx_part);
            dw[d * c_in * c_out..(d + 1) * c_in * c_out].copy_from_slice(&dw_d);
        }
    }
    let mut db = vec![T::zero(); c_out];
    for row in dy.chunks_exact(c_out) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    (dx, dw, db)
}
