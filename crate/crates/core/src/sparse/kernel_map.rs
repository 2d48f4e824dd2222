use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::coords::{Coord, CoordSet};

/// Per kernel offset, the `(input_row, output_row)` pairs that contribute.
///
/// Offsets are enumerated lexicographically over `(-L..=L)^3`; the weight
/// tensor of a sparse convolution is indexed in the same order. Within an
/// offset, pairs are sorted by output row and every row appears at most once
/// on each side.
#[derive(Debug, Clone)]
pub struct KernelMap {
    kernel_size: usize,
    offsets: Vec<[i32; 3]>,
    pairs: Vec<Vec<(u32, u32)>>,
    identity: Vec<bool>,
    n_in: usize,
    n_out: usize,
}

impl KernelMap {
    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn kernel_volume(&self) -> usize {
        self.offsets.len()
    }

    pub fn offsets(&self) -> &[[i32; 3]] {
        &self.offsets
    }

    pub fn pairs(&self, offset: usize) -> &[(u32, u32)] {
        &self.pairs[offset]
    }

    /// True when the offset maps every row onto itself (stride-1 center tap).
    pub fn is_identity(&self, offset: usize) -> bool {
        self.identity[offset]
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn total_pairs(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }
}

pub fn kernel_offsets(kernel_size: usize) -> Vec<[i32; 3]> {
    let half = (kernel_size / 2) as i32;
    let mut out = Vec::with_capacity(kernel_size.pow(3));
    for i in -half..=half {
        for j in -half..=half {
            for k in -half..=half {
                out.push([i, j, k]);
            }
        }
    }
    out
}

/// Builds the output coordinates and kernel map of a convolution with the
/// given stride and (odd) kernel size over `input`.
///
/// Stride 1 keeps the input coordinates. A larger stride quantizes the input
/// coordinates onto the coarser grid. In both cases an output `o` gathers the
/// input at `o + offset * input_tensor_stride` when it exists.
pub fn build_kernel_map(
    input: &CoordSet,
    stride: usize,
    kernel_size: usize,
) -> Result<(Arc<CoordSet>, KernelMap)> {
    if kernel_size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd, got {kernel_size}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let output = if stride == 1 {
        input.clone()
    } else {
        input.downsample(stride as i32)
    };
    let map = map_between(input, &output, kernel_size);
    Ok((Arc::new(output), map))
}

/// Kernel map between two existing coordinate sets.
pub fn map_between(input: &CoordSet, output: &CoordSet, kernel_size: usize) -> KernelMap {
    let offsets = kernel_offsets(kernel_size);
    let t = input.tensor_stride();
    let pairs: Vec<Vec<(u32, u32)>> = offsets
        .iter()
        .map(|d| {
            let mut list = Vec::new();
            for (o, c) in output.coords().iter().enumerate() {
                let q: Coord = [c[0], c[1] + d[0] * t, c[2] + d[1] * t, c[3] + d[2] * t];
                if let Some(i) = input.row(&q) {
                    list.push((i as u32, o as u32));
                }
            }
            list
        })
        .collect();
    let identity = pairs
        .iter()
        .map(|p| {
            p.len() == input.len()
                && p.len() == output.len()
                && p.iter().all(|&(i, o)| i == o)
        })
        .collect();
    KernelMap {
        kernel_size,
        offsets,
        pairs,
        identity,
        n_in: input.len(),
        n_out: output.len(),
    }
}
