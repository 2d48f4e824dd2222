use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// `(batch, x, y, z)` in finest-grid voxel units.
pub type Coord = [i32; 4];

/// A canonical (sorted, unique) coordinate set at a given tensor stride.
///
/// Coordinates stay in finest-grid units; a set produced by a stride-`s`
/// convolution over a stride-`t` set holds multiples of `t * s`.
#[derive(Debug, Clone)]
pub struct CoordSet {
    coords: Vec<Coord>,
    index: HashMap<Coord, usize>,
    tensor_stride: i32,
    batch_size: usize,
}

impl CoordSet {
    /// Sorts and validates `coords`. Duplicates are rejected.
    pub fn new(mut coords: Vec<Coord>, tensor_stride: i32, batch_size: usize) -> Result<Self> {
        if tensor_stride < 1 {
            return Err(Error::InvalidArgument(format!("tensor stride {tensor_stride}")));
        }
        coords.sort_unstable();
        if coords.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate coordinates".into()));
        }
        if let Some(c) = coords.iter().find(|c| c[0] < 0 || c[0] as usize >= batch_size) {
            return Err(Error::InvalidArgument(format!(
                "batch index {} outside 0..{batch_size}",
                c[0]
            )));
        }
        Ok(Self::from_sorted(coords, tensor_stride, batch_size))
    }

    pub(crate) fn from_sorted(coords: Vec<Coord>, tensor_stride: i32, batch_size: usize) -> Self {
        let index = coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        CoordSet {
            coords,
            index,
            tensor_stride,
            batch_size,
        }
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn row(&self, c: &Coord) -> Option<usize> {
        self.index.get(c).copied()
    }

    pub fn tensor_stride(&self) -> i32 {
        self.tensor_stride
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Batch index of every row.
    pub fn batch_of_rows(&self) -> Vec<usize> {
        self.coords.iter().map(|c| c[0] as usize).collect()
    }

    /// Number of rows per batch item.
    pub fn batch_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.batch_size];
        for c in &self.coords {
            counts[c[0] as usize] += 1;
        }
        counts
    }

    /// Unique floor-quantization of every coordinate onto the grid with
    /// spacing `tensor_stride * stride`.
    pub fn downsample(&self, stride: i32) -> CoordSet {
        let step = self.tensor_stride * stride;
        let mut out: Vec<Coord> = self
            .coords
            .iter()
            .map(|c| {
                [
                    c[0],
                    c[1].div_euclid(step) * step,
                    c[2].div_euclid(step) * step,
                    c[3].div_euclid(step) * step,
                ]
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        CoordSet::from_sorted(out, step, self.batch_size)
    }

    pub fn shared(self) -> Arc<CoordSet> {
        Arc::new(self)
    }
}
