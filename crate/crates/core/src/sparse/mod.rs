//! Sparse voxel tensors and generalized 3-D sparse convolution.

pub mod conv;
pub mod coords;
pub mod kernel_map;
pub mod tensor;

use std::sync::Arc;

pub use coords::{Coord, CoordSet};
pub use kernel_map::{build_kernel_map, map_between, KernelMap};
pub use tensor::{voxelize, voxelize_batch, FeatureMode, SparseTensor};

use crate::tape::Var;

/// A sparse tensor whose features live on a tape.
#[derive(Debug, Clone)]
pub struct SparseVar {
    pub coords: Arc<CoordSet>,
    pub feats: Var,
}
