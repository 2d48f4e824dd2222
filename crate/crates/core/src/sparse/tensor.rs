use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::sparse::coords::{Coord, CoordSet};
use crate::tensor::{Scalar, Tensor};

/// Which per-point attribute becomes the voxel feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Non-discretized point coordinates.
    Depth,
    /// RGB colors.
    RgbDepth,
}

impl FeatureMode {
    pub fn width(self) -> usize {
        3
    }
}

/// Coordinates plus one feature row per coordinate.
#[derive(Debug, Clone)]
pub struct SparseTensor<T> {
    pub coords: Arc<CoordSet>,
    pub feats: Tensor<T>,
}

impl<T: Scalar> SparseTensor<T> {
    pub fn new(coords: Arc<CoordSet>, feats: Tensor<T>) -> Result<Self> {
        if feats.ndim() != 2 || feats.dim(0) != coords.len() {
            return Err(Error::Shape(format!(
                "{} coordinates with features {:?}",
                coords.len(),
                feats.shape()
            )));
        }
        Ok(SparseTensor { coords, feats })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feats.dim(1)
    }
}

fn floor_coord(p: &[f64; 3], voxel: f64) -> [i32; 3] {
    p.map(|v| (v / voxel).floor() as i32)
}

/// Voxelizes one cloud (batch index 0).
pub fn voxelize<T: Scalar>(cloud: &PointCloud, voxel_size: f64, mode: FeatureMode) -> Result<SparseTensor<T>> {
    voxelize_batch(&[cloud], voxel_size, mode)
}

/// Voxelizes each cloud as its own batch item.
///
/// Coordinates are `floor(p / voxel_size)`. Points sharing a voxel have their
/// features averaged; the summation runs over the features in sorted order,
/// so the result is bit-identical under any permutation of the input points.
pub fn voxelize_batch<T: Scalar>(
    clouds: &[&PointCloud],
    voxel_size: f64,
    mode: FeatureMode,
) -> Result<SparseTensor<T>> {
    if !voxel_size.is_finite() || voxel_size <= 0.0 {
        return Err(Error::InvalidArgument(format!("voxel size {voxel_size}")));
    }
    if clouds.is_empty() {
        return Err(Error::Empty("no clouds to voxelize".into()));
    }
    let mut entries: Vec<(Coord, [f64; 3])> = Vec::new();
    for (b, cloud) in clouds.iter().enumerate() {
        if cloud.is_empty() {
            return Err(Error::Empty(format!("point cloud {b} is empty")));
        }
        let feats: &[[f64; 3]] = match mode {
            FeatureMode::Depth => &cloud.points,
            FeatureMode::RgbDepth => cloud.colors.as_deref().ok_or_else(|| {
                Error::InvalidArgument("rgb-depth features need a colored cloud".into())
            })?,
        };
        for (p, f) in cloud.points.iter().zip(feats) {
            let [x, y, z] = floor_coord(p, voxel_size);
            entries.push(([b as i32, x, y, z], *f));
        }
    }
    entries.sort_unstable_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            a.1.iter()
                .zip(&b.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });

    let mut coords = Vec::new();
    let mut feats: Vec<T> = Vec::new();
    let mut i = 0;
    while i < entries.len() {
        let key = entries[i].0;
        let mut j = i;
        let mut sum = [0.0f64; 3];
        while j < entries.len() && entries[j].0 == key {
            for (s, v) in sum.iter_mut().zip(entries[j].1) {
                *s += v;
            }
            j += 1;
        }
        let n = (j - i) as f64;
        coords.push(key);
        feats.extend(sum.iter().map(|&s| T::cast(s / n)));
        i = j;
    }
    let n = coords.len();
    let cs = CoordSet::from_sorted(coords, 1, clouds.len());
    SparseTensor::new(Arc::new(cs), Tensor::new(vec![n, 3], feats)?)
}
