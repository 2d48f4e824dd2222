//! Sparse ResNet18 scene encoder.
//!
//! Stem (3x3x3 conv, BN, ReLU), four stages of two residual blocks with
//! stride 2 at the start of stages 2-4, a 3x3x3 head conv to `K` channels and
//! a global max pool per batch item.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{init_weight, BatchNormIds, Ctx};
use crate::params::{ParamId, ParamStore};
use crate::sparse::{build_kernel_map, map_between, CoordSet, KernelMap, SparseTensor, SparseVar};
use crate::tape::Var;
use crate::tensor::Scalar;

pub const INPUT_WIDTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionConfig {
    pub stage_channels: [usize; 4],
    pub head_channels: usize,
    pub voxel_size: f64,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl VisionConfig {
    pub fn desk() -> Self {
        VisionConfig {
            stage_channels: [16, 32, 64, 128],
            head_channels: 16,
            voxel_size: 0.02,
        }
    }

    pub fn paper() -> Self {
        VisionConfig {
            stage_channels: [64, 128, 256, 512],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_channels == 0 || self.stage_channels.contains(&0) {
            return Err(Error::InvalidArgument("vision channel counts must be >= 1".into()));
        }
        if !self.voxel_size.is_finite() || self.voxel_size <= 0.0 {
            return Err(Error::InvalidArgument(format!("voxel size {}", self.voxel_size)));
        }
        Ok(())
    }
}

/// Kernel maps one residual block runs on.
pub struct BlockMaps {
    pub out_coords: Arc<CoordSet>,
    /// 3x3x3 map from the input coordinates to the output coordinates.
    pub entry: Arc<KernelMap>,
    /// 3x3x3 map within the output coordinates.
    pub inner: Arc<KernelMap>,
    /// 1x1x1 map from input to output, used by a projection shortcut.
    pub project: Arc<KernelMap>,
}

impl BlockMaps {
    pub fn new(input: &Arc<CoordSet>, stride: usize) -> Result<Self> {
        if stride == 1 {
            let inner = Arc::new(map_between(input, input, 3));
            return Ok(BlockMaps {
                out_coords: input.clone(),
                entry: inner.clone(),
                inner,
                project: Arc::new(map_between(input, input, 1)),
            });
        }
        let (out, entry) = build_kernel_map(input, stride, 3)?;
        Ok(BlockMaps {
            entry: Arc::new(entry),
            inner: Arc::new(map_between(&out, &out, 3)),
            project: Arc::new(map_between(input, &out, 1)),
            out_coords: out,
        })
    }
}

/// conv-BN-ReLU-conv-BN plus a shortcut, then ReLU.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub conv1: ParamId,
    pub bn1: BatchNormIds,
    pub conv2: ParamId,
    pub bn2: BatchNormIds,
    /// Present when the block changes width or resolution.
    pub projection: Option<(ParamId, BatchNormIds)>,
}

impl ResidualBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let conv1 = init_weight(store, format!("{prefix}.conv1.w"), &[27, c_in, c_out], 27 * c_in, rng);
        let bn1 = BatchNormIds::new(store, &format!("{prefix}.bn1"), c_out);
        let conv2 = init_weight(store, format!("{prefix}.conv2.w"), &[27, c_out, c_out], 27 * c_out, rng);
        let bn2 = BatchNormIds::new(store, &format!("{prefix}.bn2"), c_out);
        let projection = (stride != 1 || c_in != c_out).then(|| {
            let w = init_weight(store, format!("{prefix}.proj.w"), &[1, c_in, c_out], c_in, rng);
            (w, BatchNormIds::new(store, &format!("{prefix}.proj.bn"), c_out))
        });
        ResidualBlock {
            c_in,
            c_out,
            stride,
            conv1,
            bn1,
            conv2,
            bn2,
            projection,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &SparseVar, maps: &BlockMaps) -> Result<SparseVar> {
        let width = ctx.tape.value(x.feats).dim(1);
        if width != self.c_in {
            return Err(Error::Shape(format!(
                "residual block expects width {}, got {width}",
                self.c_in
            )));
        }
        let y = ctx.tape.sparse_conv(x.feats, ctx.var(self.conv1), None, maps.entry.clone())?;
        let y = self.bn1.forward(ctx, y)?;
        let y = ctx.tape.relu(y);
        let y = ctx.tape.sparse_conv(y, ctx.var(self.conv2), None, maps.inner.clone())?;
        let y = self.bn2.forward(ctx, y)?;
        let shortcut = match &self.projection {
            Some((w, bn)) => {
                let s = ctx.tape.sparse_conv(x.feats, ctx.var(*w), None, maps.project.clone())?;
                bn.forward(ctx, s)?
            }
            None => x.feats,
        };
        let sum = ctx.tape.add(y, shortcut)?;
        Ok(SparseVar {
            coords: maps.out_coords.clone(),
            feats: ctx.tape.relu(sum),
        })
    }
}

#[derive(Debug, Clone)]
pub struct VisionNet {
    pub config: VisionConfig,
    stem: ParamId,
    stem_bn: BatchNormIds,
    stages: Vec<[ResidualBlock; 2]>,
    head_w: ParamId,
    head_b: ParamId,
}

impl VisionNet {
    /// Registers freshly initialized parameters under `vision.*`.
    pub fn new<T: Scalar>(config: &VisionConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let ch = config.stage_channels;
        let stem = init_weight(store, "vision.stem.w".into(), &[27, INPUT_WIDTH, ch[0]], 27 * INPUT_WIDTH, rng);
        let stem_bn = BatchNormIds::new(store, "vision.stem.bn", ch[0]);
        let mut stages = Vec::with_capacity(4);
        let mut c_in = ch[0];
        for (s, &c) in ch.iter().enumerate() {
            let stride = if s == 0 { 1 } else { 2 };
            let a = ResidualBlock::new(store, &format!("vision.s{}.b0", s + 1), c_in, c, stride, rng);
            let b = ResidualBlock::new(store, &format!("vision.s{}.b1", s + 1), c, c, 1, rng);
            stages.push([a, b]);
            c_in = c;
        }
        let k = config.head_channels;
        let head_w = init_weight(store, "vision.head.w".into(), &[27, c_in, k], 27 * c_in, rng);
        let head_b = init_weight(store, "vision.head.b".into(), &[k], 27 * c_in, rng);
        Ok(VisionNet {
            config: config.clone(),
            stem,
            stem_bn,
            stages,
            head_w,
            head_b,
        })
    }

    /// Conditioning vectors `[batch_size, K]` for a batched scene tensor.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, scene: &SparseTensor<T>) -> Result<Var> {
        if scene.is_empty() {
            return Err(Error::Empty("scene has no voxels".into()));
        }
        if scene.width() != INPUT_WIDTH {
            return Err(Error::Shape(format!(
                "scene features have width {}, expected {INPUT_WIDTH}",
                scene.width()
            )));
        }
        if let Some(b) = scene.coords.batch_counts().iter().position(|&n| n == 0) {
            return Err(Error::Empty(format!("batch item {b} has no voxels")));
        }
        let feats = ctx.tape.constant(scene.feats.clone());
        let mut coords = scene.coords.clone();
        let maps = BlockMaps::new(&coords, 1)?;
        let y = ctx.tape.sparse_conv(feats, ctx.var(self.stem), None, maps.inner.clone())?;
        let y = self.stem_bn.forward(ctx, y)?;
        let mut x = SparseVar {
            coords: coords.clone(),
            feats: ctx.tape.relu(y),
        };
        let mut same = maps;
        for [first, second] in &self.stages {
            let entry = if first.stride == 1 {
                same
            } else {
                BlockMaps::new(&coords, first.stride)?
            };
            x = first.forward(ctx, &x, &entry)?;
            coords = entry.out_coords.clone();
            same = if first.stride == 1 {
                entry
            } else {
                BlockMaps::new(&coords, 1)?
            };
            x = second.forward(ctx, &x, &same)?;
        }
        let head = ctx
            .tape
            .sparse_conv(x.feats, ctx.var(self.head_w), Some(ctx.var(self.head_b)), same.inner.clone())?;
        ctx.tape
            .max_pool(head, &coords.batch_of_rows(), coords.batch_size())
    }
}
