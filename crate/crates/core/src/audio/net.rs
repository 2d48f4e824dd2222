//! Waveform encoder/decoder with global conditioning.
//!
//! Encoder level: `GLU(W2 * ReLU(W1 * x + V1 h) + V2 h)` with `W1` a strided
//! convolution and `W2` a 1x1 convolution to twice the width.
//! Decoder level: `ReLU(W2 *T GLU(W1 * (enc + dec) + V1 h) + V2 h)` with `W2`
//! a transposed convolution; the outermost level skips the ReLU so the
//! output waveform can be negative. Each `V h` term is folded into the bias
//! of its convolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{init_weight, Ctx};
use crate::params::{ParamId, ParamStore};
use crate::tape::Var;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioNetConfig {
    pub depth: usize,
    pub initial_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub cond_dim: usize,
    pub output_channels: usize,
    pub sample_rate: u32,
}

impl Default for AudioNetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl AudioNetConfig {
    pub fn desk() -> Self {
        AudioNetConfig {
            depth: 6,
            initial_channels: 8,
            kernel: 8,
            stride: 4,
            cond_dim: 16,
            output_channels: 2,
            sample_rate: 8000,
        }
    }

    pub fn paper() -> Self {
        AudioNetConfig {
            initial_channels: 64,
            sample_rate: 44100,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.initial_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument(
                "depth, channels, kernel and stride must be >= 1".into(),
            ));
        }
        if !(1..=2).contains(&self.output_channels) {
            return Err(Error::InvalidArgument(format!(
                "output channels must be 1 or 2, got {}",
                self.output_channels
            )));
        }
        if self.cond_dim == 0 || self.sample_rate == 0 {
            return Err(Error::InvalidArgument("cond_dim and sample_rate must be >= 1".into()));
        }
        Ok(())
    }

    /// Width after encoder level `k` (1-based); level 0 is the mono input.
    pub fn width(&self, k: usize) -> usize {
        if k == 0 {
            1
        } else {
            self.initial_channels << (k - 1)
        }
    }

    /// Smallest length `>= t` that every encoder level divides exactly, so
    /// the decoder reproduces it.
    pub fn valid_length(&self, t: usize) -> usize {
        let up = |mut l: usize| {
            for _ in 0..self.depth {
                l = (l - 1) * self.stride + self.kernel;
            }
            l
        };
        let mut bottom = 1;
        while up(bottom) < t {
            bottom += 1;
        }
        up(bottom)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLevel {
    pub w1: ParamId,
    pub b1: ParamId,
    pub v1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub v2: ParamId,
}

#[derive(Debug, Clone)]
pub struct DecoderLevel {
    pub w1: ParamId,
    pub b1: ParamId,
    pub v1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub v2: ParamId,
    pub relu: bool,
}

#[derive(Debug, Clone)]
pub struct AudioNet {
    pub config: AudioNetConfig,
    /// Index `k - 1` holds level `k`, outermost first.
    pub encoder: Vec<EncoderLevel>,
    /// Index `k - 1` holds the level mirroring encoder level `k`.
    pub decoder: Vec<DecoderLevel>,
}

impl AudioNet {
    /// Registers freshly initialized parameters under `audio.*`.
    pub fn new<T: Scalar>(config: &AudioNetConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (kn, cd) = (config.kernel, config.cond_dim);
        let mut encoder = Vec::with_capacity(config.depth);
        for k in 1..=config.depth {
            let (ci, c) = (config.width(k - 1), config.width(k));
            let p = format!("audio.enc{k}");
            encoder.push(EncoderLevel {
                w1: init_weight(store, format!("{p}.w1"), &[c, ci, kn], ci * kn, rng),
                b1: init_weight(store, format!("{p}.b1"), &[c], ci * kn, rng),
                v1: init_weight(store, format!("{p}.v1"), &[c, cd], cd, rng),
                w2: init_weight(store, format!("{p}.w2"), &[2 * c, c, 1], c, rng),
                b2: init_weight(store, format!("{p}.b2"), &[2 * c], c, rng),
                v2: init_weight(store, format!("{p}.v2"), &[2 * c, cd], cd, rng),
            });
        }
        let mut decoder = Vec::with_capacity(config.depth);
        for k in 1..=config.depth {
            let c = config.width(k);
            let co = if k == 1 { config.output_channels } else { config.width(k - 1) };
            let p = format!("audio.dec{k}");
            decoder.push(DecoderLevel {
                w1: init_weight(store, format!("{p}.w1"), &[2 * c, c, 1], c, rng),
                b1: init_weight(store, format!("{p}.b1"), &[2 * c], c, rng),
                v1: init_weight(store, format!("{p}.v1"), &[2 * c, cd], cd, rng),
                w2: init_weight(store, format!("{p}.w2"), &[c, co, kn], c * kn, rng),
                b2: init_weight(store, format!("{p}.b2"), &[co], c * kn, rng),
                v2: init_weight(store, format!("{p}.v2"), &[co, cd], cd, rng),
                relu: k != 1,
            });
        }
        Ok(AudioNet {
            config: config.clone(),
            encoder,
            decoder,
        })
    }

    fn check_cond<T: Scalar>(&self, ctx: &Ctx<'_, T>, h: Var) -> Result<()> {
        let s = ctx.tape.value(h).shape();
        if s != [self.config.cond_dim] {
            return Err(Error::Shape(format!(
                "conditioning vector {s:?}, expected [{}]",
                self.config.cond_dim
            )));
        }
        Ok(())
    }

    pub fn encoder_block<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var, h: Var, lvl: &EncoderLevel) -> Result<Var> {
        let bias1 = ctx.tape.linear(ctx.var(lvl.v1), h, Some(ctx.var(lvl.b1)))?;
        let y = ctx.tape.conv1d(x, ctx.var(lvl.w1), Some(bias1), self.config.stride)?;
        let y = ctx.tape.relu(y);
        let bias2 = ctx.tape.linear(ctx.var(lvl.v2), h, Some(ctx.var(lvl.b2)))?;
        let y = ctx.tape.conv1d(y, ctx.var(lvl.w2), Some(bias2), 1)?;
        ctx.tape.glu(y)
    }

    pub fn decoder_block<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: Var,
        skip: Var,
        h: Var,
        lvl: &DecoderLevel,
    ) -> Result<Var> {
        let y = ctx.tape.add(x, skip)?;
        let bias1 = ctx.tape.linear(ctx.var(lvl.v1), h, Some(ctx.var(lvl.b1)))?;
        let y = ctx.tape.conv1d(y, ctx.var(lvl.w1), Some(bias1), 1)?;
        let y = ctx.tape.glu(y)?;
        let bias2 = ctx.tape.linear(ctx.var(lvl.v2), h, Some(ctx.var(lvl.b2)))?;
        let y = ctx.tape.conv1d_transpose(y, ctx.var(lvl.w2), Some(bias2), self.config.stride)?;
        Ok(if lvl.relu { ctx.tape.relu(y) } else { y })
    }

    /// Maps a mono waveform to `[output_channels, len]` conditioned on
    /// `h: [cond_dim]`. The input is zero-padded on the right to a valid
    /// length and the output trimmed back.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, mono: &[T], h: Var) -> Result<Var> {
        if mono.is_empty() {
            return Err(Error::Empty("mono input has no samples".into()));
        }
        self.check_cond(ctx, h)?;
        let t = mono.len();
        let padded_len = self.config.valid_length(t);
        let mut padded = mono.to_vec();
        padded.resize(padded_len, T::zero());
        let mut x = ctx.tape.constant(Tensor::new(vec![1, padded_len], padded)?);
        let mut skips = Vec::with_capacity(self.config.depth);
        for lvl in &self.encoder {
            x = self.encoder_block(ctx, x, h, lvl)?;
            skips.push(x);
        }
        for (lvl, &skip) in self.decoder.iter().zip(&skips).rev() {
            x = self.decoder_block(ctx, x, skip, h, lvl)?;
        }
        ctx.tape.resize_time(x, t)
    }
}
