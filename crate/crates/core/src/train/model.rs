//! The joint vision + audio model, its configuration and persistence.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::audio::{AudioClip, AudioNet, AudioNetConfig};
use crate::checkpoint::Checkpoint;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::layers::{BnMode, Ctx};
use crate::params::ParamStore;
use crate::scene::dataset::read_json;
use crate::sparse::{voxelize_batch, FeatureMode};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};
use crate::train::loss::{recover_channels, LossMode};
use crate::vision::{VisionConfig, VisionNet};

/// Everything needed to rebuild a model from its checkpoint tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vision: VisionConfig,
    pub audio: AudioNetConfig,
    pub feature_mode: FeatureMode,
    pub loss_mode: LossMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.vision.validate()?;
        self.audio.validate()?;
        if self.audio.cond_dim != self.vision.head_channels {
            return Err(Error::InvalidArgument(format!(
                "audio cond_dim {} differs from vision head width {}",
                self.audio.cond_dim, self.vision.head_channels
            )));
        }
        if self.audio.output_channels != self.loss_mode.output_channels() {
            return Err(Error::InvalidArgument(format!(
                "loss mode {:?} needs {} output channels, audio net has {}",
                self.loss_mode,
                self.loss_mode.output_channels(),
                self.audio.output_channels
            )));
        }
        Ok(())
    }
}

/// Path of the JSON file holding the [`ModelConfig`] next to a checkpoint.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub vision: VisionNet,
    pub audio: AudioNet,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters, deterministic in `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let vision = VisionNet::new(&config.vision, &mut params, &mut rng)?;
        let audio = AudioNet::new(&config.audio, &mut params, &mut rng)?;
        Ok(Model {
            config: config.clone(),
            params,
            vision,
            audio,
        })
    }

    pub fn from_checkpoint(config: &ModelConfig, ck: &Checkpoint<T>) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.load_named(&ck.tensors)?;
        Ok(m)
    }

    pub fn checkpoint(&self, adam: Option<&AdamState<T>>) -> Checkpoint<T> {
        Checkpoint::from_model(&self.params, adam)
    }

    /// Writes the checkpoint and its config sidecar.
    pub fn save(&self, path: &Path, adam: Option<&AdamState<T>>) -> Result<()> {
        self.checkpoint(adam).save(path)?;
        let side = config_path(path);
        let mut text = serde_json::to_string_pretty(&self.config).map_err(|source| Error::Json {
            path: side.clone(),
            source,
        })?;
        text.push('\n');
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: ModelConfig = read_json(&config_path(path))?;
        Self::from_checkpoint(&config, &Checkpoint::load(path)?)
    }

    /// Records the forward pass of a batch and returns one
    /// `[output_channels, len]` prediction per example.
    pub fn forward(&self, ctx: &mut Ctx<'_, T>, scenes: &[&PointCloud], monos: &[&[f64]]) -> Result<Vec<Var>> {
        if scenes.len() != monos.len() {
            return Err(Error::Shape(format!("{} scenes for {} mono clips", scenes.len(), monos.len())));
        }
        let voxels = voxelize_batch::<T>(scenes, self.config.vision.voxel_size, self.config.feature_mode)?;
        let h = self.vision.forward(ctx, &voxels)?;
        monos
            .iter()
            .enumerate()
            .map(|(b, mono)| {
                let hb = ctx.tape.row(h, b)?;
                let x: Vec<T> = mono.iter().map(|&v| T::cast(v)).collect();
                self.audio.forward(ctx, &x, hb)
            })
            .collect()
    }

    /// Raw network output for one scene in evaluation mode.
    pub fn infer(&self, scene: &PointCloud, mono: &AudioClip) -> Result<Tensor<T>> {
        self.check_mono(mono)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let mut ctx = Ctx::new(&mut tape, &bound, &self.params, BnMode::Eval);
        let y = self.forward(&mut ctx, &[scene], &[mono.channel(0)])?[0];
        Ok(tape.value(y).clone())
    }

    /// Binaural rendering of `mono` for `scene`. Difference-mode outputs are
    /// turned into two channels with the mono mixture.
    pub fn predict(&self, scene: &PointCloud, mono: &AudioClip) -> Result<AudioClip> {
        let y = self.infer(scene, mono)?;
        let t = mono.len();
        let d: Vec<f64> = y.data().iter().map(|v| v.as_f64()).collect();
        match self.config.loss_mode {
            LossMode::Full => AudioClip::binaural(d[..t].to_vec(), d[t..].to_vec(), mono.sample_rate()),
            LossMode::Diff => recover_channels(mono.channel(0), &d, mono.sample_rate()),
        }
    }

    fn check_mono(&self, mono: &AudioClip) -> Result<()> {
        if !mono.is_mono() {
            return Err(Error::InvalidArgument(format!(
                "expected mono input, got {} channels",
                mono.num_channels()
            )));
        }
        if mono.sample_rate() != self.config.audio.sample_rate {
            return Err(Error::SampleRate {
                expected: self.config.audio.sample_rate,
                actual: mono.sample_rate(),
            });
        }
        Ok(())
    }
}
