//! Training configuration and presets.

use serde::{Deserialize, Serialize};

use crate::audio::AudioNetConfig;
use crate::error::{Error, Result};
use crate::instrument::Instrument;
use crate::scene::SceneConfig;
use crate::sparse::FeatureMode;
use crate::train::loss::LossMode;
use crate::train::model::ModelConfig;
use crate::vision::VisionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small networks, 8 kHz, 1 s clips, 2k iterations: fits a laptop.
    Desk,
    /// Full-width networks, 44.1 kHz, 3 s clips, 120k iterations of 40.
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::InvalidArgument(format!("unknown preset {s:?}"))),
        }
    }
}

/// Training hyperparameters. The audio net's `output_channels`,
/// `cond_dim` and `sample_rate` are derived from `loss_mode`, the vision
/// head and the scene config, so they need not be kept in sync by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub feature_mode: FeatureMode,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Validation runs after every `eval_every` iterations and after the
    /// last one.
    pub eval_every: usize,
    /// Held-out validation scenes.
    pub val_count: usize,
    /// Run on a single thread.
    pub deterministic: bool,
    pub vision: VisionConfig,
    pub audio: AudioNetConfig,
    pub scene: SceneConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            loss_mode: LossMode::Full,
            feature_mode: FeatureMode::Depth,
            iterations: 2000,
            batch_size: 8,
            lr: 1e-4,
            seed: 0,
            eval_every: 100,
            val_count: 64,
            deterministic: false,
            vision: VisionConfig::desk(),
            audio: AudioNetConfig::desk(),
            scene: SceneConfig::desk_train(),
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            iterations: 120_000,
            batch_size: 40,
            eval_every: 1000,
            vision: VisionConfig::paper(),
            audio: AudioNetConfig::paper(),
            scene: SceneConfig {
                sample_rate: 44100,
                clip_secs: 3.0,
                ..SceneConfig::desk_train()
            },
            ..Self::desk()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn with_classes(mut self, classes: &[Instrument]) -> Self {
        self.scene.classes = classes.to_vec();
        self
    }

    /// Writes the derived audio fields into `self.audio`.
    pub fn resolve(&mut self) {
        self.audio = self.model_config().audio;
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vision: self.vision.clone(),
            audio: AudioNetConfig {
                output_channels: self.loss_mode.output_channels(),
                cond_dim: self.vision.head_channels,
                sample_rate: self.scene.sample_rate,
                ..self.audio.clone()
            },
            feature_mode: self.feature_mode,
            loss_mode: self.loss_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 || self.eval_every == 0 || self.val_count == 0 {
            return Err(Error::InvalidArgument(
                "iterations, batch_size, eval_every and val_count must be >= 1".into(),
            ));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.lr)));
        }
        self.scene.validate()?;
        self.model_config().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_audio_fields() {
        let mut c = TrainConfig::desk();
        c.loss_mode = LossMode::Diff;
        let m = c.model_config();
        assert_eq!(m.audio.output_channels, 1);
        assert_eq!(m.audio.cond_dim, 16);
        assert_eq!(TrainConfig::paper().model_config().audio.sample_rate, 44100);
        c.validate().unwrap();
        c.vision.head_channels = 4;
        c.resolve();
        assert_eq!(c.audio.cond_dim, 4);
        assert_eq!(c.audio.output_channels, 1);
    }

    #[test]
    fn partial_json_fills_from_desk() {
        let c: TrainConfig = serde_json::from_str(r#"{"loss_mode":"diff","iterations":5}"#).unwrap();
        assert_eq!(c.iterations, 5);
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.loss_mode, LossMode::Diff);
        let mut bad = c;
        bad.batch_size = 0;
        assert!(bad.validate().is_err());
    }
}
