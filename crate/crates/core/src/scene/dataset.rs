//! On-disk datasets.
//!
//! ```text
//! DIR/dataset.json
//! DIR/example_000000/{manifest.json, scene.p2s-cloud, mono.wav, binaural.wav}
//! ```
//! Audio is stored as 32-bit float WAV.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, WavEncoding};
use crate::binaural::SceneSpec;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::scene::{generate_example, AssetBank, SceneConfig, TrainingExample};
use crate::seed::stream_seed;

pub const DATASET_FILE: &str = "dataset.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENE_FILE: &str = "scene.p2s-cloud";
pub const MONO_FILE: &str = "mono.wav";
pub const BINAURAL_FILE: &str = "binaural.wav";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Seed stream of the split; streams never overlap.
    pub fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    /// Training scenes are augmented; validation and test scenes are not.
    pub fn augments(self) -> bool {
        self == Split::Train
    }

    pub fn example_seed(self, master: u64, index: u64) -> u64 {
        stream_seed(master, self.stream(), index)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub split: Split,
    pub count: usize,
    pub seed: u64,
    pub scene: SceneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleManifest {
    pub seed: u64,
    pub split: Split,
    pub augmentation: bool,
    pub spec: SceneSpec,
    pub scene: String,
    pub mono: String,
    pub binaural: String,
}

pub fn example_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("example_{index:06}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_example(dir: &Path, ex: &TrainingExample, split: Split, augmentation: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ex.scene.save(&dir.join(SCENE_FILE))?;
    ex.mono.write_wav(&dir.join(MONO_FILE), WavEncoding::Float32)?;
    ex.binaural.write_wav(&dir.join(BINAURAL_FILE), WavEncoding::Float32)?;
    let manifest = ExampleManifest {
        seed: ex.seed,
        split,
        augmentation,
        spec: ex.spec.clone(),
        scene: SCENE_FILE.into(),
        mono: MONO_FILE.into(),
        binaural: BINAURAL_FILE.into(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_example(dir: &Path) -> Result<(ExampleManifest, TrainingExample)> {
    let manifest: ExampleManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let scene = PointCloud::load(&dir.join(&manifest.scene))?;
    let mono = AudioClip::read_wav(&dir.join(&manifest.mono))?;
    let binaural = AudioClip::read_wav_at(&dir.join(&manifest.binaural), mono.sample_rate())?;
    if !mono.is_mono() || binaural.num_channels() != 2 || mono.len() != binaural.len() {
        return Err(Error::parse(dir, "expected mono.wav (1 ch) and binaural.wav (2 ch) of equal length"));
    }
    let ex = TrainingExample {
        scene,
        mono,
        binaural,
        spec: manifest.spec.clone(),
        seed: manifest.seed,
    };
    Ok((manifest, ex))
}

/// Generates `info.count` examples of `info.split` into `root`.
///
/// The augmentation flag follows the split, overriding `info.scene.augment`.
pub fn generate_dataset(root: &Path, info: &DatasetInfo) -> Result<DatasetInfo> {
    if info.count == 0 {
        return Err(Error::InvalidArgument("example count must be >= 1".into()));
    }
    let mut info = info.clone();
    info.scene.augment = info.split.augments();
    let bank = AssetBank::procedural(&info.scene)?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    (0..info.count).into_par_iter().try_for_each(|i| {
        let seed = info.split.example_seed(info.seed, i as u64);
        let ex = generate_example(seed, &bank, &info.scene)?;
        write_example(&example_dir(root, i), &ex, info.split, info.scene.augment)
    })?;
    write_json(&root.join(DATASET_FILE), &info)?;
    Ok(info)
}

pub fn load_dataset(root: &Path) -> Result<(DatasetInfo, Vec<TrainingExample>)> {
    let info: DatasetInfo = read_json(&root.join(DATASET_FILE))?;
    let examples = (0..info.count)
        .into_par_iter()
        .map(|i| read_example(&example_dir(root, i)).map(|(_, ex)| ex))
        .collect::<Result<Vec<_>>>()?;
    Ok((info, examples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::Instrument;

    fn info(split: Split) -> DatasetInfo {
        DatasetInfo {
            split,
            count: 3,
            seed: 7,
            scene: SceneConfig {
                classes: vec![Instrument::Cello, Instrument::Saxophone],
                clip_secs: 0.1,
                ..SceneConfig::desk_train()
            },
        }
    }

    #[test]
    fn round_trip_and_manifest_flags() {
        let dir = tempfile::tempdir().unwrap();
        let written = generate_dataset(dir.path(), &info(Split::Test)).unwrap();
        assert!(!written.scene.augment);
        let (back, examples) = load_dataset(dir.path()).unwrap();
        assert_eq!(back, written);
        assert_eq!(examples.len(), 3);
        let (m, ex) = read_example(&example_dir(dir.path(), 1)).unwrap();
        assert!(!m.augmentation);
        assert_eq!(m.split, Split::Test);
        assert_eq!(ex.mono.len(), 800);

        let bank = AssetBank::procedural(&written.scene).unwrap();
        let fresh = generate_example(Split::Test.example_seed(7, 1), &bank, &written.scene).unwrap();
        assert_eq!(fresh.spec, ex.spec);
        assert_eq!(fresh.scene, ex.scene);
        for (a, b) in fresh.binaural.left().iter().zip(ex.binaural.left()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut i = info(Split::Train);
        i.count = 0;
        assert!(generate_dataset(dir.path(), &i).is_err());
    }
}
