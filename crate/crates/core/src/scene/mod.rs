//! Procedural audio-visual training examples: musicians placed around the
//! listener, their recordings rendered binaurally and mixed.

pub mod augment;
pub mod dataset;
pub mod musician;
pub mod tones;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::binaural::{azimuth_radians, mix_scene, HrirSet, SceneSpec, SourceSpec, NUM_AZIMUTHS};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::instrument::Instrument;
use crate::seed::stream_seed;

pub use augment::{augment_cloud, Draws, RngDraws, ZeroDraws};
pub use musician::make_musician_cloud;

pub const MIN_DISTANCE: f64 = 1.0;
pub const MAX_DISTANCE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub classes: Vec<Instrument>,
    pub sample_rate: u32,
    pub clip_secs: f64,
    pub augment: bool,
    /// Seed of the procedural asset bank, shared by all splits.
    pub bank_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::desk_train()
    }
}

impl SceneConfig {
    pub fn desk_train() -> Self {
        SceneConfig {
            classes: Instrument::ALL.to_vec(),
            sample_rate: 8000,
            clip_secs: 1.0,
            augment: true,
            bank_seed: 0,
        }
    }

    /// Evaluation scenes: no augmentation, longer clips.
    pub fn desk_eval() -> Self {
        SceneConfig {
            clip_secs: 2.0,
            augment: false,
            ..Self::desk_train()
        }
    }

    pub fn clip_len(&self) -> usize {
        (self.clip_secs * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidArgument("no instrument classes".into()));
        }
        if self.sample_rate == 0 || self.clip_len() == 0 {
            return Err(Error::InvalidArgument("clip length and sample rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub scene: PointCloud,
    pub mono: AudioClip,
    pub binaural: AudioClip,
    pub spec: SceneSpec,
    pub seed: u64,
}

/// Musician clouds and instrument recordings per class, plus the HRIRs.
#[derive(Debug, Clone)]
pub struct AssetBank {
    pub clouds: BTreeMap<Instrument, Vec<PointCloud>>,
    pub recordings: BTreeMap<Instrument, Vec<AudioClip>>,
    pub hrirs: HrirSet,
}

impl AssetBank {
    pub const CLOUDS_PER_CLASS: usize = 4;
    pub const RECORDINGS_PER_CLASS: usize = 6;
    pub const RECORDING_SECS: f64 = 8.0;

    /// Procedural assets for `config.classes` with the spherical-head HRIRs.
    pub fn procedural(config: &SceneConfig) -> Result<Self> {
        Self::procedural_with(config, HrirSet::spherical_head(config.sample_rate))
    }

    pub fn procedural_with(config: &SceneConfig, hrirs: HrirSet) -> Result<Self> {
        config.validate()?;
        if hrirs.sample_rate() != config.sample_rate {
            return Err(Error::SampleRate {
                expected: config.sample_rate,
                actual: hrirs.sample_rate(),
            });
        }
        let secs = Self::RECORDING_SECS.max(config.clip_secs);
        let mut clouds = BTreeMap::new();
        let mut recordings = BTreeMap::new();
        for &inst in &config.classes {
            let cls = inst.index() as u64;
            let c = (0..Self::CLOUDS_PER_CLASS as u64)
                .map(|i| make_musician_cloud(inst, stream_seed(config.bank_seed, 100 + cls, i)))
                .collect();
            let r = (0..Self::RECORDINGS_PER_CLASS as u64)
                .map(|i| {
                    let x = tones::synthesize(inst, secs, config.sample_rate, stream_seed(config.bank_seed, 200 + cls, i));
                    AudioClip::mono(x, config.sample_rate)
                })
                .collect::<Result<_>>()?;
            clouds.insert(inst, c);
            recordings.insert(inst, r);
        }
        Ok(AssetBank {
            clouds,
            recordings,
            hrirs,
        })
    }
}

/// Places each musician at its azimuth and distance, turned to face the
/// listener at the origin, and merges the clouds.
pub fn compose_scene(musicians: &[PointCloud], spec: &SceneSpec) -> Result<PointCloud> {
    if musicians.len() != spec.sources.len() {
        return Err(Error::Shape(format!(
            "{} musician clouds for {} sources",
            musicians.len(),
            spec.sources.len()
        )));
    }
    let mut scene: Option<PointCloud> = None;
    for (m, s) in musicians.iter().zip(&spec.sources) {
        let phi = azimuth_radians(s.azimuth_index);
        let mut c = m.clone();
        c.rotate_y(phi + PI);
        c.translate([s.distance * phi.sin(), 0.0, s.distance * phi.cos()]);
        match &mut scene {
            None => scene = Some(c),
            Some(acc) => acc.extend(&c),
        }
    }
    scene.ok_or_else(|| Error::Empty("scene without musicians".into()))
}

/// Draws source count, classes (with replacement), distinct azimuths and
/// distances.
pub fn draw_spec(rng: &mut impl Rng, config: &SceneConfig) -> SceneSpec {
    let n = rng.random_range(1..=3usize);
    let classes: Vec<Instrument> = (0..n)
        .map(|_| config.classes[rng.random_range(0..config.classes.len())])
        .collect();
    let azimuths = sample(rng, NUM_AZIMUTHS, n).into_vec();
    let sources = classes
        .into_iter()
        .zip(azimuths)
        .map(|(instrument, azimuth_index)| SourceSpec {
            instrument,
            azimuth_index,
            distance: rng.random_range(MIN_DISTANCE..=MAX_DISTANCE),
        })
        .collect();
    SceneSpec {
        sources,
        clip_secs: config.clip_secs,
    }
}

/// One example, fully determined by `seed`, the bank and the config.
pub fn generate_example(seed: u64, bank: &AssetBank, config: &SceneConfig) -> Result<TrainingExample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = draw_spec(&mut rng, config);
    let t = config.clip_len();
    let mut musicians = Vec::with_capacity(spec.sources.len());
    let mut sources = Vec::with_capacity(spec.sources.len());
    for s in &spec.sources {
        let clouds = bank
            .clouds
            .get(&s.instrument)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| Error::Empty(format!("asset bank has no {} clouds", s.instrument)))?;
        let mut cloud = clouds[rng.random_range(0..clouds.len())].clone();
        if config.augment {
            augment_cloud(&mut cloud, &mut RngDraws(&mut rng));
        }
        musicians.push(cloud);

        let recs = bank
            .recordings
            .get(&s.instrument)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| Error::Empty(format!("asset bank has no {} recordings", s.instrument)))?;
        let rec = &recs[rng.random_range(0..recs.len())];
        if rec.len() < t {
            return Err(Error::InvalidArgument(format!(
                "{} recording has {} samples, clip needs {t}",
                s.instrument,
                rec.len()
            )));
        }
        let onset = rng.random_range(0..=rec.len() - t);
        sources.push(AudioClip::mono(rec.channel(0)[onset..onset + t].to_vec(), rec.sample_rate())?);
    }
    let (mono, binaural) = mix_scene(&sources, &spec, &bank.hrirs)?;
    let scene = compose_scene(&musicians, &spec)?;
    Ok(TrainingExample {
        scene,
        mono,
        binaural,
        spec,
        seed,
    })
}
