//! Evaluation of a trained model against the Mono-Mono and Rotated-Visual
//! baselines.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::metrics::{envelope_distance, stft_distance, MethodReport, MetricAccumulator};
use crate::scene::TrainingExample;
use crate::tensor::Scalar;
use crate::train::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: MethodReport,
    #[serde(rename = "mono-mono")]
    pub mono_mono: MethodReport,
    #[serde(rename = "rotated-visual")]
    pub rotated_visual: MethodReport,
    pub clips: usize,
}

/// The mono mixture copied to both channels.
pub fn mono_mono(mono: &AudioClip) -> Result<AudioClip> {
    if !mono.is_mono() {
        return Err(Error::InvalidArgument("mono-mono needs a mono clip".into()));
    }
    let m = mono.channel(0).to_vec();
    AudioClip::binaural(m.clone(), m, mono.sample_rate())
}

/// The scene turned counterclockwise by a quarter turn about the vertical
/// axis.
pub fn rotated_scene(scene: &PointCloud) -> PointCloud {
    let mut r = scene.clone();
    r.rotate_y(FRAC_PI_2);
    r
}

struct ClipScores {
    sources: usize,
    rows: [(f64, f64); 3],
}

fn score(truth: &AudioClip, pred: &AudioClip) -> Result<(f64, f64)> {
    Ok((envelope_distance(truth, pred)?, stft_distance(truth, pred)?))
}

/// Scores the model, Mono-Mono and Rotated-Visual on every example,
/// bucketed by source count.
pub fn evaluate<T: Scalar>(model: &Model<T>, examples: &[TrainingExample]) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set has no examples".into()));
    }
    let scores = examples
        .par_iter()
        .map(|ex| {
            let pred = model.predict(&ex.scene, &ex.mono)?;
            let rotated = model.predict(&rotated_scene(&ex.scene), &ex.mono)?;
            Ok(ClipScores {
                sources: ex.spec.sources.len(),
                rows: [
                    score(&ex.binaural, &pred)?,
                    score(&ex.binaural, &mono_mono(&ex.mono)?)?,
                    score(&ex.binaural, &rotated)?,
                ],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc: [MetricAccumulator; 3] = Default::default();
    for s in &scores {
        for (a, &(env, stft)) in acc.iter_mut().zip(&s.rows) {
            a.add(s.sources, env, stft)?;
        }
    }
    Ok(EvalReport {
        model: acc[0].finish(),
        mono_mono: acc[1].finish(),
        rotated_visual: acc[2].finish(),
        clips: examples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::envelope_distance;
    use crate::scene::{generate_example, AssetBank};
    use crate::train::tests::tiny_config;

    #[test]
    fn mono_mono_misses_a_hard_left_source() {
        let x: Vec<f64> = (0..400).map(|t| (t as f64 * 0.3).sin()).collect();
        let truth = AudioClip::binaural(x.clone(), vec![0.0; 400], 8000).unwrap();
        let mono = AudioClip::mono(x, 8000).unwrap();
        let mm = mono_mono(&mono).unwrap();
        assert_eq!(mm.left(), mm.right());
        assert!(envelope_distance(&truth, &mm).unwrap() > 0.0);
        assert!(mono_mono(&truth).is_err());
    }

    #[test]
    fn quarter_turn_is_counterclockwise() {
        let c = PointCloud::new(vec![[0.0, 1.0, 2.0]], None).unwrap();
        let r = rotated_scene(&c);
        // +z moves to +x (toward the left ear) under a counterclockwise turn
        assert!((r.points[0][0] - 2.0).abs() < 1e-12);
        assert!(r.points[0][2].abs() < 1e-12);
        assert_eq!(r.points[0][1], 1.0);
    }

    #[test]
    fn report_buckets_cover_every_clip() {
        let c = tiny_config();
        let mut scene = c.scene.clone();
        scene.augment = false;
        let bank = AssetBank::procedural(&scene).unwrap();
        let set: Vec<_> = (0..6).map(|i| generate_example(i, &bank, &scene).unwrap()).collect();
        let model = Model::<f64>::new(&c.model_config(), 0).unwrap();
        let r = evaluate(&model, &set).unwrap();
        for m in [&r.model, &r.mono_mono, &r.rotated_visual] {
            assert_eq!(m.counts.iter().sum::<usize>(), 6);
        }
        assert_eq!(r.clips, 6);
        assert_eq!(evaluate(&model, &set).unwrap(), r);
        let json = serde_json::to_value(&r).unwrap();
        for key in ["model", "mono-mono", "rotated-visual"] {
            for metric in ["env", "stft"] {
                let obj = json[key][metric].as_object().unwrap();
                let mut keys: Vec<_> = obj.keys().cloned().collect();
                keys.sort();
                assert_eq!(keys, ["1", "2", "3", "avg"]);
            }
        }
    }
}
