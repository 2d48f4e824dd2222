//! L1 training objectives and channel recovery for difference-mode
//! predictions.

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// What the audio network predicts and is penalized on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Both binaural channels.
    Full,
    /// The left-minus-right difference channel.
    Diff,
}

impl LossMode {
    pub fn output_channels(self) -> usize {
        match self {
            LossMode::Full => 2,
            LossMode::Diff => 1,
        }
    }

    /// Regression target for a ground-truth binaural clip: `[2, T]` or
    /// `[1, T]`.
    pub fn target<T: Scalar>(self, truth: &AudioClip) -> Result<Tensor<T>> {
        check_binaural(truth)?;
        let data: Vec<T> = match self {
            LossMode::Full => truth.left().iter().chain(truth.right()).map(|&v| T::cast(v)).collect(),
            LossMode::Diff => difference(truth).into_iter().map(T::cast).collect(),
        };
        Tensor::new(vec![self.output_channels(), truth.len()], data)
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(LossMode::Full),
            "diff" => Ok(LossMode::Diff),
            _ => Err(Error::InvalidArgument(format!("unknown loss mode {s:?}"))),
        }
    }
}

fn check_binaural(clip: &AudioClip) -> Result<()> {
    if clip.num_channels() != 2 {
        return Err(Error::Shape(format!(
            "expected a binaural clip, got {} channels",
            clip.num_channels()
        )));
    }
    Ok(())
}

/// `L - R` of a binaural clip.
pub fn difference(clip: &AudioClip) -> Vec<f64> {
    clip.left().iter().zip(clip.right()).map(|(l, r)| l - r).collect()
}

/// Mean absolute error over both channels and all samples.
pub fn loss_full(pred: &AudioClip, truth: &AudioClip) -> Result<f64> {
    check_binaural(pred)?;
    check_binaural(truth)?;
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("prediction has {} samples, truth {}", pred.len(), truth.len())));
    }
    let sum: f64 = pred
        .channels()
        .iter()
        .zip(truth.channels())
        .flat_map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).abs()))
        .sum();
    Ok(sum / (2 * truth.len()) as f64)
}

/// Mean of `|(L - R) - pred_diff|`.
pub fn loss_diff(pred_diff: &[f64], truth: &AudioClip) -> Result<f64> {
    check_binaural(truth)?;
    if pred_diff.len() != truth.len() {
        return Err(Error::Shape(format!(
            "difference prediction has {} samples, truth {}",
            pred_diff.len(),
            truth.len()
        )));
    }
    let sum: f64 = difference(truth).iter().zip(pred_diff).map(|(d, p)| (d - p).abs()).sum();
    Ok(sum / truth.len() as f64)
}

/// `L = (m + d) / 2`, `R = (m - d) / 2`.
pub fn recover_channels(mono: &[f64], diff: &[f64], sample_rate: u32) -> Result<AudioClip> {
    if mono.len() != diff.len() {
        return Err(Error::Shape(format!(
            "mono has {} samples, difference {}",
            mono.len(),
            diff.len()
        )));
    }
    let left = mono.iter().zip(diff).map(|(m, d)| (m + d) / 2.0).collect();
    let right = mono.iter().zip(diff).map(|(m, d)| (m - d) / 2.0).collect();
    AudioClip::binaural(left, right, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(l: Vec<f64>, r: Vec<f64>) -> AudioClip {
        AudioClip::binaural(l, r, 8000).unwrap()
    }

    #[test]
    fn full_loss_values() {
        let s = clip(vec![0.1, -0.2, 0.3], vec![0.0, 0.5, -0.5]);
        assert_eq!(loss_full(&s, &s).unwrap(), 0.0);
        let shifted = clip(
            s.left().iter().map(|v| v + 0.5).collect(),
            s.right().iter().map(|v| v + 0.5).collect(),
        );
        assert!((loss_full(&shifted, &s).unwrap() - 0.5).abs() < 1e-15);
        let short = clip(vec![0.0; 2], vec![0.0; 2]);
        assert!(loss_full(&short, &s).is_err());
    }

    #[test]
    fn diff_loss_values() {
        let s = clip(vec![0.4, -0.2, 0.0], vec![0.1, 0.3, 0.0]);
        assert_eq!(loss_diff(&difference(&s), &s).unwrap(), 0.0);
        let centered = clip(vec![0.3, -0.1], vec![0.3, -0.1]);
        assert_eq!(loss_diff(&[0.0, 0.0], &centered).unwrap(), 0.0);
        let hard_left = clip(vec![0.5, -0.25], vec![0.0, 0.0]);
        assert!((loss_diff(&[0.0, 0.0], &hard_left).unwrap() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn recover_values() {
        let r = recover_channels(&[2.0, 4.0], &[0.0, 0.0], 8000).unwrap();
        assert_eq!(r.left(), &[1.0, 2.0]);
        assert_eq!(r.right(), &[1.0, 2.0]);
        let s = clip(vec![0.3, -0.7, 0.125], vec![-0.1, 0.2, 0.5]);
        let m: Vec<f64> = s.left().iter().zip(s.right()).map(|(l, r)| l + r).collect();
        let back = recover_channels(&m, &difference(&s), 8000).unwrap();
        for (a, b) in back.channels().iter().flatten().zip(s.channels().iter().flatten()) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(recover_channels(&[1.0], &[1.0, 2.0], 8000).is_err());
    }

    #[test]
    fn targets_have_mode_widths() {
        let s = clip(vec![1.0, 2.0], vec![0.5, 0.5]);
        let f: Tensor<f64> = LossMode::Full.target(&s).unwrap();
        assert_eq!(f.shape(), &[2, 2]);
        assert_eq!(f.data(), &[1.0, 2.0, 0.5, 0.5]);
        let d: Tensor<f64> = LossMode::Diff.target(&s).unwrap();
        assert_eq!(d.data(), &[0.5, 1.5]);
        assert_eq!("diff".parse::<LossMode>().unwrap(), LossMode::Diff);
    }
}
