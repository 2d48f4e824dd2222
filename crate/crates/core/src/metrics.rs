//! STFT and envelope distances between binaural clips, with per-source-count
//! averaging.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// One-sided STFT, frames stored one after another.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub bins: usize,
    pub frames: usize,
    pub window_len: usize,
    pub hop: usize,
    pub data: Vec<Complex<f64>>,
}

impl Spectrogram {
    pub fn frame(&self, f: usize) -> &[Complex<f64>] {
        &self.data[f * self.bins..(f + 1) * self.bins]
    }
}

/// Window and hop in samples: 23 ms and 10 ms rounded to the nearest sample.
pub fn stft_params(sample_rate: u32) -> (usize, usize) {
    let fs = sample_rate as f64;
    ((0.023 * fs).round() as usize, (0.010 * fs).round() as usize)
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed frames without centering; a trailing partial frame is
/// dropped.
pub fn stft(x: &[f64], window_len: usize, hop: usize) -> Result<Spectrogram> {
    if window_len == 0 || hop == 0 {
        return Err(Error::InvalidArgument("window and hop must be >= 1".into()));
    }
    if x.len() < window_len {
        return Err(Error::InvalidArgument(format!(
            "signal of {} samples is shorter than the {window_len}-sample window",
            x.len()
        )));
    }
    let frames = (x.len() - window_len) / hop + 1;
    let bins = window_len / 2 + 1;
    let w = hann(window_len);
    let fft = FftPlanner::new().plan_fft_forward(window_len);
    let mut buf = vec![Complex::new(0.0, 0.0); window_len];
    let mut data = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let seg = &x[f * hop..f * hop + window_len];
        for ((b, &s), &wi) in buf.iter_mut().zip(seg).zip(&w) {
            *b = Complex::new(s * wi, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram {
        bins,
        frames,
        window_len,
        hop,
        data,
    })
}

fn check_pair(a: &AudioClip, b: &AudioClip) -> Result<()> {
    if a.num_channels() != b.num_channels() || a.len() != b.len() {
        return Err(Error::Shape(format!(
            "clips {}x{} vs {}x{}",
            a.num_channels(),
            a.len(),
            b.num_channels(),
            b.len()
        )));
    }
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::SampleRate {
            expected: a.sample_rate(),
            actual: b.sample_rate(),
        });
    }
    Ok(())
}

/// Sum over channels of the Frobenius norm of the complex STFT difference.
pub fn stft_distance(truth: &AudioClip, pred: &AudioClip) -> Result<f64> {
    check_pair(truth, pred)?;
    let (win, hop) = stft_params(truth.sample_rate());
    let mut total = 0.0;
    for (a, b) in truth.channels().iter().zip(pred.channels()) {
        let sa = stft(a, win, hop)?;
        let sb = stft(b, win, hop)?;
        let sq: f64 = sa.data.iter().zip(&sb.data).map(|(x, y)| (x - y).norm_sqr()).sum();
        total += sq.sqrt();
    }
    Ok(total)
}

/// Magnitude of the analytic signal, built in the frequency domain.
pub fn envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    // keep DC (and Nyquist for even n), double positive, zero negative frequencies
    for (k, b) in buf.iter_mut().enumerate() {
        let positive = k > 0 && 2 * k < n;
        let edge = k == 0 || 2 * k == n;
        if positive {
            *b *= 2.0;
        } else if !edge {
            *b = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.norm() / n as f64).collect()
}

/// Sum over channels of the L2 norm of the envelope difference.
pub fn envelope_distance(truth: &AudioClip, pred: &AudioClip) -> Result<f64> {
    check_pair(truth, pred)?;
    Ok(truth
        .channels()
        .iter()
        .zip(pred.channels())
        .map(|(a, b)| {
            envelope(a)
                .iter()
                .zip(envelope(b))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum())
}

/// Means per source count and overall. Empty buckets are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buckets {
    #[serde(rename = "1")]
    pub one: Option<f64>,
    #[serde(rename = "2")]
    pub two: Option<f64>,
    #[serde(rename = "3")]
    pub three: Option<f64>,
    pub avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub env: Buckets,
    pub stft: Buckets,
    /// Clips per source count 1, 2, 3.
    pub counts: [usize; 3],
}

/// Running sums of both distances bucketed by source count.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    env: [f64; 3],
    stft: [f64; 3],
    counts: [usize; 3],
}

impl MetricAccumulator {
    pub fn add(&mut self, sources: usize, env: f64, stft: f64) -> Result<()> {
        if !(1..=3).contains(&sources) {
            return Err(Error::InvalidArgument(format!("source count {sources}")));
        }
        let i = sources - 1;
        self.env[i] += env;
        self.stft[i] += stft;
        self.counts[i] += 1;
        Ok(())
    }

    /// Scores `pred` against `truth` and records both distances.
    pub fn score(&mut self, sources: usize, truth: &AudioClip, pred: &AudioClip) -> Result<()> {
        self.add(sources, envelope_distance(truth, pred)?, stft_distance(truth, pred)?)
    }

    pub fn finish(&self) -> MethodReport {
        let total: usize = self.counts.iter().sum();
        let bucket = |sums: &[f64; 3]| {
            let mean = |i: usize| (self.counts[i] > 0).then(|| sums[i] / self.counts[i] as f64);
            Buckets {
                one: mean(0),
                two: mean(1),
                three: mean(2),
                avg: (total > 0).then(|| sums.iter().sum::<f64>() / total as f64),
            }
        };
        MethodReport {
            env: bucket(&self.env),
            stft: bucket(&self.stft),
            counts: self.counts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft_bin(x: &[f64], k: usize) -> Complex<f64> {
        let n = x.len() as f64;
        x.iter()
            .enumerate()
            .map(|(t, &v)| Complex::from_polar(v, -2.0 * PI * k as f64 * t as f64 / n))
            .sum()
    }

    #[test]
    fn desk_params() {
        assert_eq!(stft_params(8000), (184, 80));
        assert_eq!(stft_params(44100), (1014, 441));
    }

    #[test]
    fn dc_goes_to_bin_zero() {
        let s = stft(&vec![1.0; 1000], 184, 80).unwrap();
        assert_eq!(s.frames, (1000 - 184) / 80 + 1);
        for f in 0..s.frames {
            let fr = s.frame(f);
            assert!((fr[0].re - 92.0).abs() < 1e-9);
            // periodic Hann has exactly three nonzero DFT bins: N/2, -N/4, -N/4
            assert!((fr[1].re + 46.0).abs() < 1e-9);
            assert!(fr[2..].iter().all(|c| c.norm() <= 1e-10 * 92.0));
        }
    }

    #[test]
    fn exact_bin_sinusoid_peaks_once() {
        let n = 128;
        let x: Vec<f64> = (0..1024).map(|t| (2.0 * PI * 10.0 * t as f64 / n as f64).sin()).collect();
        let s = stft(&x, n, 64).unwrap();
        for f in 0..s.frames {
            let fr = s.frame(f);
            let (arg, _) = fr
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .unwrap();
            assert_eq!(arg, 10);
        }
    }

    #[test]
    fn matches_naive_dft() {
        let x: Vec<f64> = (0..512).map(|i| ((i * 7919) % 113) as f64 / 56.0 - 1.0).collect();
        let s = stft(&x, 512, 512).unwrap();
        let w = hann(512);
        let xw: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a * b).collect();
        for k in 0..s.bins {
            assert!((s.frame(0)[k] - naive_dft_bin(&xw, k)).norm() < 1e-9);
        }
    }

    #[test]
    fn short_signal_is_an_error() {
        assert!(stft(&[0.0; 10], 16, 4).is_err());
    }

    #[test]
    fn sine_envelope_is_flat() {
        let x: Vec<f64> = (0..4000).map(|t| 0.7 * (2.0 * PI * 440.0 * t as f64 / 8000.0).sin()).collect();
        let e = envelope(&x);
        for v in &e[200..3800] {
            assert!((v - 0.7).abs() < 1e-3);
        }
        let c = envelope(&[-0.4; 64]);
        assert!(c.iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    fn stereo(seed: u64) -> AudioClip {
        let l: Vec<f64> = (0..800).map(|t| (t as f64 * 0.37 + seed as f64).sin() * 0.5).collect();
        let r: Vec<f64> = (0..800).map(|t| (t as f64 * 0.11 + seed as f64).cos() * 0.2).collect();
        AudioClip::binaural(l, r, 8000).unwrap()
    }

    #[test]
    fn distance_identities() {
        let s = stereo(1);
        assert_eq!(stft_distance(&s, &s).unwrap(), 0.0);
        assert_eq!(envelope_distance(&s, &s).unwrap(), 0.0);

        let zero = AudioClip::binaural(vec![0.0; 800], vec![0.0; 800], 8000).unwrap();
        let (win, hop) = stft_params(8000);
        let norm = |x: &[f64]| stft(x, win, hop).unwrap().data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let want = norm(s.left()) + norm(s.right());
        assert!((stft_distance(&s, &zero).unwrap() - want).abs() < 1e-9 * want);

        let flipped = AudioClip::binaural(
            s.left().iter().map(|v| -v).collect(),
            s.right().iter().map(|v| -v).collect(),
            8000,
        )
        .unwrap();
        assert!(envelope_distance(&s, &flipped).unwrap() < 1e-12);

        let doubled = AudioClip::binaural(
            s.left().iter().map(|v| 2.0 * v).collect(),
            s.right().iter().map(|v| 2.0 * v).collect(),
            8000,
        )
        .unwrap();
        let l2 = |x: &[f64]| envelope(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        let want = l2(s.left()) + l2(s.right());
        assert!((envelope_distance(&s, &doubled).unwrap() - want).abs() < 1e-9);

        let other = stereo(2);
        assert_eq!(stft_distance(&s, &other).unwrap(), stft_distance(&other, &s).unwrap());
        assert!(stft_distance(&s, &other).unwrap() > 0.0);
    }

    #[test]
    fn bucket_means() {
        let mut acc = MetricAccumulator::default();
        acc.add(1, 1.0, 10.0).unwrap();
        acc.add(1, 3.0, 30.0).unwrap();
        acc.add(3, 5.0, 50.0).unwrap();
        assert!(acc.add(4, 0.0, 0.0).is_err());
        let r = acc.finish();
        assert_eq!(r.env.one, Some(2.0));
        assert_eq!(r.env.two, None);
        assert_eq!(r.env.avg, Some(3.0));
        assert_eq!(r.stft.three, Some(50.0));
        assert_eq!(r.counts, [2, 0, 1]);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["env"]["1"].is_number() && json["env"]["2"].is_null() && json["stft"]["avg"].is_number());
    }
}
