//! Procedural instrument recordings: note sequences rendered with a
//! per-class harmonic recipe, envelope and vibrato.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::instrument::Instrument;

/// Peak amplitude of a synthesized recording.
pub const PEAK: f64 = 0.3;

struct Recipe {
    /// Fundamental range in Hz.
    pitch: (f64, f64),
    /// `Some(tau)` for plucked notes decaying with time constant `tau`
    /// seconds; `None` for bowed/blown notes with a sustained envelope.
    pluck: Option<f64>,
    vibrato_depth: f64,
    vibrato_rate: f64,
    noise: f64,
}

fn recipe(instrument: Instrument) -> Recipe {
    match instrument {
        Instrument::Cello => Recipe {
            pitch: (65.0, 330.0),
            pluck: None,
            vibrato_depth: 0.004,
            vibrato_rate: 5.0,
            noise: 0.0,
        },
        Instrument::Doublebass => Recipe {
            pitch: (41.0, 165.0),
            pluck: Some(0.6),
            vibrato_depth: 0.0,
            vibrato_rate: 0.0,
            noise: 0.0,
        },
        Instrument::Guitar => Recipe {
            pitch: (82.0, 440.0),
            pluck: Some(0.35),
            vibrato_depth: 0.0,
            vibrato_rate: 0.0,
            noise: 0.0,
        },
        Instrument::Saxophone => Recipe {
            pitch: (138.0, 700.0),
            pluck: None,
            vibrato_depth: 0.003,
            vibrato_rate: 4.5,
            noise: 0.02,
        },
        Instrument::Violin => Recipe {
            pitch: (196.0, 1300.0),
            pluck: None,
            vibrato_depth: 0.006,
            vibrato_rate: 6.0,
            noise: 0.0,
        },
    }
}

/// Relative amplitude of harmonic `n` (1-based) at frequency `f`.
fn harmonic_amp(instrument: Instrument, n: usize, f: f64) -> f64 {
    let n_f = n as f64;
    let bump = |center: f64, width: f64| (-((f - center) / width).powi(2)).exp();
    match instrument {
        Instrument::Cello => (1.0 + 0.6 * bump(300.0, 200.0)) / n_f,
        Instrument::Doublebass => 1.0 / (n_f * n_f),
        Instrument::Guitar => (PI * n_f * 0.2).sin().abs() / n_f.powf(1.2),
        Instrument::Saxophone => (0.3 + bump(600.0, 250.0) + 0.7 * bump(1500.0, 400.0)) / n_f.sqrt(),
        Instrument::Violin => (1.0 + 0.8 * bump(2500.0, 800.0)) / n_f,
    }
}

/// A `secs`-long recording of `instrument` at `sample_rate`, deterministic
/// in `seed`. Harmonics stay below `0.45 * sample_rate`.
pub fn synthesize(instrument: Instrument, secs: f64, sample_rate: u32, seed: u64) -> Vec<f64> {
    let fs = sample_rate as f64;
    let len = (secs * fs).round() as usize;
    let r = recipe(instrument);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let mut start = 0;
    while start < len {
        let dur = ((rng.random_range(0.25..0.7) * fs) as usize).max(1);
        let end = (start + dur).min(len);
        let f0 = r.pitch.0 * (r.pitch.1 / r.pitch.0).powf(rng.random::<f64>());
        let vib_phase = rng.random_range(0.0..2.0 * PI);
        let harmonics: Vec<(usize, f64)> = (1..)
            .map(|n| (n, n as f64 * f0))
            .take_while(|&(_, f)| f < 0.45 * fs)
            .map(|(n, f)| (n, harmonic_amp(instrument, n, f)))
            .collect();
        let phases: Vec<f64> = harmonics.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let mut base_phase = 0.0;
        for (i, o) in out[start..end].iter_mut().enumerate() {
            let t = i as f64 / fs;
            let env = match r.pluck {
                Some(tau) => (1.0 - (-t / 0.003).exp()) * (-t / tau).exp(),
                None => {
                    let remain = (end - start - i) as f64 / fs;
                    (t / 0.05).min(1.0) * (remain / 0.05).min(1.0)
                }
            };
            let vib = 1.0 + r.vibrato_depth * (2.0 * PI * r.vibrato_rate * t + vib_phase).sin();
            base_phase += 2.0 * PI * f0 * vib / fs;
            let mut s = 0.0;
            for ((n, a), p) in harmonics.iter().zip(&phases) {
                // plucked strings lose their upper partials faster
                let damp = match r.pluck {
                    Some(tau) => (-t * (*n as f64 - 1.0) / (4.0 * tau)).exp(),
                    None => 1.0,
                };
                s += a * damp * (*n as f64 * base_phase + p).sin();
            }
            if r.noise > 0.0 {
                s += r.noise * rng.random_range(-1.0..1.0);
            }
            *o = env * s;
        }
        start = end;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        for inst in Instrument::ALL {
            let a = synthesize(inst, 0.5, 8000, 3);
            assert_eq!(a.len(), 4000);
            assert_eq!(a, synthesize(inst, 0.5, 8000, 3));
            let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - PEAK).abs() < 1e-12);
        }
    }

    #[test]
    fn classes_sound_different() {
        let a = synthesize(Instrument::Doublebass, 0.5, 8000, 1);
        let b = synthesize(Instrument::Violin, 0.5, 8000, 1);
        // zero-crossing rate separates low and high registers
        let zc = |x: &[f64]| x.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
        assert!(zc(&b) > 2 * zc(&a));
    }
}
