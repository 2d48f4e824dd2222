//! Binaural rendering from head-related impulse responses.
//!
//! Azimuths are counterclockwise-positive seen from above: 0 is straight
//! ahead (+z), pi/2 is to the listener's left (+x). Only the eight
//! horizontal-plane directions `k * pi/4` are used.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::instrument::Instrument;

pub const NUM_AZIMUTHS: usize = 8;
pub const HEAD_RADIUS: f64 = 0.0875;
pub const SPEED_OF_SOUND: f64 = 343.0;
/// Taps of the windowed-sinc fractional delay.
pub const SINC_TAPS: usize = 32;

pub fn azimuth_radians(k: usize) -> f64 {
    k as f64 * FRAC_PI_4
}

pub fn azimuth_degrees(k: usize) -> u32 {
    (k * 45) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub instrument: Instrument,
    pub azimuth_index: usize,
    /// Meters from the listener. Placement only; not rendered acoustically.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub sources: Vec<SourceSpec>,
    pub clip_secs: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.sources.len();
        if !(1..=3).contains(&n) {
            return Err(Error::InvalidArgument(format!("scenes hold 1 to 3 sources, got {n}")));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if s.azimuth_index >= NUM_AZIMUTHS {
                return Err(Error::UnknownAzimuth(s.azimuth_index));
            }
            if self.sources[..i].iter().any(|o| o.azimuth_index == s.azimuth_index) {
                return Err(Error::InvalidArgument(format!(
                    "azimuth index {} used twice",
                    s.azimuth_index
                )));
            }
            if !(1.0..=3.0).contains(&s.distance) {
                return Err(Error::InvalidArgument(format!("distance {} outside [1, 3] m", s.distance)));
            }
        }
        Ok(())
    }
}

/// Left/right impulse responses for the eight horizontal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct HrirSet {
    sample_rate: u32,
    /// Keyed by azimuth in whole degrees.
    entries: BTreeMap<u32, (Vec<f64>, Vec<f64>)>,
}

impl HrirSet {
    pub fn new(sample_rate: u32, entries: BTreeMap<u32, (Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate 0".into()));
        }
        for k in 0..NUM_AZIMUTHS {
            if !entries.contains_key(&azimuth_degrees(k)) {
                return Err(Error::InvalidArgument(format!(
                    "HRIR set lacks azimuth {} degrees",
                    azimuth_degrees(k)
                )));
            }
        }
        let len = entries.values().next().map(|(l, _)| l.len()).unwrap_or(0);
        if len == 0 || entries.values().any(|(l, r)| l.len() != len || r.len() != len) {
            return Err(Error::Shape("HRIRs must be non-empty and of equal length".into()));
        }
        Ok(HrirSet { sample_rate, entries })
    }

    /// The parametric spherical-head set at `sample_rate`.
    pub fn spherical_head(sample_rate: u32) -> Self {
        let entries = (0..NUM_AZIMUTHS)
            .map(|k| {
                let irs = spherical_head_hrir(azimuth_radians(k), sample_rate as f64, HEAD_RADIUS, SPEED_OF_SOUND);
                (azimuth_degrees(k), irs)
            })
            .collect();
        HrirSet::new(sample_rate, entries).expect("all azimuths present")
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn ir_len(&self) -> usize {
        self.entries.values().next().map_or(0, |(l, _)| l.len())
    }

    pub fn get(&self, azimuth_index: usize) -> Result<(&[f64], &[f64])> {
        if azimuth_index >= NUM_AZIMUTHS {
            return Err(Error::UnknownAzimuth(azimuth_index));
        }
        self.entries
            .get(&azimuth_degrees(azimuth_index))
            .map(|(l, r)| (l.as_slice(), r.as_slice()))
            .ok_or(Error::UnknownAzimuth(azimuth_index))
    }

    /// Loads a directory holding `index.json`, which maps azimuth degrees
    /// (`"0"`, `"45"`, ..., `"315"`) to stereo WAV file names.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let index_path = dir.join("index.json");
        let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: BTreeMap<String, String> = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: index_path.clone(),
            source,
        })?;
        let mut entries = BTreeMap::new();
        let mut rate = None;
        for (deg, file) in &index {
            let deg: u32 = deg
                .parse()
                .map_err(|_| Error::parse(&index_path, format!("azimuth key {deg:?} is not an integer")))?;
            let path = dir.join(file);
            let clip = AudioClip::read_wav(&path)?;
            if clip.num_channels() != 2 {
                return Err(Error::parse(&path, "HRIR files must be stereo"));
            }
            match rate {
                None => rate = Some(clip.sample_rate()),
                Some(r) if r != clip.sample_rate() => {
                    return Err(Error::SampleRate {
                        expected: r,
                        actual: clip.sample_rate(),
                    })
                }
                Some(_) => {}
            }
            let mut ch = clip.into_channels();
            let right = ch.pop().expect("stereo");
            let left = ch.pop().expect("stereo");
            entries.insert(deg, (left, right));
        }
        let rate = rate.ok_or_else(|| Error::parse(&index_path, "empty HRIR index"))?;
        HrirSet::new(rate, entries).map_err(|e| Error::parse(&index_path, e.to_string()))
    }
}

/// `x` convolved with `h`, keeping the first `x.len()` samples.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (n, yn) in y.iter_mut().enumerate() {
        let lo = (n + 1).saturating_sub(h.len());
        *yn = (lo..=n).map(|m| x[m] * h[n - m]).sum();
    }
    y
}

/// Renders a mono source at azimuth index `azimuth_index`.
pub fn render_binaural(source: &AudioClip, azimuth_index: usize, hrirs: &HrirSet) -> Result<AudioClip> {
    if !source.is_mono() {
        return Err(Error::InvalidArgument("source must be mono".into()));
    }
    if source.sample_rate() != hrirs.sample_rate() {
        return Err(Error::SampleRate {
            expected: hrirs.sample_rate(),
            actual: source.sample_rate(),
        });
    }
    let (l, r) = hrirs.get(azimuth_index)?;
    let x = source.channel(0);
    AudioClip::binaural(convolve_truncated(x, l), convolve_truncated(x, r), source.sample_rate())
}

/// Renders every source and sums them. Returns `(mono, binaural)` with
/// mono = left + right of the binaural mixture.
pub fn mix_scene(sources: &[AudioClip], spec: &SceneSpec, hrirs: &HrirSet) -> Result<(AudioClip, AudioClip)> {
    spec.validate()?;
    if sources.len() != spec.sources.len() {
        return Err(Error::Shape(format!(
            "{} source clips for {} scene sources",
            sources.len(),
            spec.sources.len()
        )));
    }
    let n = sources[0].len();
    let rate = sources[0].sample_rate();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for (clip, s) in sources.iter().zip(&spec.sources) {
        if clip.len() != n {
            return Err(Error::Shape("source clips differ in length".into()));
        }
        if clip.sample_rate() != rate {
            return Err(Error::SampleRate {
                expected: rate,
                actual: clip.sample_rate(),
            });
        }
        let b = render_binaural(clip, s.azimuth_index, hrirs)?;
        for (acc, &v) in left.iter_mut().zip(b.left()) {
            *acc += v;
        }
        for (acc, &v) in right.iter_mut().zip(b.right()) {
            *acc += v;
        }
    }
    let mono: Vec<f64> = left.iter().zip(&right).map(|(l, r)| l + r).collect();
    Ok((AudioClip::mono(mono, rate)?, AudioClip::binaural(left, right, rate)?))
}

/// Woodworth interaural time difference in seconds for lateral angle
/// `lateral` in `[0, pi/2]`.
pub fn woodworth_itd(lateral: f64, head_radius: f64, c: f64) -> f64 {
    head_radius / c * (lateral + lateral.sin())
}

/// Azimuth folded onto the lateral angle in `[0, pi/2]` (front/back
/// mirror images share it).
pub fn lateral_angle(azimuth: f64) -> f64 {
    let a = azimuth.sin().abs().atan2(azimuth.cos().abs());
    if a < 1e-12 {
        0.0
    } else {
        a.min(FRAC_PI_2)
    }
}

fn hann_lobe(u: f64, half_width: f64) -> f64 {
    if u.abs() >= half_width {
        0.0
    } else {
        0.5 * (1.0 + (PI * u / half_width).cos())
    }
}

/// Impulse delayed by `delay` samples (fractional allowed) through a
/// Hann-windowed sinc of [`SINC_TAPS`] taps, normalized to unit DC gain,
/// written into `out`.
fn fractional_delay(delay: f64, out: &mut [f64]) {
    let whole = delay.floor();
    if delay == whole {
        out[delay as usize] += 1.0;
        return;
    }
    let half = (SINC_TAPS / 2) as f64;
    let first = whole as i64 - (SINC_TAPS as i64 / 2 - 1);
    let taps: Vec<(usize, f64)> = (0..SINC_TAPS as i64)
        .map(|i| {
            let n = first + i;
            let u = n as f64 - delay;
            let sinc = (PI * u).sin() / (PI * u);
            (n as usize, sinc * hann_lobe(u, half + 1.0))
        })
        .collect();
    let dc: f64 = taps.iter().map(|&(_, v)| v).sum();
    for (n, v) in taps {
        out[n] += v / dc;
    }
}

/// Zero-phase head-shadow filter of half-length `m`: magnitude of the
/// first-order shelf `(1 + j a w / 2w0) / (1 + j w / 2w0)` with
/// `w0 = c / r`, sampled, windowed and normalized to unit DC gain.
fn head_shadow(alpha: f64, fs: f64, head_radius: f64, c: f64, m: usize) -> Vec<f64> {
    const GRID: usize = 2048;
    let w0 = c / head_radius;
    let mag: Vec<f64> = (0..=GRID / 2)
        .map(|k| {
            let w = 2.0 * PI * fs * k as f64 / GRID as f64;
            let x = w / (2.0 * w0);
            ((1.0 + (alpha * x).powi(2)) / (1.0 + x * x)).sqrt()
        })
        .collect();
    let mut h: Vec<f64> = (-(m as i64)..=m as i64)
        .map(|n| {
            let mut acc = mag[0];
            for (k, &a) in mag.iter().enumerate().skip(1) {
                let weight = if k == GRID / 2 { 1.0 } else { 2.0 };
                acc += weight * a * (2.0 * PI * k as f64 * n as f64 / GRID as f64).cos();
            }
            acc / GRID as f64 * hann_lobe(n as f64, m as f64 + 1.0)
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Spherical-head impulse responses `(left, right)` for `azimuth` radians.
///
/// The contralateral ear is delayed by the Woodworth ITD through a
/// fractional delay and filtered by a zero-phase head-shadow shelf; the
/// ipsilateral ear is a pure impulse. Both ears share a bulk latency of
/// `SINC_TAPS / 2 + ceil(fs / 1000)` samples so the fractional delay and the
/// shadow filter stay causal. The IR length depends only on `fs`.
pub fn spherical_head_hrir(azimuth: f64, fs: f64, head_radius: f64, c: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(fs > 0.0, "sample rate must be positive");
    let m = (fs * 0.001).ceil() as usize;
    let bulk = SINC_TAPS / 2 + m;
    let max_delay = woodworth_itd(FRAC_PI_2, head_radius, c) * fs;
    let len = bulk + max_delay.ceil() as usize + SINC_TAPS / 2 + m + 1;

    let mut ipsi = vec![0.0; len];
    ipsi[bulk] = 1.0;
    let lateral = lateral_angle(azimuth);
    if lateral == 0.0 {
        return (ipsi.clone(), ipsi);
    }
    let delay = woodworth_itd(lateral, head_radius, c) * fs;
    let mut delayed = vec![0.0; len];
    fractional_delay((SINC_TAPS / 2) as f64 + delay, &mut delayed);
    let shadow = head_shadow(1.0 - 0.9 * lateral.sin(), fs, head_radius, c, m);
    let mut contra = vec![0.0; len];
    for (n, &d) in delayed.iter().enumerate().filter(|(_, d)| **d != 0.0) {
        for (j, &s) in shadow.iter().enumerate() {
            if n + j < len {
                contra[n + j] += d * s;
            }
        }
    }
    if azimuth.sin() > 0.0 {
        (ipsi, contra)
    } else {
        (contra, ipsi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(x: Vec<f64>) -> AudioClip {
        AudioClip::mono(x, 8000).unwrap()
    }

    fn set_with(l: Vec<f64>, r: Vec<f64>) -> HrirSet {
        let entries = (0..8).map(|k| (azimuth_degrees(k), (l.clone(), r.clone()))).collect();
        HrirSet::new(8000, entries).unwrap()
    }

    #[test]
    fn unit_impulse_copies_source() {
        let s = clip(vec![0.5, -1.0, 2.0, 0.25]);
        let b = render_binaural(&s, 3, &set_with(vec![1.0], vec![1.0])).unwrap();
        assert_eq!(b.left(), s.channel(0));
        assert_eq!(b.right(), s.channel(0));
    }

    #[test]
    fn delayed_right_ear() {
        let s = clip(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = render_binaural(&s, 0, &set_with(vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(b.right(), &[0.0, 0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn gain_ratio() {
        let s = clip(vec![0.3, -0.7, 0.2, 0.9]);
        let b = render_binaural(&s, 1, &set_with(vec![1.0], vec![0.5])).unwrap();
        let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!((rms(b.left()) / rms(b.right()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn render_errors() {
        let hrirs = set_with(vec![1.0], vec![1.0]);
        let other_rate = AudioClip::mono(vec![1.0], 16000).unwrap();
        assert!(matches!(render_binaural(&other_rate, 0, &hrirs), Err(Error::SampleRate { .. })));
        assert!(matches!(render_binaural(&clip(vec![1.0]), 8, &hrirs), Err(Error::UnknownAzimuth(8))));
    }

    #[test]
    fn woodworth_at_ninety_degrees() {
        let itd = woodworth_itd(FRAC_PI_2, 0.0875, 343.0);
        assert!((itd - 0.0875 / 343.0 * (FRAC_PI_2 + 1.0)).abs() < 1e-15);
        assert!((itd * 1e3 - 0.655).abs() < 1e-3);
    }

    #[test]
    fn median_plane_is_symmetric_and_lateral_mirrors() {
        let (l, r) = spherical_head_hrir(0.0, 8000.0, HEAD_RADIUS, SPEED_OF_SOUND);
        assert_eq!(l, r);
        let (l, r) = spherical_head_hrir(PI, 8000.0, HEAD_RADIUS, SPEED_OF_SOUND);
        assert_eq!(l, r);
        for az in [0.3, FRAC_PI_4, FRAC_PI_2, 2.5] {
            let (l, r) = spherical_head_hrir(az, 8000.0, HEAD_RADIUS, SPEED_OF_SOUND);
            let (ml, mr) = spherical_head_hrir(-az, 8000.0, HEAD_RADIUS, SPEED_OF_SOUND);
            assert_eq!(l, mr);
            assert_eq!(r, ml);
            assert_ne!(l, r);
        }
    }

    #[test]
    fn left_source_is_louder_on_the_left() {
        let (l, r) = spherical_head_hrir(FRAC_PI_2, 8000.0, HEAD_RADIUS, SPEED_OF_SOUND);
        let energy = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        assert!(energy(&l) > energy(&r));
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mix_of_one_source_with_impulses() {
        let hrirs = set_with(vec![1.0], vec![1.0]);
        let spec = SceneSpec {
            sources: vec![SourceSpec {
                instrument: Instrument::Violin,
                azimuth_index: 2,
                distance: 1.5,
            }],
            clip_secs: 0.0005,
        };
        let s = clip(vec![1.0, -2.0, 0.5]);
        let (m, b) = mix_scene(std::slice::from_ref(&s), &spec, &hrirs).unwrap();
        assert_eq!(b.left(), s.channel(0));
        assert_eq!(b.right(), s.channel(0));
        assert_eq!(m.channel(0), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn mix_rejects_bad_specs() {
        let hrirs = set_with(vec![1.0], vec![1.0]);
        let src = |k| SourceSpec {
            instrument: Instrument::Cello,
            azimuth_index: k,
            distance: 2.0,
        };
        let s = clip(vec![1.0; 4]);
        let dup = SceneSpec {
            sources: vec![src(1), src(1)],
            clip_secs: 1.0,
        };
        assert!(mix_scene(&[s.clone(), s.clone()], &dup, &hrirs).is_err());
        let four = SceneSpec {
            sources: (0..4).map(src).collect(),
            clip_secs: 1.0,
        };
        assert!(mix_scene(&vec![s.clone(); 4], &four, &hrirs).is_err());
        let two = SceneSpec {
            sources: vec![src(0), src(1)],
            clip_secs: 1.0,
        };
        assert!(mix_scene(&[s.clone(), clip(vec![1.0; 3])], &two, &hrirs).is_err());
    }

    #[test]
    fn loads_hrir_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut index = BTreeMap::new();
        for k in 0..8 {
            let name = format!("az{k}.wav");
            let (l, r) = spherical_head_hrir(azimuth_radians(k), 8000.0, HEAD_RADIUS, SPEED_OF_SOUND);
            AudioClip::binaural(l, r, 8000)
                .unwrap()
                .write_wav(&dir.path().join(&name), crate::audio::WavEncoding::Float32)
                .unwrap();
            index.insert(azimuth_degrees(k).to_string(), name);
        }
        fs::write(dir.path().join("index.json"), serde_json::to_string(&index).unwrap()).unwrap();
        let set = HrirSet::load_dir(dir.path()).unwrap();
        assert_eq!(set.sample_rate(), 8000);
        assert_eq!(set.ir_len(), HrirSet::spherical_head(8000).ir_len());

        index.remove("315");
        fs::write(dir.path().join("index.json"), serde_json::to_string(&index).unwrap()).unwrap();
        assert!(HrirSet::load_dir(dir.path()).is_err());
    }

    fn xcorr_peak_lag(a: &[f64], b: &[f64], max_lag: i64) -> i64 {
        (-max_lag..=max_lag)
            .max_by(|&x, &y| {
                let c = |lag: i64| -> f64 {
                    (0..a.len() as i64)
                        .filter(|&n| n + lag >= 0 && ((n + lag) as usize) < b.len())
                        .map(|n| a[n as usize] * b[(n + lag) as usize])
                        .sum()
                };
                c(x).total_cmp(&c(y))
            })
            .unwrap()
    }

    #[test]
    fn itd_by_cross_correlation() {
        use rand::{Rng, SeedableRng};
        for (fs, want) in [(8000u32, 5), (44100, 29)] {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
            let noise: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hrirs = HrirSet::spherical_head(fs);
            let b = render_binaural(&AudioClip::mono(noise, fs).unwrap(), 2, &hrirs).unwrap();
            assert_eq!(xcorr_peak_lag(b.left(), b.right(), 60), want, "fs {fs}");
            let front = render_binaural(&AudioClip::mono(b.left().to_vec(), fs).unwrap(), 4, &hrirs).unwrap();
            assert_eq!(xcorr_peak_lag(front.left(), front.right(), 60), 0);
        }
    }
}
