use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Mono or binaural sample buffer. Channel 0 is left, channel 1 right.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

/// On-disk sample encoding for [`AudioClip::write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "audio clips have 1 or 2 channels, got {}",
                channels.len()
            )));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate 0".into()));
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite sample".into()));
        }
        Ok(AudioClip { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn binaural(left: Vec<f64>, right: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![left, right], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn left(&self) -> &[f64] {
        &self.channels[0]
    }

    /// The second channel of a binaural clip; the only channel of a mono one.
    pub fn right(&self) -> &[f64] {
        self.channels.last().expect("at least one channel")
    }

    pub fn is_mono(&self) -> bool {
        self.channels.len() == 1
    }

    /// Samples interleaved by frame.
    fn interleaved(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).flat_map(move |i| self.channels.iter().map(move |c| c[i]))
    }

    pub fn write_wav(&self, path: &Path, encoding: WavEncoding) -> Result<()> {
        let spec = WavSpec {
            channels: self.channels.len() as u16,
            sample_rate: self.sample_rate,
            bits_per_sample: match encoding {
                WavEncoding::Pcm16 => 16,
                WavEncoding::Float32 => 32,
            },
            sample_format: match encoding {
                WavEncoding::Pcm16 => SampleFormat::Int,
                WavEncoding::Float32 => SampleFormat::Float,
            },
        };
        let wav_err = |source| Error::Wav {
            path: path.to_path_buf(),
            source,
        };
        let mut w = WavWriter::create(path, spec).map_err(wav_err)?;
        for x in self.interleaved() {
            match encoding {
                WavEncoding::Pcm16 => {
                    let q = (x.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                    w.write_sample(q).map_err(wav_err)?;
                }
                WavEncoding::Float32 => w.write_sample(x as f32).map_err(wav_err)?,
            }
        }
        w.finalize().map_err(wav_err)
    }

    /// Reads a mono or stereo WAV (16-bit PCM or 32-bit float).
    pub fn read_wav(path: &Path) -> Result<Self> {
        let wav_err = |source| Error::Wav {
            path: path.to_path_buf(),
            source,
        };
        let reader = WavReader::open(path).map_err(wav_err)?;
        let spec = reader.spec();
        let nch = spec.channels as usize;
        if !(1..=2).contains(&nch) {
            return Err(Error::parse(path, format!("{nch} channels; expected 1 or 2")));
        }
        let flat: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (SampleFormat::Int, 16) => reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| v as f64 / 32767.0))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?,
            (SampleFormat::Float, 32) => reader
                .into_samples::<f32>()
                .map(|s| s.map(|v| v as f64))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?,
            (fmt, bits) => {
                return Err(Error::parse(path, format!("unsupported sample format {fmt:?} {bits}-bit")));
            }
        };
        let mut channels = vec![Vec::with_capacity(flat.len() / nch); nch];
        for frame in flat.chunks_exact(nch) {
            for (c, &x) in channels.iter_mut().zip(frame) {
                c.push(x);
            }
        }
        AudioClip::new(channels, spec.sample_rate).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Like [`read_wav`](Self::read_wav), but the file must be at `sample_rate`.
    pub fn read_wav_at(path: &Path, sample_rate: u32) -> Result<Self> {
        let clip = Self::read_wav(path)?;
        if clip.sample_rate != sample_rate {
            return Err(Error::SampleRate {
                expected: sample_rate,
                actual: clip.sample_rate,
            });
        }
        Ok(clip)
    }
}
