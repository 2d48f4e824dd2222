//! Audio buffers, WAV I/O and the conditioned waveform network.

pub mod clip;
pub mod net;

pub use clip::{AudioClip, WavEncoding};
pub use net::{AudioNet, AudioNetConfig};
