//! Point-cloud conditioned mono-to-binaural audio synthesis.
//!
//! The crate covers the whole pipeline: a sparse voxel ResNet that turns a
//! 3-D scene into a conditioning vector, a waveform encoder/decoder that
//! renders binaural audio from mono, procedural training data (musician
//! point clouds, instrument tones, HRIR rendering), losses, metrics and the
//! training/evaluation loop.

pub mod adam;
pub mod audio;
pub mod binaural;
pub mod checkpoint;
pub mod cloud;
pub mod conv;
pub mod error;
pub mod instrument;
pub mod layers;
pub mod metrics;
pub mod params;
pub mod scene;
pub mod seed;
pub mod sparse;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vision;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
