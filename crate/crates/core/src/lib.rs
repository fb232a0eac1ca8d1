//! Modeling distributions of 3D volumes through 2D slice codecs.
//!
//! A volume is cut into slices along a chosen axis, each slice is encoded to a
//! low-dimensional latent vector, and the resulting latent sequences are modeled
//! per dimension by a Gaussian over slice position. Sampling the Gaussian and
//! decoding the rows yields new volumes that stay coherent across slices.
//!
//! The crate also carries the evaluation stack used around that model: a
//! deterministic phantom generator for test cohorts, kernel MMD and multi-scale
//! SSIM metrics, a 12-parameter affine registration, and the segmentation +
//! registration + Dice pipeline that produces the realistic-atlas score.
//!
//! Numeric containers are generic over the scalar via [`Real`]; the default
//! type parameters pin the concrete scalars the file formats use (`f32` voxel
//! storage, `f64` model math), so `Volume` and `SliceLatentModel` written bare
//! are the concrete pipeline types.

pub mod codec;
mod error;
pub mod io;
pub mod latent;
pub mod metrics;
pub mod optim;
pub mod phantom;
pub mod ras;
pub mod real;
pub mod registration;
pub mod rng;
pub mod volume;

pub use error::{Error, Result};
pub use real::Real;
pub use rng::{NormalSource, SplitMix64};
pub use volume::{Axis, LabelMap, Slice, Volume};

/// Single-precision volume, the storage scalar of the volume file format.
pub type VolumeF32 = volume::Volume<f32>;
/// Double-precision volume for high-accuracy intermediate math.
pub type VolumeF64 = volume::Volume<f64>;
