//! Spatial resolution adaptation for video coding: a learned 2x
//! down-sampler (DSNet) applied before encoding, simple filter up-sampling
//! after decoding, the rate-distortion surrogate loss used to train the
//! down-sampler, and the tooling to evaluate the whole chain against an
//! external codec.

pub mod dsnet;
pub mod error;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod resample;
pub mod tiling;
pub mod training;

pub use error::{Error, Result};
