//! Joint non-linear spatial filtering for multichannel speech enhancement.

pub mod audio;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod linear_spatial;
pub mod mask;
pub mod metrics;
pub mod net;
pub mod numerics;
pub mod roomsim;
pub mod stft;
pub mod training;

pub use error::{Error, Result};
