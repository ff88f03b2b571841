//! Per-video fitting of a recurrent latent model and convolutional frame
//! decoder, used as a prior for denoising, frame interpolation,
//! super-resolution and object removal.

pub mod cli;
pub mod degrade;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tasks;
pub mod videoio;

pub use error::{Result, VdpError};
