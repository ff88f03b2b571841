//! Seeded corruptions: Gaussian and Poisson noise, noise-frame replacement,
//! and low-resolution generation.
//!
//! Noise levels are given in 8-bit units. Poisson noise is additive and
//! centered: `y = clip(x + (P(λ) − λ)/255)`, so larger λ means stronger noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::diffcore::{kernels, Tensor};
use crate::error::{Result, VdpError};
use crate::videoio::VideoSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian { sigma: f64, seed: u64 },
    Poisson { lambda: f64, seed: u64 },
    FrameReplace { indices: Vec<usize>, seed: u64 },
    Downscale { scale: usize },
}

impl NoiseSpec {
    pub fn validate(&self, frames: usize) -> Result<()> {
        match self {
            Self::Gaussian { sigma, .. } if !(*sigma > 0.0 && sigma.is_finite()) => {
                Err(VdpError::Config(format!("gaussian sigma must be > 0, got {sigma}")))
            }
            Self::Poisson { lambda, .. } if !(*lambda > 0.0 && lambda.is_finite()) => {
                Err(VdpError::Config(format!("poisson lambda must be > 0, got {lambda}")))
            }
            Self::FrameReplace { indices, .. } => match indices.iter().find(|&&i| i >= frames) {
                Some(i) => Err(VdpError::Config(format!("frame index {i} out of range for {frames} frames"))),
                None => Ok(()),
            },
            Self::Downscale { scale: 0 } => Err(VdpError::Config("scale must be ≥ 1".into())),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, video: &VideoSequence) -> Result<VideoSequence> {
        self.validate(video.len())?;
        match self {
            Self::Gaussian { sigma, seed } => add_gaussian(video, *sigma, *seed),
            Self::Poisson { lambda, seed } => add_poisson(video, *lambda, *seed),
            Self::FrameReplace { indices, seed } => {
                let mut out = video.clone();
                for (k, &i) in indices.iter().enumerate() {
                    out = replace_frame_with_noise(&out, i, seed.wrapping_add(k as u64))?;
                }
                Ok(out)
            }
            Self::Downscale { scale } => make_lowres(video, *scale),
        }
    }
}

fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn with_frames(video: &VideoSequence, frames: Tensor) -> Result<VideoSequence> {
    let mut out = VideoSequence::new(frames)?;
    out.sources = video.sources.clone();
    Ok(out)
}

/// `clip(x + n/255)` with `n ∼ N(0, σ²)` per element.
pub fn add_gaussian(video: &VideoSequence, sigma: f64, seed: u64) -> Result<VideoSequence> {
    let normal = Normal::new(0.0, sigma / 255.0).map_err(|e| VdpError::Config(format!("gaussian sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = video.frames().clone();
    for x in frames.data_mut() {
        *x = clip01(*x + normal.sample(&mut rng));
    }
    with_frames(video, frames)
}

/// Pre-clip centered Poisson noise field `(P(λ) − λ)/255` of `n` elements.
pub fn poisson_field(n: usize, lambda: f64, seed: u64) -> Result<Vec<f64>> {
    let poisson = Poisson::new(lambda).map_err(|e| VdpError::Config(format!("poisson lambda {lambda}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| (poisson.sample(&mut rng) - lambda) / 255.0).collect())
}

/// `clip(x + (P(λ) − λ)/255)` per element.
pub fn add_poisson(video: &VideoSequence, lambda: f64, seed: u64) -> Result<VideoSequence> {
    let field = poisson_field(video.frames().len(), lambda, seed)?;
    let mut frames = video.frames().clone();
    for (x, n) in frames.data_mut().iter_mut().zip(field) {
        *x = clip01(*x + n);
    }
    with_frames(video, frames)
}

/// Replaces frame `idx` with i.i.d. uniform(0, 1) values.
pub fn replace_frame_with_noise(video: &VideoSequence, idx: usize, seed: u64) -> Result<VideoSequence> {
    if idx >= video.len() {
        return Err(VdpError::Input(format!("frame index {idx} out of range for {} frames", video.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = video.frames().clone();
    let (c, h, w) = video.frame_shape();
    let per = c * h * w;
    for v in &mut frames.data_mut()[idx * per..(idx + 1) * per] {
        *v = rng.random::<f64>();
    }
    with_frames(video, frames)
}

/// Area-average downscaling of every frame.
pub fn make_lowres(video: &VideoSequence, scale: usize) -> Result<VideoSequence> {
    with_frames(video, kernels::downsample_area(video.frames(), scale)?)
}
