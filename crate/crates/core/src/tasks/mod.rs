//! Per-video fitting and the four restoration tasks built on it.

mod config;
mod fit;

pub use config::{
    alphas_for_factor, validate_alphas, ArchConfig, FeatureSource, FrameMapping, TaskConfig, TaskKind,
    DEFAULT_LR, DEFAULT_MEMORY_LIMIT, DESK_EPOCH_DIVISOR, FOUR_X_ALPHAS,
};
pub use fit::{curve_csv, detect_plateau, estimate_tape_bytes, fit_with, Control, EpochInfo, FitResult, Supervision};

use crate::diffcore::Tensor;
use crate::error::{Result, VdpError};
use crate::videoio::{MaskSequence, VideoSequence};

/// Fits the plain objective to `video`.
pub fn fit(video: &VideoSequence, cfg: &TaskConfig) -> Result<FitResult> {
    fit_with(video.frames(), &Supervision::Direct, cfg, &mut |_| Control::Continue)
}

/// Restored sequence: the rollout of a model fit to the noisy input.
pub fn denoise(video: &VideoSequence, cfg: &TaskConfig) -> Result<FitResult> {
    fit(video, cfg)
}

/// Fits `video`, then inserts frames decoded from mixed latents between
/// every pair of restored frames. Output length is `(T − 1)(n + 1) + 1`.
pub fn interpolate(video: &VideoSequence, cfg: &TaskConfig) -> Result<(FitResult, VideoSequence)> {
    validate_alphas(&cfg.alphas)?;
    if video.len() < 3 {
        return Err(VdpError::Input(format!("interpolation needs at least 3 frames, got {}", video.len())));
    }
    let result = fit(video, cfg)?;
    let out = interpolate_fitted(&result, &cfg.alphas)?;
    Ok((result, out))
}

/// Interleaves restored frames with decodes at each `α`.
pub fn interpolate_fitted(result: &FitResult, alphas: &[f64]) -> Result<VideoSequence> {
    validate_alphas(alphas)?;
    let t = result.frames.shape()[0];
    let mut frames = Vec::with_capacity((t - 1) * (alphas.len() + 1) + 1);
    for k in 0..t {
        frames.push(result.frames.slice_outer(k)?);
        if k + 1 < t {
            let mixed: Vec<Tensor> = alphas
                .iter()
                .map(|&a| result.latents[k].zip_map(&result.latents[k + 1], |x, y| (1.0 - a) * x + a * y))
                .collect();
            let decoded = result.model.fdnet_decode(&Tensor::stack(&mixed)?)?;
            for j in 0..alphas.len() {
                frames.push(decoded.slice_outer(j)?);
            }
        }
    }
    VideoSequence::from_frames(&frames)
}

/// Fits a high-resolution rollout whose downscaled frames match `video_lr`.
pub fn superresolve(video_lr: &VideoSequence, cfg: &TaskConfig) -> Result<FitResult> {
    fit_with(
        video_lr.frames(),
        &Supervision::Downscaled(cfg.scale),
        cfg,
        &mut |_| Control::Continue,
    )
}

/// Fits only the observed pixels and returns full frames with the holes
/// synthesized by the model.
pub fn remove_object(video: &VideoSequence, cfg: &TaskConfig, masks: &MaskSequence) -> Result<FitResult> {
    if masks.len() != video.len() {
        return Err(VdpError::Input(format!("{} masks for {} frames", masks.len(), video.len())));
    }
    fit_with(
        video.frames(),
        &Supervision::Masked(masks.masks().clone()),
        cfg,
        &mut |_| Control::Continue,
    )
}
