use std::rc::Rc;
use std::time::Instant;

use super::config::{FeatureSource, FrameMapping, TaskConfig};
use crate::diffcore::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::error::{Result, VdpError};
use crate::losses::{FeatureExtractor, LossMode, LossTerms, Objective};
use crate::metrics::CurvePoint;
use crate::model::{ModelConfig, Vdp};
use crate::videoio::VideoSequence;

/// What the rollout is compared against.
#[derive(Clone, Debug)]
pub enum Supervision {
    /// Same resolution as the output.
    Direct,
    /// The output is this many times larger than the target per axis.
    Downscaled(usize),
    /// `[T, 1, H, W]` binary mask of observed pixels.
    Masked(Tensor),
}

/// Per-epoch view handed to fit observers.
pub struct EpochInfo<'a> {
    pub epoch: usize,
    pub terms: LossTerms,
    pub total: f64,
    /// Decoded frames of this epoch, `[T, C, H, W]`, before the update.
    pub frames: &'a Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: Vdp,
    pub curve: Vec<CurvePoint>,
    /// Restored frames `[T, C, H, W]`, one per input frame.
    pub frames: Tensor,
    /// Latent decoded into each restored frame.
    pub latents: Vec<Tensor>,
    pub epoch_seconds: Vec<f64>,
    pub early_stop_epoch: Option<usize>,
    pub mapping: FrameMapping,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn video(&self) -> Result<VideoSequence> {
        VideoSequence::new(self.frames.clone())
    }

    /// Decodes `(1 − α)·z_t + α·z_{t+1}` with the frozen statistics.
    pub fn decode_lerp(&self, t: usize, alpha: f64) -> Result<Tensor> {
        if t + 1 >= self.latents.len() {
            return Err(VdpError::Input(format!("no latent pair at t = {t}")));
        }
        let (a, b) = (&self.latents[t], &self.latents[t + 1]);
        let z = a.zip_map(b, |x, y| (1.0 - alpha) * x + alpha * y);
        self.model.fdnet_decode(&z)
    }
}

/// First epoch `e ≥ window` at which the running minimum improved by less
/// than `tol` (relative) over the preceding `window` epochs.
pub fn detect_plateau(curve: &[f64], window: usize, tol: f64) -> Option<usize> {
    if window < 2 {
        return None;
    }
    let mut mins = Vec::with_capacity(curve.len());
    let mut m = f64::INFINITY;
    for &v in curve {
        m = m.min(v);
        mins.push(m);
    }
    (window..curve.len()).find(|&e| {
        let before = mins[e - window];
        let rel = (before - mins[e]) / before.abs().max(f64::MIN_POSITIVE);
        rel < tol
    })
}

/// Rough upper bound on the bytes held by one epoch's tape and gradients.
pub fn estimate_tape_bytes(cfg: &ModelConfig, frames: usize, feature_widths: &[usize]) -> u64 {
    let mut per_frame = (cfg.base_channels * cfg.base_height() * cfg.base_width() * 3) as u64;
    let mut width = cfg.base_channels;
    let (mut h, mut w) = (cfg.base_height(), cfg.base_width());
    for i in 0..cfg.depth {
        h *= 2;
        w *= 2;
        let out = cfg.block_width(i);
        per_frame += ((2 * width + 4 * out) * h * w) as u64;
        width += out;
    }
    per_frame += (2 * cfg.channels * h * w) as u64;
    let (mut fh, mut fw) = (h, w);
    for &c in feature_widths {
        fh = fh.div_ceil(2);
        fw = fw.div_ceil(2);
        per_frame += (2 * c * fh * fw) as u64;
    }
    let lstm = (frames * cfg.lstm_layers * 12 * cfg.hidden + frames * 4 * cfg.latent_dim) as u64;
    let param_copies = 6 * (4 * cfg.lstm_layers * cfg.hidden * 2 * cfg.hidden) as u64;
    8 * (2 * (per_frame * frames as u64 + lstm) + param_copies)
}

pub(crate) fn build_objective(cfg: &TaskConfig, channels: usize) -> Result<Objective> {
    let features = match &cfg.features {
        FeatureSource::None => None,
        FeatureSource::Random { seed } => Some(FeatureExtractor::random(channels, *seed)),
        FeatureSource::Import { path } => {
            let phi = FeatureExtractor::import(path)?;
            if phi.in_channels() != channels {
                return Err(VdpError::Config(format!(
                    "feature network expects {} channels, frames have {channels}",
                    phi.in_channels()
                )));
            }
            Some(phi)
        }
    };
    Ok(Objective::new(cfg.effective_weights(), features, cfg.pyramid.clone()))
}

/// Fits a fresh model so that its rollout reproduces `target` under the given
/// supervision. `observer` sees every epoch and may stop the fit.
pub fn fit_with(
    target: &Tensor,
    supervision: &Supervision,
    cfg: &TaskConfig,
    observer: &mut dyn FnMut(&EpochInfo) -> Control,
) -> Result<FitResult> {
    cfg.validate()?;
    let (t, c, h, w) = target.nchw()?;
    if target.rank() != 4 || t < 2 {
        return Err(VdpError::Input(format!("fitting needs at least 2 frames, got {}", if target.rank() == 4 { t } else { 1 })));
    }
    let (oh, ow, mode) = match supervision {
        Supervision::Direct => (h, w, LossMode::Plain),
        Supervision::Downscaled(s) => (h * s, w * s, LossMode::Downscaled(*s)),
        Supervision::Masked(m) => {
            if m.rank() != 4 || m.shape()[0] != t || m.shape()[2] != h || m.shape()[3] != w {
                return Err(VdpError::Input(format!(
                    "mask shape {:?} does not match {t} frames of {h}×{w}",
                    m.shape()
                )));
            }
            (h, w, LossMode::Masked(Rc::new(m.clone())))
        }
    };
    let mcfg = cfg.arch.model_config(c, oh, ow, cfg.seed);
    mcfg.validate()?;
    let objective = build_objective(cfg, c)?;
    let widths: Vec<usize> = match &objective.features {
        Some(_) => crate::losses::DEFAULT_WIDTHS.to_vec(),
        None => Vec::new(),
    };
    let estimate = estimate_tape_bytes(&mcfg, t, &widths);
    if estimate > cfg.memory_limit_bytes {
        return Err(VdpError::TooLarge {
            estimated_bytes: estimate,
            limit_bytes: cfg.memory_limit_bytes,
        });
    }
    let mask = match supervision {
        Supervision::Masked(m) => Some(m),
        _ => None,
    };
    let prepared = objective.prepare(target, mask)?;

    let (steps, include_initial) = match cfg.mapping {
        FrameMapping::AuxInitial => (t - 1, true),
        FrameMapping::Literal => (t, false),
    };
    let mut model = Vdp::new(mcfg)?;
    let mut adam = AdamState::new(model.params(), AdamConfig::with_lr(cfg.lr));
    let mut last_good = model.params().clone();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut totals = Vec::with_capacity(cfg.epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    let mut early_stop_epoch = None;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape, true);
        let rollout = model
            .rollout_on(&mut tape, &bound, steps, include_initial, None)
            .map_err(|e| match e {
                VdpError::NonFiniteState { timestep, what, .. } => VdpError::NonFiniteState { epoch, timestep, what },
                other => other,
            })?;
        let terms = objective.terms_on(&mut tape, rollout.frames, &prepared, &mode)?;
        let loss = objective.weighted_on(&mut tape, &terms)?;
        let values = LossTerms {
            rec: tape.value(terms.rec).item(),
            spl: tape.value(terms.spl).item(),
            var: tape.value(terms.var).item(),
        };
        let total = tape.value(loss).item();
        if !total.is_finite() {
            return Err(VdpError::Diverged {
                epoch,
                last_loss: totals.last().copied().unwrap_or(f64::NAN),
                last_good: Box::new(last_good),
            });
        }
        curve.push(CurvePoint {
            epoch,
            total,
            rec: values.rec,
            spl: values.spl,
            var: values.var,
        });
        totals.push(total);
        let info = EpochInfo {
            epoch,
            terms: values,
            total,
            frames: tape.value(rollout.frames),
        };
        let mut stop = observer(&info) == Control::Stop;
        if cfg.early_stop && !stop {
            if let Some(e) = detect_plateau(&totals, cfg.plateau_window, cfg.plateau_tol) {
                early_stop_epoch = Some(e);
                stop = true;
            }
        }
        if stop {
            epoch_seconds.push(start.elapsed().as_secs_f64());
            break;
        }
        let grads = tape.backward(loss)?;
        last_good.clone_from(model.params());
        let params = model.params_mut();
        params.zero_grad();
        params.accumulate(&grads, &bound);
        adam_step(params, &mut adam)?;
        epoch_seconds.push(start.elapsed().as_secs_f64());
    }

    // Decode once more with the final weights and keep its statistics for
    // every later inference decode.
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape, false);
    let rollout = model.rollout_on(&mut tape, &bound, steps, include_initial, None)?;
    let frames = tape.value(rollout.frames).clone();
    let latents = rollout.latents.iter().map(|&v| tape.value(v).clone()).collect();
    model.set_frozen_stats(Some(rollout.norm_stats));
    let mut warnings = Vec::new();
    if frames.shape()[0] == 1 && cfg.arch.norm == crate::diffcore::NormMode::Batch {
        warnings.push("batch normalization over a single frame uses per-frame statistics".into());
    }
    Ok(FitResult {
        model,
        curve,
        frames,
        latents,
        epoch_seconds,
        early_stop_epoch,
        mapping: cfg.mapping,
        warnings,
    })
}

/// CSV with columns `epoch,total,rec,spl,var`.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("epoch,total,rec,spl,var\n");
    for p in curve {
        s.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", p.epoch, p.total, p.rec, p.spl, p.var));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_on_geometric_and_flat_curves() {
        let geometric: Vec<f64> = (0..500).map(|e| 0.9f64.powi(e)).collect();
        assert_eq!(detect_plateau(&geometric, 10, 1e-3), None);
        let mut flat: Vec<f64> = (0..100).map(|e| 1.0 / (1.0 + e as f64)).collect();
        flat.extend(std::iter::repeat(0.01).take(100));
        let k = 99;
        let got = detect_plateau(&flat, 20, 1e-3).unwrap();
        assert!(got <= k + 20, "detected at {got}");
        assert_eq!(detect_plateau(&flat, 1, 1e-3), None);
    }

    #[test]
    fn csv_header() {
        let s = curve_csv(&[CurvePoint {
            epoch: 0,
            total: 1.0,
            rec: 1.0,
            spl: 0.0,
            var: 0.0,
        }]);
        assert!(s.starts_with("epoch,total,rec,spl,var\n0,"));
    }
}
