use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::diffcore::NormMode;
use crate::error::{Result, VdpError};
use crate::losses::{Downsampler, LossSubset, LossWeights, PyramidSpec};
use crate::model::{default_depth, ModelConfig, FULL_HIDDEN, FULL_LATENT_DIM, FULL_LSTM_LAYERS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Denoise,
    Interpolate,
    Superres,
    Removal,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Denoise => "denoise",
            Self::Interpolate => "interpolate",
            Self::Superres => "superres",
            Self::Removal => "removal",
        }
    }
}

/// Which latent reconstructs which input frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMapping {
    /// Input frame `k` is matched by `f(z_k)`, so `f(z_0)` supervises the
    /// first frame and `T − 1` predictor steps cover the rest.
    #[default]
    AuxInitial,
    /// Input frame `k` is matched by `f(z_{k+1})`; `z_0` is never decoded.
    Literal,
}

/// Source of the perceptual feature map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    None,
    Random { seed: u64 },
    Import { path: PathBuf },
}

/// Network sizes, independent of the frame shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub lstm_layers: usize,
    pub base_channels: usize,
    pub min_channels: usize,
    /// Upper bound on decoder depth; the actual depth also depends on the
    /// frame shape.
    pub max_depth: usize,
    pub norm: NormMode,
    pub train_latent: bool,
    pub bptt_window: Option<usize>,
}

impl ArchConfig {
    pub fn paper() -> Self {
        Self {
            latent_dim: FULL_LATENT_DIM,
            hidden: FULL_HIDDEN,
            lstm_layers: FULL_LSTM_LAYERS,
            base_channels: 64,
            min_channels: 8,
            max_depth: 5,
            norm: NormMode::Batch,
            train_latent: false,
            bptt_window: None,
        }
    }

    pub fn desk() -> Self {
        Self {
            latent_dim: 64,
            hidden: 64,
            base_channels: 16,
            min_channels: 4,
            max_depth: 3,
            ..Self::paper()
        }
    }

    pub fn model_config(&self, channels: usize, height: usize, width: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            latent_dim: self.latent_dim,
            hidden: self.hidden,
            lstm_layers: self.lstm_layers,
            channels,
            height,
            width,
            depth: default_depth(height, width, self.max_depth),
            base_channels: self.base_channels,
            min_channels: self.min_channels,
            norm: self.norm,
            init_seed: seed,
            latent_seed: seed.wrapping_add(0x9E37_79B9),
            train_latent: self.train_latent,
            bptt_window: self.bptt_window,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub weights: LossWeights,
    pub ablate: LossSubset,
    pub epochs: usize,
    pub lr: f64,
    /// Seeds weight initialization and `z_0`.
    pub seed: u64,
    pub arch: ArchConfig,
    pub features: FeatureSource,
    pub pyramid: PyramidSpec,
    pub mapping: FrameMapping,
    pub early_stop: bool,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    /// Interpolation: intermediate latent mixing weights.
    pub alphas: Vec<f64>,
    /// Super-resolution factor.
    pub scale: usize,
    /// Fits whose estimated tape exceeds this are rejected before starting.
    pub memory_limit_bytes: u64,
}

/// Default interpolation weights (4×).
pub const FOUR_X_ALPHAS: [f64; 3] = [0.25, 0.5, 0.75];
pub const DEFAULT_LR: f64 = 5e-4;
pub const DEFAULT_MEMORY_LIMIT: u64 = 8 << 30;

/// Interior mixing weights `k / factor` for `k = 1 … factor − 1`.
pub fn alphas_for_factor(factor: usize) -> Result<Vec<f64>> {
    if factor < 2 {
        return Err(VdpError::Config(format!("interpolation factor must be ≥ 2, got {factor}")));
    }
    Ok((1..factor).map(|k| k as f64 / factor as f64).collect())
}

pub fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(VdpError::Config("at least one interpolation weight is required".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(VdpError::Config(format!("interpolation weight {a} must lie in (0, 1)")));
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(VdpError::Config("interpolation weights must be strictly increasing".into()));
    }
    Ok(())
}

/// Full-size epoch counts divided by this give the desk presets.
pub const DESK_EPOCH_DIVISOR: usize = 6;

impl TaskConfig {
    /// Hyperparameters for full-size runs.
    pub fn paper(kind: TaskKind) -> Self {
        let (weights, epochs) = match kind {
            TaskKind::Denoise => (LossWeights::new(1.0, 1e-4, 1e-4), 3600),
            TaskKind::Interpolate => (LossWeights::new(1.0, 1e-4, 1e-4), 1800),
            TaskKind::Superres => (LossWeights::new(1.0, 0.01, 1e-4), 4200),
            TaskKind::Removal => (LossWeights::new(1.0, 0.01, 1e-4), 1800),
        };
        Self {
            kind,
            weights,
            ablate: LossSubset::All,
            epochs,
            lr: DEFAULT_LR,
            seed: 0,
            arch: ArchConfig::paper(),
            features: FeatureSource::Random { seed: 0 },
            pyramid: PyramidSpec::default(),
            mapping: FrameMapping::AuxInitial,
            early_stop: false,
            plateau_window: 50,
            plateau_tol: 1e-3,
            alphas: FOUR_X_ALPHAS.to_vec(),
            scale: 4,
            memory_limit_bytes: DEFAULT_MEMORY_LIMIT,
        }
    }

    /// Same losses with the reduced architecture and fewer epochs.
    pub fn desk(kind: TaskKind) -> Self {
        let paper = Self::paper(kind);
        Self {
            epochs: paper.epochs / DESK_EPOCH_DIVISOR,
            arch: ArchConfig::desk(),
            ..paper
        }
    }

    /// `paper-<task>` or `desk-<task>`.
    pub fn preset(name: &str) -> Result<Self> {
        let (family, task) = name
            .split_once('-')
            .ok_or_else(|| VdpError::Config(format!("unknown preset `{name}`")))?;
        let kind = match task {
            "denoise" => TaskKind::Denoise,
            "interpolate" | "interp" => TaskKind::Interpolate,
            "superres" | "sr" => TaskKind::Superres,
            "remove" | "removal" => TaskKind::Removal,
            _ => return Err(VdpError::Config(format!("unknown preset `{name}`"))),
        };
        match family {
            "paper" => Ok(Self::paper(kind)),
            "desk" => Ok(Self::desk(kind)),
            _ => Err(VdpError::Config(format!("unknown preset `{name}`"))),
        }
    }

    /// Weights after the ablation mask.
    pub fn effective_weights(&self) -> LossWeights {
        self.ablate.apply(self.weights)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(VdpError::Config("epochs must be ≥ 1".into()));
        }
        if !(self.lr > 0.0 && self.lr < 1.0) {
            return Err(VdpError::Config(format!("learning rate must lie in (0, 1), got {}", self.lr)));
        }
        self.effective_weights().validate()?;
        if self.plateau_window < 2 {
            return Err(VdpError::Config("plateau window must be ≥ 2".into()));
        }
        if self.pyramid.factors.is_empty() && self.weights.spl > 0.0 {
            return Err(VdpError::Config("spatial pyramid needs at least one factor".into()));
        }
        if self.pyramid.kernel == Downsampler::Bicubic && self.pyramid.factors.contains(&0) {
            return Err(VdpError::Config("pyramid factors must be ≥ 1".into()));
        }
        match self.kind {
            TaskKind::Interpolate => validate_alphas(&self.alphas)?,
            TaskKind::Superres if ![1, 2, 4, 8].contains(&self.scale) => {
                return Err(VdpError::Config(format!("super-resolution scale must be 2, 4 or 8, got {}", self.scale)))
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_pin_appendix_values() {
        let d = TaskConfig::preset("paper-denoise").unwrap();
        assert_eq!((d.weights, d.epochs, d.lr), (LossWeights::new(1.0, 1e-4, 1e-4), 3600, 5e-4));
        let s = TaskConfig::preset("paper-superres").unwrap();
        assert_eq!((s.weights.spl, s.epochs), (0.01, 4200));
        assert_eq!(TaskConfig::preset("paper-interpolate").unwrap().epochs, 1800);
        let r = TaskConfig::preset("paper-remove").unwrap();
        assert_eq!((r.weights, r.epochs), (LossWeights::new(1.0, 0.01, 1e-4), 1800));
        assert_eq!(TaskConfig::preset("desk-denoise").unwrap().epochs, 600);
        assert!(TaskConfig::preset("fast-denoise").is_err());
    }

    #[test]
    fn alpha_rules() {
        assert_eq!(alphas_for_factor(4).unwrap(), FOUR_X_ALPHAS);
        assert_eq!(alphas_for_factor(2).unwrap(), [0.5]);
        assert!(alphas_for_factor(1).is_err());
        assert!(validate_alphas(&[0.0, 0.5]).is_err());
        assert!(validate_alphas(&[0.5, 1.0]).is_err());
        assert!(validate_alphas(&[0.6, 0.4]).is_err());
    }
}
