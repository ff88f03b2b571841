use serde::{Deserialize, Serialize};

use crate::diffcore::NormMode;
use crate::error::{Result, VdpError};

/// Latent dimension used for full-size runs.
pub const FULL_LATENT_DIM: usize = 1024;
/// LSTM cells per layer for full-size runs.
pub const FULL_HIDDEN: usize = 1024;
pub const FULL_LSTM_LAYERS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub lstm_layers: usize,
    /// Output frame shape `(C, H, W)`.
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Number of ×2 up-sampling decoder blocks.
    pub depth: usize,
    /// Channels of the projected latent grid.
    pub base_channels: usize,
    /// Lower bound on decoder block widths.
    pub min_channels: usize,
    pub norm: NormMode,
    /// Seed for weight initialization.
    pub init_seed: u64,
    /// Seed for the initial latent `z_0`.
    pub latent_seed: u64,
    /// Optimize `z_0` together with the network weights.
    pub train_latent: bool,
    /// Truncate backpropagation through time every this many steps.
    pub bptt_window: Option<usize>,
}

impl ModelConfig {
    /// Full-size architecture: D = 1024, four LSTM layers of 1024 cells.
    pub fn paper(channels: usize, height: usize, width: usize) -> Self {
        Self {
            latent_dim: FULL_LATENT_DIM,
            hidden: FULL_HIDDEN,
            lstm_layers: FULL_LSTM_LAYERS,
            channels,
            height,
            width,
            depth: default_depth(height, width, 5),
            base_channels: 64,
            min_channels: 8,
            norm: NormMode::Batch,
            init_seed: 0,
            latent_seed: 0,
            train_latent: false,
            bptt_window: None,
        }
    }

    /// Reduced widths for small frames on a CPU.
    pub fn desk(channels: usize, height: usize, width: usize) -> Self {
        Self {
            latent_dim: 64,
            hidden: 64,
            lstm_layers: FULL_LSTM_LAYERS,
            depth: default_depth(height, width, 3),
            base_channels: 16,
            min_channels: 4,
            ..Self::paper(channels, height, width)
        }
    }

    pub fn base_height(&self) -> usize {
        self.height >> self.depth
    }

    pub fn base_width(&self) -> usize {
        self.width >> self.depth
    }

    /// Output width of decoder block `i`.
    pub fn block_width(&self, i: usize) -> usize {
        (self.base_channels >> (i + 1)).max(self.min_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VdpError::Config(m));
        if self.latent_dim == 0 {
            return bad("latent dimension must be ≥ 1".into());
        }
        if self.hidden == 0 || self.lstm_layers == 0 {
            return bad("LSTM needs at least one layer with one cell".into());
        }
        if self.channels == 0 || self.base_channels == 0 || self.min_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        let f = 1usize << self.depth;
        if self.height % f != 0 || self.width % f != 0 || self.height < f || self.width < f {
            return bad(format!(
                "frame {}×{} is not divisible by 2^depth = {f}",
                self.height, self.width
            ));
        }
        if self.bptt_window == Some(0) {
            return bad("bptt window must be ≥ 1".into());
        }
        Ok(())
    }
}

/// Largest depth ≤ `max_depth` that divides both extents and leaves a base
/// grid of at least 2×2.
pub fn default_depth(height: usize, width: usize, max_depth: usize) -> usize {
    (0..=max_depth)
        .rev()
        .find(|&d| {
            let f = 1 << d;
            height % f == 0 && width % f == 0 && height / f >= 2 && width / f >= 2
        })
        .unwrap_or(0)
}
