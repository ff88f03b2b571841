//! Frame decoder: latent → projected grid → ×2 up-blocks with concatenation
//! skips → 3×3 conv → sigmoid.
//!
//! Each up-block is `u = up2(x); y = lrelu(norm(conv3x3(u))); x' = [y, u]`.
//! Every convolution (and the latent projection) is followed by normalization
//! and LeakyReLU(0.2), except the last one, which feeds the sigmoid.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::init::uniform;
use crate::diffcore::{Bound, NormStats, ParamId, ParamStore, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::error::{Result, VdpError};

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct UpBlock {
    pub conv: Conv,
    pub norm: Norm,
}

#[derive(Clone, Debug)]
pub struct FdNet {
    pub(crate) proj: Conv,
    pub(crate) proj_norm: Norm,
    pub(crate) blocks: Vec<UpBlock>,
    pub(crate) last: Conv,
    cfg: ModelConfig,
}

fn add_norm(store: &mut ParamStore, name: &str, c: usize) -> Norm {
    Norm {
        gamma: store.add(format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
        beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c])),
    }
}

fn add_conv(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cout: usize, cin: usize, k: usize) -> Conv {
    let bound = 1.0 / ((cin * k * k) as f64).sqrt();
    Conv {
        weight: store.add(format!("{name}.weight"), uniform(rng, &[cout, cin, k, k], bound)),
        bias: store.add(format!("{name}.bias"), uniform(rng, &[cout], bound)),
    }
}

impl FdNet {
    pub(crate) fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let grid = cfg.base_channels * cfg.base_height() * cfg.base_width();
        let bound = 1.0 / (cfg.latent_dim as f64).sqrt();
        let proj = Conv {
            weight: store.add("fdnet.proj.weight", uniform(rng, &[grid, cfg.latent_dim], bound)),
            bias: store.add("fdnet.proj.bias", uniform(rng, &[grid], bound)),
        };
        let proj_norm = add_norm(store, "fdnet.proj.norm", cfg.base_channels);
        let mut width = cfg.base_channels;
        let mut blocks = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let out = cfg.block_width(i);
            let conv = add_conv(store, rng, &format!("fdnet.block{i}.conv"), out, width, 3);
            let norm = add_norm(store, &format!("fdnet.block{i}.norm"), out);
            blocks.push(UpBlock { conv, norm });
            width += out;
        }
        let last = add_conv(store, rng, "fdnet.final", cfg.channels, width, 3);
        Self {
            proj,
            proj_norm,
            blocks,
            last,
            cfg: cfg.clone(),
        }
    }

    /// Number of normalization layers (one per recorded [`NormStats`]).
    pub fn norm_layers(&self) -> usize {
        1 + self.blocks.len()
    }

    pub(crate) fn last_conv(&self) -> (ParamId, ParamId) {
        (self.last.weight, self.last.bias)
    }

    /// Decodes latents `[N, D]` (or a single `[D]`) to frames `[N, C, H, W]`.
    ///
    /// With `frozen` set, normalization uses those statistics; otherwise the
    /// statistics come from this batch and are returned.
    pub fn decode(&self, tape: &mut Tape, p: &Bound, latents: Var, frozen: Option<&[NormStats]>) -> Result<(Var, Vec<NormStats>)> {
        let cfg = &self.cfg;
        let lat = tape.value(latents).shape().to_vec();
        let n = match *lat.as_slice() {
            [d] if d == cfg.latent_dim => 1,
            [n, d] if d == cfg.latent_dim => n,
            _ => {
                return Err(VdpError::Dimension {
                    op: "fdnet_decode",
                    axis: "latent",
                    expected: cfg.latent_dim,
                    got: *lat.last().unwrap_or(&0),
                })
            }
        };
        if let Some(f) = frozen {
            if f.len() != self.norm_layers() {
                return Err(VdpError::Dimension {
                    op: "fdnet_decode",
                    axis: "norm_stats",
                    expected: self.norm_layers(),
                    got: f.len(),
                });
            }
        }
        let latents = if lat.len() == 1 {
            tape.reshape(latents, &[1, cfg.latent_dim])?
        } else {
            latents
        };
        let mut recorded = Vec::with_capacity(self.norm_layers());
        let mut norm = |tape: &mut Tape, x: Var, layer: &Norm, k: usize| -> Result<Var> {
            let (g, b) = (p.var(layer.gamma), p.var(layer.beta));
            let y = match frozen {
                Some(stats) => {
                    recorded.push(stats[k].clone());
                    tape.norm_frozen(x, g, b, &stats[k])?
                }
                None => {
                    let (y, s) = tape.norm_train(x, g, b, cfg.norm)?;
                    recorded.push(s);
                    y
                }
            };
            Ok(tape.leaky_relu(y, LEAKY_SLOPE))
        };

        let grid = tape.linear(latents, p.var(self.proj.weight), p.var(self.proj.bias))?;
        let grid = tape.reshape(grid, &[n, cfg.base_channels, cfg.base_height(), cfg.base_width()])?;
        let mut x = norm(tape, grid, &self.proj_norm, 0)?;
        for (i, block) in self.blocks.iter().enumerate() {
            let u = tape.upsample_nearest(x, 2)?;
            let y = tape.conv2d(u, p.var(block.conv.weight), p.var(block.conv.bias), 1, 1)?;
            let y = norm(tape, y, &block.norm, i + 1)?;
            x = tape.concat_channels(&[y, u])?;
        }
        let out = tape.conv2d(x, p.var(self.last.weight), p.var(self.last.bias), 1, 1)?;
        Ok((tape.sigmoid(out), recorded))
    }
}
