//! Fixed convolutional feature map used by the perceptual part of the
//! reconstruction loss.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{kernels, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::error::{Result, VdpError};
use crate::model::{read_tensor_file, write_tensor_file, TensorFile};

/// Default widths of the three feature blocks.
pub const DEFAULT_WIDTHS: [usize; 3] = [8, 16, 32];
const STRIDE: usize = 2;

/// Where the extractor weights came from.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    RandomSeeded(u64),
    Imported(String),
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    weight: Tensor,
    bias: Tensor,
}

/// Stack of `conv3x3 (stride 2) → LeakyReLU` blocks. The output of every
/// block is a tap. Weights never change after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    blocks: Vec<Block>,
    provenance: Provenance,
}

impl FeatureExtractor {
    /// Random weights with the default widths.
    pub fn random(in_channels: usize, seed: u64) -> Self {
        Self::random_with_widths(in_channels, &DEFAULT_WIDTHS, seed)
    }

    pub fn random_with_widths(in_channels: usize, widths: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = in_channels;
        let blocks = widths
            .iter()
            .map(|&cout| {
                // Kaiming-uniform keeps activations from shrinking with depth.
                let bound = (6.0 / (cin * 9) as f64).sqrt();
                let weight = Tensor::from_fn(&[cout, cin, 3, 3], |_| rng.random_range(-bound..bound));
                cin = cout;
                Block {
                    weight,
                    bias: Tensor::zeros(&[cout]),
                }
            })
            .collect();
        Self {
            blocks,
            provenance: Provenance::RandomSeeded(seed),
        }
    }

    /// Reads `phi.block{k}.weight` / `phi.block{k}.bias` tensors from a
    /// checkpoint file.
    pub fn import(path: &Path) -> Result<Self> {
        let file = read_tensor_file(path)?;
        let mut blocks = Vec::new();
        while let Some(weight) = file.get(&format!("phi.block{}.weight", blocks.len())) {
            let k = blocks.len();
            let ws = weight.shape();
            if ws.len() != 4 || ws[2] != ws[3] || ws[2] % 2 == 0 {
                return Err(VdpError::format(path, format!("phi.block{k}.weight must be [out, in, k, k] with odd k")));
            }
            let bias = match file.get(&format!("phi.block{k}.bias")) {
                Some(b) if b.shape() == [ws[0]] => b.clone(),
                Some(_) => return Err(VdpError::format(path, format!("phi.block{k}.bias has the wrong shape"))),
                None => Tensor::zeros(&[ws[0]]),
            };
            if let Some(prev) = blocks.last() {
                let prev: &Block = prev;
                if prev.weight.shape()[0] != ws[1] {
                    return Err(VdpError::format(path, format!("phi.block{k} input width does not match block {}", k - 1)));
                }
            }
            blocks.push(Block {
                weight: weight.clone(),
                bias,
            });
        }
        if blocks.is_empty() {
            return Err(VdpError::format(path, "no phi.block0.weight tensor"));
        }
        Ok(Self {
            blocks,
            provenance: Provenance::Imported(path.display().to_string()),
        })
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        let mut file = TensorFile::default();
        file.meta.insert("kind".into(), "feature-extractor".into());
        for (k, b) in self.blocks.iter().enumerate() {
            file.tensors.push((format!("phi.block{k}.weight"), b.weight.clone()));
            file.tensors.push((format!("phi.block{k}.bias"), b.bias.clone()));
        }
        write_tensor_file(path, &file)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn taps(&self) -> usize {
        self.blocks.len()
    }

    pub fn in_channels(&self) -> usize {
        self.blocks[0].weight.shape()[1]
    }

    /// Tap activations of `x` (`[C, H, W]` or `[N, C, H, W]`).
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut cur = x.clone();
        for b in &self.blocks {
            let pad = b.weight.shape()[2] / 2;
            let y = kernels::conv2d(&cur, &b.weight, &b.bias, STRIDE, pad)?;
            cur = y.map(|v| kernels::leaky_relu(v, LEAKY_SLOPE));
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// Tap activations on a tape. The weights enter as constants.
    pub fn features_on(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut cur = x;
        for b in &self.blocks {
            let pad = b.weight.shape()[2] / 2;
            let w = tape.constant(b.weight.clone());
            let bias = tape.constant(b.bias.clone());
            let y = tape.conv2d(cur, w, bias, STRIDE, pad)?;
            cur = tape.leaky_relu(y, LEAKY_SLOPE);
            out.push(cur);
        }
        Ok(out)
    }
}
