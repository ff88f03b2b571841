//! The network pair: a recurrent latent predictor `g` and a convolutional
//! frame decoder `f`, rolled out as `X̂_{t+1} = f(g(z_t))` from a fixed
//! Gaussian `z_0`.

mod checkpoint;
mod config;
mod fdnet;
mod init;
mod lfpnet;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use checkpoint::{read_tensor_file, write_tensor_file, TensorFile, MAGIC as CHECKPOINT_MAGIC};
pub use config::{default_depth, ModelConfig, FULL_HIDDEN, FULL_LATENT_DIM, FULL_LSTM_LAYERS};
pub use fdnet::FdNet;
pub use lfpnet::{LfpNet, TapeState};

pub use crate::diffcore::ParamStore;
use crate::diffcore::{Bound, NormMode, NormStats, ParamId, Tape, Tensor, Var};
use crate::error::{Result, VdpError};

/// `z_0 ∼ N(0, I)` of dimension `dim`, reproducible from `seed`.
pub fn sample_initial_latent(seed: u64, dim: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[dim], |_| StandardNormal.sample(&mut rng))
}

/// A latent code together with the recurrent state that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub z: Tensor,
    /// `(h, c)` per LSTM layer.
    pub lstm: Vec<(Tensor, Tensor)>,
}

/// Rollout expressed on a tape.
#[derive(Clone, Debug)]
pub struct TapeRollout {
    /// Decoded latents in frame order (`z_0` first when it is decoded).
    pub latents: Vec<Var>,
    /// `[N, C, H, W]` frames, one per latent.
    pub frames: Var,
    pub norm_stats: Vec<NormStats>,
}

/// Rollout values.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `z_1 … z_T`.
    pub latents: Vec<Tensor>,
    /// `X̂_1 … X̂_T` as `[T, C, H, W]`.
    pub frames: Tensor,
    /// `f(z_0)`, when requested.
    pub initial_frame: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Vdp {
    config: ModelConfig,
    params: ParamStore,
    lfp: LfpNet,
    fd: FdNet,
    z0: Tensor,
    z0_param: Option<ParamId>,
    frozen_stats: Option<Vec<NormStats>>,
}

impl Vdp {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let lfp = LfpNet::init(&mut params, &mut rng, config.latent_dim, config.hidden, config.lstm_layers);
        let fd = FdNet::init(&mut params, &mut rng, &config);
        let z0 = sample_initial_latent(config.latent_seed, config.latent_dim);
        let z0_param = config.train_latent.then(|| params.add("latent.z0", z0.clone()));
        Ok(Self {
            config,
            params,
            lfp,
            fd,
            z0,
            z0_param,
            frozen_stats: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn lfpnet(&self) -> &LfpNet {
        &self.lfp
    }

    pub fn fdnet(&self) -> &FdNet {
        &self.fd
    }

    /// Current `z_0` (the trained value when `z_0` is a parameter).
    pub fn initial_latent(&self) -> Tensor {
        match self.z0_param {
            Some(id) => self.params.value(id).clone(),
            None => self.z0.clone(),
        }
    }

    /// Normalization statistics used for inference decodes, if recorded.
    pub fn frozen_stats(&self) -> Option<&[NormStats]> {
        self.frozen_stats.as_deref()
    }

    pub fn set_frozen_stats(&mut self, stats: Option<Vec<NormStats>>) {
        self.frozen_stats = stats;
    }

    /// Sets the final convolution to zero, so every decoded pixel is 0.5.
    pub fn zero_final_layer(&mut self) {
        let (w, b) = self.fd.last_conv();
        self.params.value_mut(w).data_mut().fill(0.0);
        self.params.value_mut(b).data_mut().fill(0.0);
    }

    fn z0_var(&self, tape: &mut Tape, p: &Bound) -> Var {
        match self.z0_param {
            Some(id) => p.var(id),
            None => tape.constant(self.z0.clone()),
        }
    }

    /// One predictor step on a tape.
    pub fn lfpnet_step_on(&self, tape: &mut Tape, p: &Bound, z: Var, state: &mut TapeState) -> Result<Var> {
        self.lfp.step(tape, p, z, state)
    }

    pub fn decode_on(&self, tape: &mut Tape, p: &Bound, latents: Var, frozen: Option<&[NormStats]>) -> Result<(Var, Vec<NormStats>)> {
        self.fd.decode(tape, p, latents, frozen)
    }

    /// Rolls out `steps` predictor steps from `z_0` with zeroed LSTM state and
    /// decodes every latent in one batch. With `include_initial`, `z_0` is
    /// decoded as the first frame.
    pub fn rollout_on(
        &self,
        tape: &mut Tape,
        p: &Bound,
        steps: usize,
        include_initial: bool,
        frozen: Option<&[NormStats]>,
    ) -> Result<TapeRollout> {
        if steps == 0 && !include_initial {
            return Err(VdpError::Config("rollout needs at least one step".into()));
        }
        let mut state = self.lfp.zero_state(tape);
        let mut z = self.z0_var(tape, p);
        let mut latents = Vec::with_capacity(steps + 1);
        if include_initial {
            latents.push(z);
        }
        for t in 0..steps {
            if let Some(w) = self.config.bptt_window {
                if t > 0 && t % w == 0 {
                    z = tape.detach(z);
                    for (h, c) in state.iter_mut() {
                        *h = tape.detach(*h);
                        *c = tape.detach(*c);
                    }
                }
            }
            z = self.lfp.step(tape, p, z, &mut state)?;
            if !tape.value(z).all_finite() {
                return Err(VdpError::NonFiniteState {
                    epoch: 0,
                    timestep: t + 1,
                    what: "latent".into(),
                });
            }
            latents.push(z);
        }
        let stacked = tape.stack(&latents)?;
        let (frames, norm_stats) = self.fd.decode(tape, p, stacked, frozen)?;
        Ok(TapeRollout {
            latents,
            frames,
            norm_stats,
        })
    }

    /// Tensor-level predictor step.
    pub fn lfpnet_step(&self, state: &LatentState) -> Result<LatentState> {
        if state.lstm.len() != self.lfp.layers() {
            return Err(VdpError::Dimension {
                op: "lfpnet_step",
                axis: "layers",
                expected: self.lfp.layers(),
                got: state.lstm.len(),
            });
        }
        if !state.z.all_finite() || state.lstm.iter().any(|(h, c)| !h.all_finite() || !c.all_finite()) {
            return Err(VdpError::NonFiniteState {
                epoch: 0,
                timestep: 0,
                what: "input state".into(),
            });
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let z = tape.constant(state.z.clone());
        let mut st: TapeState = state
            .lstm
            .iter()
            .map(|(h, c)| (tape.constant(h.clone()), tape.constant(c.clone())))
            .collect();
        let zn = self.lfp.step(&mut tape, &p, z, &mut st)?;
        Ok(LatentState {
            z: tape.value(zn).clone(),
            lstm: st
                .iter()
                .map(|&(h, c)| (tape.value(h).clone(), tape.value(c).clone()))
                .collect(),
        })
    }

    /// `z_0` with zeroed recurrent state.
    pub fn initial_state(&self) -> LatentState {
        LatentState {
            z: self.initial_latent(),
            lstm: (0..self.lfp.layers())
                .map(|_| (Tensor::zeros(&[self.config.hidden]), Tensor::zeros(&[self.config.hidden])))
                .collect(),
        }
    }

    /// Decodes `[D]` or `[N, D]` latents, using the frozen statistics when they
    /// exist and batch statistics otherwise.
    pub fn fdnet_decode(&self, latents: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let z = tape.constant(latents.clone());
        let (frames, _) = self.fd.decode(&mut tape, &p, z, self.frozen_stats.as_deref())?;
        let out = tape.value(frames).clone();
        if latents.rank() == 1 {
            out.slice_outer(0)
        } else {
            Ok(out)
        }
    }

    /// Tensor-level rollout of `steps` predictor steps.
    pub fn rollout(&self, steps: usize, include_initial: bool) -> Result<Rollout> {
        if steps == 0 {
            return Err(VdpError::Config("rollout needs T ≥ 1".into()));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let r = self.rollout_on(&mut tape, &p, steps, include_initial, self.frozen_stats.as_deref())?;
        let frames = tape.value(r.frames).clone();
        let skip = include_initial as usize;
        let latents = r.latents[skip..].iter().map(|&v| tape.value(v).clone()).collect();
        let (initial_frame, frames) = if include_initial {
            let (c, h, w) = (self.config.channels, self.config.height, self.config.width);
            let per = c * h * w;
            let init = Tensor::new(&[c, h, w], frames.data()[..per].to_vec())?;
            let rest = Tensor::new(&[steps, c, h, w], frames.data()[per..].to_vec())?;
            (Some(init), rest)
        } else {
            (None, frames)
        };
        Ok(Rollout {
            latents,
            frames,
            initial_frame,
        })
    }

    /// Writes parameters, `z_0`, and frozen statistics as a checkpoint.
    pub fn save_checkpoint(&self, manifest: &Path) -> Result<()> {
        let mut file = TensorFile::default();
        let config = serde_json::to_string(&self.config).map_err(|e| VdpError::Config(e.to_string()))?;
        file.meta.insert("model_config".into(), config);
        for leaf in self.params.leaves() {
            file.tensors.push((leaf.name.clone(), leaf.value.clone()));
        }
        if self.z0_param.is_none() {
            file.tensors.push(("latent.z0".into(), self.z0.clone()));
        }
        if let Some(stats) = &self.frozen_stats {
            for (k, s) in stats.iter().enumerate() {
                file.meta.insert(format!("norm{k}.mode"), format!("{:?}", s.mode).to_lowercase());
                file.tensors.push((format!("norm{k}.mean"), Tensor::new(&[s.mean.len()], s.mean.clone())?));
                file.tensors.push((format!("norm{k}.inv_std"), Tensor::new(&[s.inv_std.len()], s.inv_std.clone())?));
            }
        }
        write_tensor_file(manifest, &file)
    }

    pub fn load_checkpoint(manifest: &Path) -> Result<Self> {
        let file = read_tensor_file(manifest)?;
        let config: ModelConfig = file
            .meta
            .get("model_config")
            .ok_or_else(|| VdpError::format(manifest, "missing model_config"))
            .and_then(|s| serde_json::from_str(s).map_err(|e| VdpError::format(manifest, e.to_string())))?;
        let mut vdp = Vdp::new(config)?;
        for leaf in vdp.params.leaves_mut() {
            let t = file
                .get(&leaf.name)
                .ok_or_else(|| VdpError::format(manifest, format!("missing tensor `{}`", leaf.name)))?;
            if t.shape() != leaf.value.shape() {
                return Err(VdpError::format(manifest, format!("shape mismatch for `{}`", leaf.name)));
            }
            leaf.value = t.clone();
        }
        if let Some(z0) = file.get("latent.z0") {
            vdp.z0 = z0.clone();
        }
        let mut stats = Vec::new();
        for k in 0..vdp.fd.norm_layers() {
            let (Some(mean), Some(inv_std)) = (file.get(&format!("norm{k}.mean")), file.get(&format!("norm{k}.inv_std"))) else {
                break;
            };
            let mode = match file.meta.get(&format!("norm{k}.mode")).map(String::as_str) {
                Some("instance") => NormMode::Instance,
                _ => NormMode::Batch,
            };
            stats.push(NormStats {
                mode,
                mean: mean.data().to_vec(),
                inv_std: inv_std.data().to_vec(),
            });
        }
        if stats.len() == vdp.fd.norm_layers() {
            vdp.frozen_stats = Some(stats);
        }
        Ok(vdp)
    }
}
