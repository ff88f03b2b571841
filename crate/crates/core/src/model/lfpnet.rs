//! Latent frame predictor: input projection, a stack of LSTM layers, and a
//! tanh-bounded output projection, advancing `z_t → z_{t+1}`.

use rand_chacha::ChaCha8Rng;

use super::init::uniform;
use crate::diffcore::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub(crate) struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct LfpNet {
    pub(crate) in_w: ParamId,
    pub(crate) in_b: ParamId,
    pub(crate) layers: Vec<LstmLayer>,
    pub(crate) out_w: ParamId,
    pub(crate) out_b: ParamId,
    hidden: usize,
}

/// Recurrent state on a tape: one `(h, c)` pair per LSTM layer.
pub type TapeState = Vec<(Var, Var)>;

impl LfpNet {
    pub(crate) fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, latent: usize, hidden: usize, layers: usize) -> Self {
        let bound_in = 1.0 / (latent as f64).sqrt();
        let in_w = store.add("lfpnet.input.weight", uniform(rng, &[hidden, latent], bound_in));
        let in_b = store.add("lfpnet.input.bias", uniform(rng, &[hidden], bound_in));
        let bound_h = 1.0 / (hidden as f64).sqrt();
        let layers = (0..layers)
            .map(|k| {
                let w_ih = store.add(format!("lfpnet.lstm{k}.w_ih"), uniform(rng, &[4 * hidden, hidden], bound_h));
                let w_hh = store.add(format!("lfpnet.lstm{k}.w_hh"), uniform(rng, &[4 * hidden, hidden], bound_h));
                let mut b = uniform(rng, &[4 * hidden], bound_h);
                // Forget gate starts open.
                b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v += 1.0);
                let bias = store.add(format!("lfpnet.lstm{k}.bias"), b);
                LstmLayer { w_ih, w_hh, bias }
            })
            .collect();
        let out_w = store.add("lfpnet.output.weight", uniform(rng, &[latent, hidden], bound_h));
        let out_b = store.add("lfpnet.output.bias", uniform(rng, &[latent], bound_h));
        Self {
            in_w,
            in_b,
            layers,
            out_w,
            out_b,
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layers(&self) -> usize {
        self.layers.len()
    }

    /// Zeroed recurrent state as tape constants.
    pub fn zero_state(&self, tape: &mut Tape) -> TapeState {
        (0..self.layers.len())
            .map(|_| {
                let h = tape.constant(Tensor::zeros(&[self.hidden]));
                let c = tape.constant(Tensor::zeros(&[self.hidden]));
                (h, c)
            })
            .collect()
    }

    /// `z_{t+1} = tanh(W_out · h_last + b_out)`; updates `state` in place.
    pub fn step(&self, tape: &mut Tape, p: &Bound, z: Var, state: &mut TapeState) -> Result<Var> {
        let mut x = tape.linear(z, p.var(self.in_w), p.var(self.in_b))?;
        for (layer, (h, c)) in self.layers.iter().zip(state.iter_mut()) {
            let (hn, cn) = tape.lstm_cell(x, *h, *c, p.var(layer.w_ih), p.var(layer.w_hh), p.var(layer.bias))?;
            *h = hn;
            *c = cn;
            x = hn;
        }
        let out = tape.linear(x, p.var(self.out_w), p.var(self.out_b))?;
        Ok(tape.tanh(out))
    }
}
