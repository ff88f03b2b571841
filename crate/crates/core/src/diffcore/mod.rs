//! Small-tensor differentiable compute: tensors, a recording tape with exact
//! reverse-mode gradients, Adam, and a finite-difference gradient checker.

mod adam;
mod gradcheck;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_probes, ProbeReport};
pub use kernels::{NormMode, NormStats, LEAKY_SLOPE};
pub use params::{Bound, ParamId, ParamLeaf, ParamStore};
pub use tape::{apply_mask, Gradients, Tape, Var};
pub use tensor::Tensor;
