//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Result, VdpError};

/// Relative step for central differences: `h = STEP · max(1, |x|)`.
pub const STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared absolutely.
pub const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub leaf: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(VdpError::Dimension {
            op: "grad_check",
            axis: "output",
            expected: 1,
            got: t.len(),
        });
    }
    Ok(t.item())
}

fn eval<F>(f: &F, leaves: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)
}

/// Compares the tape gradient of scalar `f` against central differences on
/// `probe_count` coordinates per leaf (all coordinates when the leaf is
/// smaller). Returns every probe; see [`grad_check`] for the maximum.
pub fn grad_check_probes<F>(f: F, leaves: &[Tensor], probe_count: usize, seed: u64) -> Result<Vec<ProbeReport>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor> = leaves.to_vec();
    let mut reports = Vec::new();
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(leaf.shape()));
        let indices: Vec<usize> = if leaf.len() <= probe_count {
            (0..leaf.len()).collect()
        } else {
            (0..probe_count).map(|_| rng.random_range(0..leaf.len())).collect()
        };
        for index in indices {
            let x0 = leaf.data()[index];
            let h = STEP * x0.abs().max(1.0);
            work[k].data_mut()[index] = x0 + h;
            let fp = eval(&f, &work)?;
            work[k].data_mut()[index] = x0 - h;
            let fm = eval(&f, &work)?;
            work[k].data_mut()[index] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[index];
            let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            reports.push(ProbeReport {
                leaf: k,
                index,
                analytic: a,
                numeric,
                rel_err,
            });
        }
    }
    Ok(reports)
}

/// Maximum relative error between reverse-mode and finite-difference
/// gradients over the sampled coordinates.
pub fn grad_check<F>(f: F, leaves: &[Tensor], probe_count: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(grad_check_probes(f, leaves, probe_count, seed)?
        .iter()
        .fold(0.0, |m, r| m.max(r.rel_err)))
}
