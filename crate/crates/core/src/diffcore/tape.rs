//! Graph-recording reverse-mode differentiation.
//!
//! Every forward operation appends a node holding its value and enough of its
//! inputs to replay the backward kernel. A tape lives for one forward/backward
//! pass (one optimization epoch) and is then dropped.

use std::rc::Rc;

use super::kernels::{self, LstmCache, NormMode, NormStats};
use super::tensor::Tensor;
use crate::error::{Result, VdpError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Detach,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Sum(Var),
    Reshape(Var),
    Slice { x: Var, start: usize },
    Stack(Vec<Var>),
    Concat(Vec<Var>),
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Upsample { x: Var, factor: usize },
    AvgPool { x: Var, factor: usize },
    Resample { x: Var, rows: Rc<Vec<f64>>, cols: Rc<Vec<f64>> },
    Norm { x: Var, gamma: Var, beta: Var, stats: NormStats, from_input: bool },
    Lstm { x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b: Var, cache: LstmCache },
    MaskMul { x: Var, mask: Rc<Tensor> },
    L1 { a: Var, b: Var },
    Variation(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dim(op: &'static str, axis: &'static str, expected: usize, got: usize) -> VdpError {
    VdpError::Dimension {
        op,
        axis,
        expected,
        got,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (parameter or probe).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Same value, no gradient flow (used for truncated backpropagation).
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.nodes.push(Node {
            value,
            op: Op::Detach,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(VdpError::Dimension {
                op,
                axis: "shape",
                expected: sa.iter().product(),
                got: sb.iter().product(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).map(|a| a * s);
        self.push(v, Op::Scale(x, s), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(kernels::sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).map(|a| kernels::leaky_relu(a, slope));
        self.push(v, Op::LeakyRelu(x, slope), &[x])
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Contiguous flat range `[start, start + numel(shape))` reshaped to `shape`.
    pub fn slice(&mut self, x: Var, start: usize, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        let src = self.value(x);
        if start + len > src.len() {
            return Err(dim("slice", "range", src.len(), start + len));
        }
        let v = Tensor::new(shape, src.data()[start..start + len].to_vec())?;
        Ok(self.push(v, Op::Slice { x, start }, &[x]))
    }

    /// Frame `index` of an `[N, …]` batch.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let inner: usize = shape[1..].iter().product();
        if index >= shape[0] {
            return Err(dim("select", "batch", shape[0], index));
        }
        let sub = if shape.len() == 1 { vec![1] } else { shape[1..].to_vec() };
        self.slice(x, index * inner, &sub)
    }

    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<Tensor> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let v = Tensor::stack(&vals)?;
        Ok(self.push(v, Op::Stack(parts.to_vec()), parts))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = kernels::concat_channels(&vals)?;
        Ok(self.push(v, Op::Concat(parts.to_vec()), parts))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let v = kernels::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(v, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let v = kernels::conv2d(self.value(x), self.value(w), self.value(b), stride, pad)?;
        Ok(self.push(v, Op::Conv2d { x, w, b, stride, pad }, &[x, w, b]))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let v = kernels::upsample_nearest(self.value(x), factor)?;
        Ok(self.push(v, Op::Upsample { x, factor }, &[x]))
    }

    pub fn downsample_area(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 1 {
            return Ok(x);
        }
        let v = kernels::downsample_area(self.value(x), factor)?;
        Ok(self.push(v, Op::AvgPool { x, factor }, &[x]))
    }

    /// Separable linear resampling with fixed row/column matrices.
    pub fn resample(&mut self, x: Var, rows: Rc<Vec<f64>>, out_h: usize, cols: Rc<Vec<f64>>, out_w: usize) -> Result<Var> {
        let v = kernels::resample_separable(self.value(x), &rows, out_h, &cols, out_w)?;
        Ok(self.push(v, Op::Resample { x, rows, cols }, &[x]))
    }

    /// Normalization with statistics taken from `x` itself. Returns the
    /// output and the statistics used.
    pub fn norm_train(&mut self, x: Var, gamma: Var, beta: Var, mode: NormMode) -> Result<(Var, NormStats)> {
        let stats = kernels::norm_stats(self.value(x), mode)?;
        let v = kernels::normalize(self.value(x), self.value(gamma), self.value(beta), &stats)?;
        let out = self.push(
            v,
            Op::Norm {
                x,
                gamma,
                beta,
                stats: stats.clone(),
                from_input: true,
            },
            &[x, gamma, beta],
        );
        Ok((out, stats))
    }

    /// Normalization with fixed, previously recorded statistics.
    pub fn norm_frozen(&mut self, x: Var, gamma: Var, beta: Var, stats: &NormStats) -> Result<Var> {
        let v = kernels::normalize(self.value(x), self.value(gamma), self.value(beta), stats)?;
        Ok(self.push(
            v,
            Op::Norm {
                x,
                gamma,
                beta,
                stats: stats.clone(),
                from_input: false,
            },
            &[x, gamma, beta],
        ))
    }

    /// One LSTM update; returns `(h', c')`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<(Var, Var)> {
        let (v, cache) = kernels::lstm_cell(
            self.value(x),
            self.value(h),
            self.value(c),
            self.value(w_ih),
            self.value(w_hh),
            self.value(b),
        )?;
        let hid = self.value(h).len();
        let both = self.push(v, Op::Lstm { x, h, c, w_ih, w_hh, b, cache }, &[x, h, c, w_ih, w_hh, b]);
        let hn = self.slice(both, 0, &[hid])?;
        let cn = self.slice(both, hid, &[hid])?;
        Ok((hn, cn))
    }

    /// Elementwise product with a fixed mask. A single-channel mask broadcasts
    /// over channels.
    pub fn mask_mul(&mut self, x: Var, mask: Rc<Tensor>) -> Result<Var> {
        let v = apply_mask(self.value(x), &mask)?;
        Ok(self.push(v, Op::MaskMul { x, mask }, &[x]))
    }

    /// Σ over frames of per-frame mean |a − b|.
    pub fn l1_frames(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::l1_frames(self.value(a), self.value(b))?;
        Ok(self.push(Tensor::scalar(v), Op::L1 { a, b }, &[a, b]))
    }

    /// Σ over frames of per-frame normalized anisotropic total variation.
    pub fn variation(&mut self, x: Var) -> Result<Var> {
        let v = kernels::total_variation(self.value(x))?;
        Ok(self.push(Tensor::scalar(v), Op::Variation(x), &[x]))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(dim("backward", "output", 1, self.value(output).len()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), 1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::Scale(x, s) => acc(*x, g.map(|v| v * s)),
            Op::Tanh(x) => acc(*x, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Sigmoid(x) => acc(*x, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))),
            Op::LeakyRelu(x, slope) => {
                acc(*x, g.zip_map(self.value(*x), |gv, xv| if xv >= 0.0 { gv } else { gv * slope }));
            }
            Op::Sum(x) => acc(*x, Tensor::full(self.value(*x).shape(), g.item())),
            Op::Reshape(x) => acc(*x, g.clone().reshaped(self.value(*x).shape())?),
            Op::Slice { x, start } => {
                let src = self.value(*x);
                let mut t = Tensor::zeros(src.shape());
                t.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                acc(*x, t);
            }
            Op::Stack(parts) => {
                for (k, &p) in parts.iter().enumerate() {
                    acc(p, g.slice_outer(k)?.reshaped(self.value(p).shape())?);
                }
            }
            Op::Concat(parts) => {
                let (n, _, h, w) = g.nchw()?;
                let total_c = g.nchw()?.1;
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pshape = self.value(p).shape().to_vec();
                    let pc = self.value(p).nchw()?.1;
                    let mut data = Vec::with_capacity(n * pc * plane);
                    for b in 0..n {
                        data.extend_from_slice(&g.data()[(b * total_c + offset) * plane..][..pc * plane]);
                    }
                    offset += pc;
                    acc(p, Tensor::new(&pshape, data)?);
                }
            }
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = kernels::linear_backward(self.value(*x), self.value(*w), g)?;
                acc(*x, gx);
                acc(*w, gw);
                acc(*b, gb);
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (gx, gw, gb) = kernels::conv2d_backward(self.value(*x), self.value(*w), g, *stride, *pad)?;
                acc(*x, gx);
                acc(*w, gw);
                acc(*b, gb);
            }
            Op::Upsample { x, factor } => {
                acc(*x, kernels::upsample_nearest_backward(self.value(*x).shape(), g, *factor)?);
            }
            Op::AvgPool { x, factor } => {
                acc(*x, kernels::downsample_area_backward(self.value(*x).shape(), g, *factor)?);
            }
            Op::Resample { x, rows, cols } => {
                let (_, _, ho, wo) = node.value.nchw()?;
                acc(
                    *x,
                    kernels::resample_separable_backward(self.value(*x).shape(), rows, ho, cols, wo, g)?,
                );
            }
            Op::Norm { x, gamma, beta, stats, from_input } => {
                let (gx, gg, gb) = kernels::normalize_backward(self.value(*x), self.value(*gamma), stats, g, *from_input)?;
                acc(*x, gx);
                acc(*gamma, gg);
                acc(*beta, gb);
            }
            Op::Lstm { x, h, c, w_ih, w_hh, b, cache } => {
                let lg = kernels::lstm_cell_backward(
                    self.value(*x),
                    self.value(*h),
                    self.value(*c),
                    self.value(*w_ih),
                    self.value(*w_hh),
                    cache,
                    g,
                )?;
                acc(*x, lg.x);
                acc(*h, lg.h);
                acc(*c, lg.c);
                acc(*w_ih, lg.w_ih);
                acc(*w_hh, lg.w_hh);
                acc(*b, lg.bias);
            }
            Op::MaskMul { x, mask } => acc(*x, apply_mask(g, mask)?),
            Op::L1 { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = g.item() / kernels::frame_numel(va.shape()) as f64;
                let ga = va.zip_map(vb, |x, y| kernels::sign(x - y) * scale);
                if self.needs(*b) {
                    acc(*b, ga.map(|v| -v));
                }
                acc(*a, ga);
            }
            Op::Variation(x) => acc(*x, kernels::total_variation_backward(self.value(*x), g.item())?),
        }
        Ok(())
    }
}

/// `x ⊙ mask`, broadcasting a single-channel mask over the channel axis.
pub fn apply_mask(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.nchw()?;
    let (mn, mc, mh, mw) = mask.nchw()?;
    if mn != n {
        return Err(dim("mask", "frames", n, mn));
    }
    if mh != h {
        return Err(dim("mask", "height", h, mh));
    }
    if mw != w {
        return Err(dim("mask", "width", w, mw));
    }
    if mc != 1 && mc != c {
        return Err(dim("mask", "channels", c, mc));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(x.len());
    for (p, vals) in x.data().chunks_exact(plane).enumerate() {
        let (b, ch) = (p / c, p % c);
        let mp = if mc == 1 { b } else { b * c + ch };
        let m = &mask.data()[mp * plane..][..plane];
        out.extend(vals.iter().zip(m).map(|(v, mv)| v * mv));
    }
    Tensor::new(x.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_shared_use_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(&[2], vec![3.0, -1.0]).unwrap());
        let y = t.mul(x, x).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0, -2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::full(&[3], 1.0));
        let c = t.constant(Tensor::full(&[3], 2.0));
        let y = t.mul(x, c).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[2.0; 3]);
    }

    #[test]
    fn detach_blocks_flow() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::full(&[2], 1.5));
        let d = t.detach(x);
        let y = t.mul(d, x).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.5, 1.5]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::full(&[2], 1.0));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.tanh(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 1.0);
    }
}
