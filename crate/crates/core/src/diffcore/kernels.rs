//! Forward and backward kernels on plain tensors. The tape in
//! [`super::tape`] records which kernel produced a node and replays the
//! matching backward kernel.

use super::tensor::{nchw_of, with_chw, Tensor};
use crate::error::{Result, VdpError};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

fn dim_err(op: &'static str, axis: &'static str, expected: usize, got: usize) -> VdpError {
    VdpError::Dimension {
        op,
        axis,
        expected,
        got,
    }
}

// ---------------------------------------------------------------------------
// conv2d

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(x: &[usize], wt: &[usize], b: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (n, cin, h, w) = nchw_of(x, "conv2d")?;
        if wt.len() != 4 {
            return Err(VdpError::Rank {
                op: "conv2d",
                rank: wt.len(),
                shape: wt.to_vec(),
            });
        }
        let (cout, wcin, k, k2) = (wt[0], wt[1], wt[2], wt[3]);
        if wcin != cin {
            return Err(dim_err("conv2d", "in_channels", wcin, cin));
        }
        if k != k2 {
            return Err(dim_err("conv2d", "kernel_width", k, k2));
        }
        if k % 2 == 0 {
            return Err(VdpError::Config(format!("conv2d: kernel size {k} must be odd")));
        }
        if b != [cout] {
            return Err(dim_err("conv2d", "bias", cout, b.iter().product()));
        }
        if stride == 0 {
            return Err(VdpError::Config("conv2d: stride must be positive".into()));
        }
        if h + 2 * pad < k {
            return Err(dim_err("conv2d", "height", k, h + 2 * pad));
        }
        if w + 2 * pad < k {
            return Err(dim_err("conv2d", "width", k, w + 2 * pad));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
            ho,
            wo,
        })
    }

    /// Output columns `ox` whose input column `ox*stride + kx - pad` is in bounds.
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx {
            (self.pad - kx).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeom::new(x.shape(), weight.shape(), bias.shape(), stride, pad)?;
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let mut out = vec![0.0; g.n * g.cout * plane_out];
    for n in 0..g.n {
        for co in 0..g.cout {
            let o = &mut out[(n * g.cout + co) * plane_out..][..plane_out];
            o.fill(bd[co]);
            for ci in 0..g.cin {
                let xin = &xd[(n * g.cin + ci) * plane_in..][..plane_in];
                let wk = &wd[(co * g.cin + ci) * g.k * g.k..][..g.k * g.k];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = wk[ky * g.k + kx];
                        let (lo, hi) = g.ox_range(kx);
                        for oy in 0..g.ho {
                            let Some(iy) = g.iy(oy, ky) else { continue };
                            let orow = &mut o[oy * g.wo..][..g.wo];
                            let irow = &xin[iy * g.w..][..g.w];
                            if g.stride == 1 {
                                let off = lo + kx - g.pad;
                                for (ov, iv) in orow[lo..hi].iter_mut().zip(&irow[off..off + hi - lo]) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for ox in lo..hi {
                                    orow[ox] += wv * irow[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&with_chw(x.shape(), g.cout, g.ho, g.wo), out)
}

/// Gradients of `conv2d` with respect to `(input, weight, bias)`.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let cout = weight.shape()[0];
    let g = ConvGeom::new(x.shape(), weight.shape(), &[cout], stride, pad)?;
    let (xd, wd, gd) = (x.data(), weight.data(), grad_out.data());
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; cout];
    for n in 0..g.n {
        for co in 0..g.cout {
            let go = &gd[(n * g.cout + co) * plane_out..][..plane_out];
            gb[co] += go.iter().sum::<f64>();
            for ci in 0..g.cin {
                let xin = &xd[(n * g.cin + ci) * plane_in..][..plane_in];
                let gxin = &mut gx[(n * g.cin + ci) * plane_in..][..plane_in];
                let kbase = (co * g.cin + ci) * g.k * g.k;
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = wd[kbase + ky * g.k + kx];
                        let (lo, hi) = g.ox_range(kx);
                        let mut acc = 0.0;
                        for oy in 0..g.ho {
                            let Some(iy) = g.iy(oy, ky) else { continue };
                            let grow = &go[oy * g.wo..][..g.wo];
                            let irow = &xin[iy * g.w..][..g.w];
                            let girow = &mut gxin[iy * g.w..][..g.w];
                            if g.stride == 1 {
                                let off = lo + kx - g.pad;
                                let span = hi - lo;
                                for ((gv, iv), giv) in grow[lo..hi]
                                    .iter()
                                    .zip(&irow[off..off + span])
                                    .zip(&mut girow[off..off + span])
                                {
                                    acc += gv * iv;
                                    *giv += wv * gv;
                                }
                            } else {
                                for ox in lo..hi {
                                    let ix = ox * g.stride + kx - g.pad;
                                    acc += grow[ox] * irow[ix];
                                    girow[ix] += wv * grow[ox];
                                }
                            }
                        }
                        gw[kbase + ky * g.k + kx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape(), gx)?,
        Tensor::new(weight.shape(), gw)?,
        Tensor::new(&[cout], gb)?,
    ))
}

// ---------------------------------------------------------------------------
// linear

fn linear_dims(x: &[usize], w: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    let (rows, din) = match *x {
        [d] => (1, d),
        [n, d] => (n, d),
        _ => {
            return Err(VdpError::Rank {
                op: "linear",
                rank: x.len(),
                shape: x.to_vec(),
            })
        }
    };
    let [dout, wdin] = *w else {
        return Err(VdpError::Rank {
            op: "linear",
            rank: w.len(),
            shape: w.to_vec(),
        });
    };
    if wdin != din {
        return Err(dim_err("linear", "in_features", wdin, din));
    }
    if b != [dout] {
        return Err(dim_err("linear", "bias", dout, b.iter().product()));
    }
    Ok((rows, din, dout))
}

pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (rows, din, dout) = linear_dims(x.shape(), weight.shape(), bias.shape())?;
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    let mut out = Vec::with_capacity(rows * dout);
    for r in 0..rows {
        let xr = &xd[r * din..][..din];
        for o in 0..dout {
            let wr = &wd[o * din..][..din];
            out.push(bd[o] + dot(wr, xr));
        }
    }
    let shape = if x.rank() == 1 { vec![dout] } else { vec![rows, dout] };
    Tensor::new(&shape, out)
}

pub fn linear_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let dout = weight.shape()[0];
    let (rows, din, _) = linear_dims(x.shape(), weight.shape(), &[dout])?;
    let (xd, wd, gd) = (x.data(), weight.data(), grad_out.data());
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; dout];
    for r in 0..rows {
        let xr = &xd[r * din..][..din];
        let gxr = &mut gx[r * din..][..din];
        for o in 0..dout {
            let go = gd[r * dout + o];
            if go == 0.0 {
                continue;
            }
            gb[o] += go;
            axpy(go, &wd[o * din..][..din], gxr);
            axpy(go, xr, &mut gw[o * din..][..din]);
        }
    }
    Ok((
        Tensor::new(x.shape(), gx)?,
        Tensor::new(weight.shape(), gw)?,
        Tensor::new(&[dout], gb)?,
    ))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

// ---------------------------------------------------------------------------
// LSTM cell, gate order (input, forget, candidate, output)

#[derive(Clone, Debug)]
pub struct LstmCache {
    /// Post-activation gates, `[i | f | g | o]`, each of length `hidden`.
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

fn lstm_dims(x: &[usize], h: &[usize], c: &[usize], wih: &[usize], whh: &[usize], b: &[usize]) -> Result<(usize, usize)> {
    let [din] = *x else {
        return Err(VdpError::Rank {
            op: "lstm_cell",
            rank: x.len(),
            shape: x.to_vec(),
        });
    };
    let [hid] = *h else {
        return Err(VdpError::Rank {
            op: "lstm_cell",
            rank: h.len(),
            shape: h.to_vec(),
        });
    };
    if c != [hid] {
        return Err(dim_err("lstm_cell", "cell", hid, c.iter().product()));
    }
    if wih != [4 * hid, din] {
        return Err(dim_err("lstm_cell", "w_ih", 4 * hid * din, wih.iter().product()));
    }
    if whh != [4 * hid, hid] {
        return Err(dim_err("lstm_cell", "w_hh", 4 * hid * hid, whh.iter().product()));
    }
    if b != [4 * hid] {
        return Err(dim_err("lstm_cell", "bias", 4 * hid, b.iter().product()));
    }
    Ok((din, hid))
}

/// One LSTM update. Returns `[h' | c']` concatenated and the activation cache.
pub fn lstm_cell(
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, LstmCache)> {
    let (din, hid) = lstm_dims(x.shape(), h.shape(), c.shape(), w_ih.shape(), w_hh.shape(), bias.shape())?;
    let mut gates = Vec::with_capacity(4 * hid);
    for r in 0..4 * hid {
        let pre = bias.data()[r]
            + dot(&w_ih.data()[r * din..][..din], x.data())
            + dot(&w_hh.data()[r * hid..][..hid], h.data());
        let act = if (2 * hid..3 * hid).contains(&r) {
            pre.tanh()
        } else {
            sigmoid(pre)
        };
        gates.push(act);
    }
    let mut out = vec![0.0; 2 * hid];
    let mut tanh_c = vec![0.0; hid];
    for j in 0..hid {
        let (i, f, g, o) = (gates[j], gates[hid + j], gates[2 * hid + j], gates[3 * hid + j]);
        let cn = f * c.data()[j] + i * g;
        tanh_c[j] = cn.tanh();
        out[j] = o * tanh_c[j];
        out[hid + j] = cn;
    }
    Ok((Tensor::new(&[2 * hid], out)?, LstmCache { gates, tanh_c }))
}

pub struct LstmGrads {
    pub x: Tensor,
    pub h: Tensor,
    pub c: Tensor,
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

pub fn lstm_cell_backward(
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    cache: &LstmCache,
    grad_out: &Tensor,
) -> Result<LstmGrads> {
    let hid = h.len();
    let din = x.len();
    let gd = grad_out.data();
    let gt = &cache.gates;
    let mut dpre = vec![0.0; 4 * hid];
    let mut gc = vec![0.0; hid];
    for j in 0..hid {
        let (i, f, g, o) = (gt[j], gt[hid + j], gt[2 * hid + j], gt[3 * hid + j]);
        let tc = cache.tanh_c[j];
        let gh = gd[j];
        let dc = gd[hid + j] + gh * o * (1.0 - tc * tc);
        let d_o = gh * tc;
        dpre[j] = dc * g * i * (1.0 - i);
        dpre[hid + j] = dc * c.data()[j] * f * (1.0 - f);
        dpre[2 * hid + j] = dc * i * (1.0 - g * g);
        dpre[3 * hid + j] = d_o * o * (1.0 - o);
        gc[j] = dc * f;
    }
    let mut gx = vec![0.0; din];
    let mut gh = vec![0.0; hid];
    let mut gwih = vec![0.0; 4 * hid * din];
    let mut gwhh = vec![0.0; 4 * hid * hid];
    for (r, &d) in dpre.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        axpy(d, &w_ih.data()[r * din..][..din], &mut gx);
        axpy(d, &w_hh.data()[r * hid..][..hid], &mut gh);
        axpy(d, x.data(), &mut gwih[r * din..][..din]);
        axpy(d, h.data(), &mut gwhh[r * hid..][..hid]);
    }
    Ok(LstmGrads {
        x: Tensor::new(&[din], gx)?,
        h: Tensor::new(&[hid], gh)?,
        c: Tensor::new(&[hid], gc)?,
        w_ih: Tensor::new(&[4 * hid, din], gwih)?,
        w_hh: Tensor::new(&[4 * hid, hid], gwhh)?,
        bias: Tensor::new(&[4 * hid], dpre)?,
    })
}

// ---------------------------------------------------------------------------
// resampling

pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(VdpError::Config("upsample factor must be ≥ 1".into()));
    }
    let (n, c, h, w) = x.nchw()?;
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in x.data().chunks_exact(h * w) {
        for oy in 0..ho {
            let row = &plane[(oy / factor) * w..][..w];
            for ox in 0..wo {
                out.push(row[ox / factor]);
            }
        }
    }
    Tensor::new(&with_chw(x.shape(), c, ho, wo), out)
}

pub fn upsample_nearest_backward(input_shape: &[usize], grad_out: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, _, h, w) = nchw_of(input_shape, "upsample_nearest")?;
    let wo = w * factor;
    let mut gx = vec![0.0; input_shape.iter().product()];
    for (gplane, oplane) in gx.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(h * w * factor * factor)) {
        for (oy, orow) in oplane.chunks_exact(wo).enumerate() {
            let grow = &mut gplane[(oy / factor) * w..][..w];
            for (ox, g) in orow.iter().enumerate() {
                grow[ox / factor] += g;
            }
        }
    }
    Tensor::new(input_shape, gx)
}

/// Area-average (box) downsampling by an integer factor.
pub fn downsample_area(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(VdpError::Config("downsample factor must be ≥ 1".into()));
    }
    let (_, c, h, w) = x.nchw()?;
    for extent in [h, w] {
        if extent % factor != 0 {
            return Err(VdpError::Divisibility {
                op: "downsample",
                extent,
                factor,
            });
        }
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = Vec::with_capacity(x.len() / (factor * factor));
    for plane in x.data().chunks_exact(h * w) {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for dy in 0..factor {
                    let row = &plane[(oy * factor + dy) * w + ox * factor..][..factor];
                    acc += row.iter().sum::<f64>();
                }
                out.push(acc * inv);
            }
        }
    }
    Tensor::new(&with_chw(x.shape(), c, ho, wo), out)
}

pub fn downsample_area_backward(input_shape: &[usize], grad_out: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, _, h, w) = nchw_of(input_shape, "downsample")?;
    let (ho, wo) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut gx = vec![0.0; input_shape.iter().product()];
    for (gplane, oplane) in gx.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(ho * wo)) {
        for y in 0..h {
            for x in 0..w {
                gplane[y * w + x] = oplane[(y / factor) * wo + x / factor] * inv;
            }
        }
    }
    Tensor::new(input_shape, gx)
}

/// Row-major `[out, in]` weight matrix for antialiased bicubic (Keys, a = −0.5)
/// downscaling of one axis by `factor`.
pub fn bicubic_weights(input: usize, factor: usize) -> Vec<f64> {
    fn keys(t: f64) -> f64 {
        const A: f64 = -0.5;
        let t = t.abs();
        if t <= 1.0 {
            (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
        } else if t < 2.0 {
            A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
        } else {
            0.0
        }
    }
    let out = input / factor;
    let f = factor as f64;
    let mut m = vec![0.0; out * input];
    for o in 0..out {
        let center = (o as f64 + 0.5) * f - 0.5;
        let row = &mut m[o * input..][..input];
        for (j, v) in row.iter_mut().enumerate() {
            *v = keys((j as f64 - center) / f);
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    m
}

/// Separable linear resampling `Y = A · X · Bᵀ` per plane, with `A: [ho, h]`
/// and `B: [wo, w]`.
pub fn resample_separable(x: &Tensor, a: &[f64], ho: usize, b: &[f64], wo: usize) -> Result<Tensor> {
    let (_, c, h, w) = x.nchw()?;
    if a.len() != ho * h {
        return Err(dim_err("resample", "height", ho * h, a.len()));
    }
    if b.len() != wo * w {
        return Err(dim_err("resample", "width", wo * w, b.len()));
    }
    let mut out = Vec::with_capacity(x.len() / (h * w) * ho * wo);
    let mut tmp = vec![0.0; h * wo];
    for plane in x.data().chunks_exact(h * w) {
        for y in 0..h {
            for ox in 0..wo {
                tmp[y * wo + ox] = dot(&plane[y * w..][..w], &b[ox * w..][..w]);
            }
        }
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for y in 0..h {
                    acc += a[oy * h + y] * tmp[y * wo + ox];
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(&with_chw(x.shape(), c, ho, wo), out)
}

pub fn resample_separable_backward(
    input_shape: &[usize],
    a: &[f64],
    ho: usize,
    b: &[f64],
    wo: usize,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let (_, _, h, w) = nchw_of(input_shape, "resample")?;
    let mut gx = vec![0.0; input_shape.iter().product()];
    let mut tmp = vec![0.0; h * wo];
    for (gplane, go) in gx.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(ho * wo)) {
        // tmp = Aᵀ · G
        tmp.fill(0.0);
        for oy in 0..ho {
            for y in 0..h {
                let av = a[oy * h + y];
                axpy(av, &go[oy * wo..][..wo], &mut tmp[y * wo..][..wo]);
            }
        }
        // gX = tmp · B
        for y in 0..h {
            for ox in 0..wo {
                axpy(tmp[y * wo + ox], &b[ox * w..][..w], &mut gplane[y * w..][..w]);
            }
        }
    }
    Tensor::new(input_shape, gx)
}

// ---------------------------------------------------------------------------
// normalization

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Per-channel statistics over all frames and pixels of the batch.
    Batch,
    /// Per-frame, per-channel statistics.
    Instance,
}

/// Per-group mean and inverse standard deviation. Groups are channels for
/// [`NormMode::Batch`] and `(frame, channel)` pairs for [`NormMode::Instance`].
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mode: NormMode,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl NormStats {
    fn group(&self, n: usize, c: usize, channels: usize) -> usize {
        match self.mode {
            NormMode::Batch => c,
            NormMode::Instance => n * channels + c,
        }
    }
}

pub fn norm_stats(x: &Tensor, mode: NormMode) -> Result<NormStats> {
    let (n, c, h, w) = x.nchw()?;
    let plane = h * w;
    let (groups, count) = match mode {
        NormMode::Batch => (c, (n * plane) as f64),
        NormMode::Instance => (n * c, plane as f64),
    };
    let group_of = |p: usize| match mode {
        NormMode::Batch => p % c,
        NormMode::Instance => p,
    };
    let mut mean = vec![0.0; groups];
    for (p, vals) in x.data().chunks_exact(plane).enumerate() {
        mean[group_of(p)] += vals.iter().sum::<f64>();
    }
    mean.iter_mut().for_each(|m| *m /= count);
    // Two-pass variance.
    let mut var = vec![0.0; groups];
    for (p, vals) in x.data().chunks_exact(plane).enumerate() {
        let g = group_of(p);
        let m = mean[g];
        var[g] += vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let inv_std = var.into_iter().map(|v| 1.0 / (v / count + BN_EPS).sqrt()).collect();
    Ok(NormStats { mode, mean, inv_std })
}

pub fn normalize(x: &Tensor, gamma: &Tensor, beta: &Tensor, stats: &NormStats) -> Result<Tensor> {
    let (n, c, h, w) = x.nchw()?;
    if gamma.shape() != [c] {
        return Err(dim_err("batch_norm", "gamma", c, gamma.len()));
    }
    if beta.shape() != [c] {
        return Err(dim_err("batch_norm", "beta", c, beta.len()));
    }
    let expected_groups = match stats.mode {
        NormMode::Batch => c,
        NormMode::Instance => n * c,
    };
    if stats.mean.len() != expected_groups {
        return Err(dim_err("batch_norm", "stats", expected_groups, stats.mean.len()));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(x.len());
    for (p, vals) in x.data().chunks_exact(plane).enumerate() {
        let ch = p % c;
        let g = stats.group(p / c, ch, c);
        let (m, s) = (stats.mean[g], stats.inv_std[g]);
        let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
        out.extend(vals.iter().map(|v| ga * (v - m) * s + be));
    }
    Tensor::new(x.shape(), out)
}

/// Backward of `normalize`. When `stats_from_input` is true the statistics
/// were computed from `x` itself and their dependence on `x` is included.
pub fn normalize_backward(
    x: &Tensor,
    gamma: &Tensor,
    stats: &NormStats,
    grad_out: &Tensor,
    stats_from_input: bool,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = x.nchw()?;
    let plane = h * w;
    let groups = stats.mean.len();
    let xd = x.data();
    let gd = grad_out.data();
    // Per-group Σg and Σg·x̂.
    let mut sum_g = vec![0.0; groups];
    let mut sum_gx = vec![0.0; groups];
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    for p in 0..n * c {
        let ch = p % c;
        let g = stats.group(p / c, ch, c);
        let (m, s) = (stats.mean[g], stats.inv_std[g]);
        let xs = &xd[p * plane..][..plane];
        let gs = &gd[p * plane..][..plane];
        let mut sg = 0.0;
        let mut sgx = 0.0;
        for (xv, gv) in xs.iter().zip(gs) {
            sg += gv;
            sgx += gv * (xv - m) * s;
        }
        sum_g[g] += sg;
        sum_gx[g] += sgx;
        ggamma[ch] += sgx;
        gbeta[ch] += sg;
    }
    let count = match stats.mode {
        NormMode::Batch => (n * plane) as f64,
        NormMode::Instance => plane as f64,
    };
    let mut gx = Vec::with_capacity(xd.len());
    for p in 0..n * c {
        let ch = p % c;
        let g = stats.group(p / c, ch, c);
        let (m, s) = (stats.mean[g], stats.inv_std[g]);
        let ga = gamma.data()[ch];
        let xs = &xd[p * plane..][..plane];
        let gs = &gd[p * plane..][..plane];
        if stats_from_input {
            let mg = sum_g[g] / count;
            let mgx = sum_gx[g] / count;
            gx.extend(xs.iter().zip(gs).map(|(xv, gv)| ga * s * (gv - mg - (xv - m) * s * mgx)));
        } else {
            gx.extend(gs.iter().map(|gv| ga * s * gv));
        }
    }
    Ok((
        Tensor::new(x.shape(), gx)?,
        Tensor::new(&[c], ggamma)?,
        Tensor::new(&[c], gbeta)?,
    ))
}

// ---------------------------------------------------------------------------
// losses

/// Σ over frames of mean |a − b| within each frame.
pub fn l1_frames(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(dim_err("l1", "shape", a.len(), b.len()));
    }
    let inner = frame_numel(a.shape());
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(s / inner as f64)
}

pub(crate) fn frame_numel(shape: &[usize]) -> usize {
    match shape.len() {
        4 => shape[1..].iter().product(),
        _ => shape.iter().product(),
    }
}

/// Σ over frames of the anisotropic total variation, normalized by the
/// number of elements per frame. Differences are taken at every `(i, j)` with
/// `i ≥ 1` and `j ≥ 1`.
pub fn total_variation(x: &Tensor) -> Result<f64> {
    let (_, c, h, w) = x.nchw()?;
    if h < 2 || w < 2 {
        return Err(dim_err("variation_loss", "height_or_width", 2, h.min(w)));
    }
    let mut acc = 0.0;
    for plane in x.data().chunks_exact(h * w) {
        for i in 1..h {
            for j in 1..w {
                let v = plane[i * w + j];
                acc += (v - plane[(i - 1) * w + j]).abs() + (v - plane[i * w + j - 1]).abs();
            }
        }
    }
    Ok(acc / (c * h * w) as f64)
}

pub fn total_variation_backward(x: &Tensor, grad: f64) -> Result<Tensor> {
    let (_, c, h, w) = x.nchw()?;
    let scale = grad / (c * h * w) as f64;
    let mut gx = vec![0.0; x.len()];
    for (plane, gp) in x.data().chunks_exact(h * w).zip(gx.chunks_exact_mut(h * w)) {
        for i in 1..h {
            for j in 1..w {
                let v = plane[i * w + j];
                let sv = sign(v - plane[(i - 1) * w + j]) * scale;
                let sh = sign(v - plane[i * w + j - 1]) * scale;
                gp[i * w + j] += sv + sh;
                gp[(i - 1) * w + j] -= sv;
                gp[i * w + j - 1] -= sh;
            }
        }
    }
    Tensor::new(x.shape(), gx)
}

#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Concatenates 3-D or 4-D tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| VdpError::Input("concat of zero tensors".into()))?;
    let (n, _, h, w) = first.nchw()?;
    let mut total_c = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.nchw()?;
        if p.rank() != first.rank() {
            return Err(dim_err("concat", "rank", first.rank(), p.rank()));
        }
        if pn != n {
            return Err(dim_err("concat", "batch", n, pn));
        }
        if ph != h {
            return Err(dim_err("concat", "height", h, ph));
        }
        if pw != w {
            return Err(dim_err("concat", "width", w, pw));
        }
        total_c += pc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total_c * plane);
    for b in 0..n {
        for p in parts {
            let pc = p.nchw()?.1;
            out.extend_from_slice(&p.data()[b * pc * plane..][..pc * plane]);
        }
    }
    Tensor::new(&with_chw(first.shape(), total_c, h, w), out)
}
