//! Frame quality metrics and the metrics report.

mod convergence;

use serde::{Deserialize, Serialize};

pub use convergence::{
    convergence_experiment, epochs_to_threshold, ConvergenceConfig, ConvergenceReport, SeedRun, Setting, SettingSummary,
};

use crate::diffcore::Tensor;
use crate::error::{Result, VdpError};
use crate::videoio::VideoSequence;

/// Reported when the two frames are identical.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const NMI_BINS: usize = 64;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(VdpError::Dimension {
            op,
            axis: "shape",
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape("mse", a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(peak² / MSE)`, or [`PSNR_CAP_DB`] when the MSE is zero.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { PSNR_CAP_DB } else { 10.0 * (peak * peak / m).log10() })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable valid-mode filtering of one `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..k).map(|i| g[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean structural similarity of two `[C, H, W]` frames (or `[H, W]`),
/// averaged over channels. Uses an 11×11 Gaussian window with σ = 1.5 and
/// only windows that fit inside the frame.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (n, c, h, w) = match a.rank() {
        2 => (1, 1, a.shape()[0], a.shape()[1]),
        _ => a.nchw()?,
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(VdpError::Dimension {
            op: "ssim",
            axis: if h < SSIM_WINDOW { "height" } else { "width" },
            expected: SSIM_WINDOW,
            got: h.min(w),
        });
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let g = gaussian_window();
    let plane = h * w;
    let mut total = 0.0;
    for (pa, pb) in a.data().chunks_exact(plane).zip(b.data().chunks_exact(plane)) {
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let mu_a = filter_valid(pa, h, w, &g);
        let mu_b = filter_valid(pb, h, w, &g);
        let aa = filter_valid(&prod(|x, _| x * x), h, w, &g);
        let bb = filter_valid(&prod(|_, y| y * y), h, w, &g);
        let ab = filter_valid(&prod(|x, y| x * y), h, w, &g);
        let mut s = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            s += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += s / mu_a.len() as f64;
    }
    Ok(total / (n * c) as f64)
}

/// Histogram bin of a value in `[0, 1]` over `bins` equal-width bins.
pub fn bin_of(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

/// Normalized mutual information `2·I(A;B) / (H(A) + H(B))` of two label
/// sequences. Two constant inputs give 1.
pub fn nmi_from_labels(a: &[usize], b: &[usize], bins: usize) -> f64 {
    let n = a.len() as f64;
    let mut joint = vec![0usize; bins * bins];
    let mut ha = vec![0usize; bins];
    let mut hb = vec![0usize; bins];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * bins + y] += 1;
        ha[x] += 1;
        hb[y] += 1;
    }
    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&k| k > 0)
            .map(|&k| {
                let p = k as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (h_a, h_b, h_ab) = (entropy(&ha), entropy(&hb), entropy(&joint));
    if h_a + h_b == 0.0 {
        return 1.0;
    }
    (2.0 * (h_a + h_b - h_ab) / (h_a + h_b)).clamp(0.0, 1.0)
}

/// NMI of two frames with values binned over `[0, 1]`.
pub fn nmi(a: &Tensor, b: &Tensor, bins: usize) -> Result<f64> {
    same_shape("nmi", a, b)?;
    if bins == 0 || a.is_empty() {
        return Err(VdpError::Input("nmi needs at least one bin and one value".into()));
    }
    let la: Vec<usize> = a.data().iter().map(|&v| bin_of(v, bins)).collect();
    let lb: Vec<usize> = b.data().iter().map(|&v| bin_of(v, bins)).collect();
    Ok(nmi_from_labels(&la, &lb, bins))
}

/// Pairwise NMI between all frames of a video.
pub fn nmi_matrix(video: &VideoSequence, bins: usize) -> Result<Vec<Vec<f64>>> {
    let frames: Vec<Tensor> = (0..video.len()).map(|t| video.frame(t)).collect::<Result<_>>()?;
    let mut m = vec![vec![0.0; frames.len()]; frames.len()];
    for i in 0..frames.len() {
        for j in i..frames.len() {
            let v = nmi(&frames[i], &frames[j], bins)?;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub psnr: f64,
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub total: f64,
    pub rec: f64,
    pub spl: f64,
    pub var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    /// Scores of each output frame against its reference, when one exists.
    pub per_frame: Vec<FrameScore>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    /// Scores of the degraded input against the reference, when known.
    pub input_mean_psnr: Option<f64>,
    pub nmi: Option<Vec<Vec<f64>>>,
    pub curves: Vec<(String, Vec<CurvePoint>)>,
    /// Free-form notes such as normalization fallbacks.
    pub warnings: Vec<String>,
    /// Named scalar results specific to the command.
    pub extras: std::collections::BTreeMap<String, f64>,
    /// Resolved run configuration.
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            per_frame: Vec::new(),
            mean_psnr: None,
            mean_ssim: None,
            input_mean_psnr: None,
            nmi: None,
            curves: Vec::new(),
            warnings: Vec::new(),
            extras: Default::default(),
            config,
        }
    }

    /// Fills per-frame and mean scores of `output` against `reference`.
    pub fn score(&mut self, output: &VideoSequence, reference: &VideoSequence) -> Result<()> {
        self.per_frame = compare_videos(output, reference)?;
        self.mean_psnr = Some(mean(self.per_frame.iter().map(|s| s.psnr)));
        let ssims: Option<Vec<f64>> = self.per_frame.iter().map(|s| s.ssim).collect();
        self.mean_ssim = ssims.map(|v| mean(v.into_iter()));
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Per-frame PSNR (peak 1) and SSIM. SSIM is omitted for frames smaller
/// than the window.
pub fn compare_videos(a: &VideoSequence, b: &VideoSequence) -> Result<Vec<FrameScore>> {
    if a.len() != b.len() {
        return Err(VdpError::Dimension {
            op: "compare",
            axis: "frames",
            expected: b.len(),
            got: a.len(),
        });
    }
    if a.frame_shape() != b.frame_shape() {
        return Err(VdpError::Input(format!(
            "frame shapes differ: {:?} vs {:?}",
            a.frame_shape(),
            b.frame_shape()
        )));
    }
    let (_, h, w) = a.frame_shape();
    (0..a.len())
        .map(|t| {
            let (fa, fb) = (a.frame(t)?, b.frame(t)?);
            let ssim = if h >= SSIM_WINDOW && w >= SSIM_WINDOW { Some(ssim(&fa, &fb, 1.0)?) } else { None };
            Ok(FrameScore {
                psnr: psnr(&fa, &fb, 1.0)?,
                ssim,
            })
        })
        .collect()
}

/// Mean per-frame PSNR of two videos.
pub fn mean_psnr(a: &VideoSequence, b: &VideoSequence) -> Result<f64> {
    Ok(mean(compare_videos_psnr(a, b)?.into_iter()))
}

fn compare_videos_psnr(a: &VideoSequence, b: &VideoSequence) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(VdpError::Dimension {
            op: "psnr",
            axis: "frames",
            expected: b.len(),
            got: a.len(),
        });
    }
    (0..a.len()).map(|t| psnr(&a.frame(t)?, &b.frame(t)?, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_cap_and_closed_form() {
        let a = Tensor::full(&[3, 4, 4], 0.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let b = Tensor::full(&[3, 4, 4], 0.5);
        assert!((psnr(&a, &b, 1.0).unwrap() - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn window_is_normalized() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(g[0], g[10]);
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let a = Tensor::zeros(&[1, 10, 20]);
        assert!(ssim(&a, &a, 1.0).is_err());
    }

    #[test]
    fn constant_pair_nmi_is_one() {
        let a = Tensor::full(&[4, 4], 0.3);
        assert_eq!(nmi(&a, &a, 64).unwrap(), 1.0);
    }
}
