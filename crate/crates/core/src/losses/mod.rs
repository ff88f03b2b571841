//! Reconstruction, spatial-pyramid and variation losses, their weighted sum,
//! and the super-resolution and object-removal variants.
//!
//! Every per-frame term is mean-reduced over the elements of one frame and
//! summed over the frames of a batch.

mod features;

use std::rc::Rc;

use serde::{Deserialize, Serialize};

pub use features::{FeatureExtractor, Provenance, DEFAULT_WIDTHS};

use crate::diffcore::{apply_mask, kernels, Tape, Tensor, Var};
use crate::error::{Result, VdpError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub spl: f64,
    pub var: f64,
}

impl LossWeights {
    pub const fn new(rec: f64, spl: f64, var: f64) -> Self {
        Self { rec, spl, var }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.rec, self.spl, self.var];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(VdpError::Config(format!("loss weights must be finite and ≥ 0, got {self:?}")));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(VdpError::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Loss-subset ablation modes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossSubset {
    #[serde(rename = "rec")]
    Rec,
    #[serde(rename = "rec+var")]
    RecVar,
    #[serde(rename = "rec+spl")]
    RecSpl,
    #[default]
    #[serde(rename = "all")]
    All,
}

impl LossSubset {
    pub const ALL: [LossSubset; 4] = [Self::Rec, Self::RecVar, Self::RecSpl, Self::All];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rec => "rec",
            Self::RecVar => "rec+var",
            Self::RecSpl => "rec+spl",
            Self::All => "all",
        }
    }

    /// Zeroes the weights of the excluded terms.
    pub fn apply(self, w: LossWeights) -> LossWeights {
        let (spl, var) = match self {
            Self::Rec => (false, false),
            Self::RecVar => (false, true),
            Self::RecSpl => (true, false),
            Self::All => (true, true),
        };
        LossWeights {
            rec: w.rec,
            spl: if spl { w.spl } else { 0.0 },
            var: if var { w.var } else { 0.0 },
        }
    }
}

impl std::str::FromStr for LossSubset {
    type Err = VdpError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| VdpError::Config(format!("unknown ablation `{s}` (expected rec, rec+var, rec+spl or all)")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsampler {
    #[default]
    Area,
    Bicubic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidSpec {
    pub factors: Vec<usize>,
    pub kernel: Downsampler,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self {
            factors: vec![2, 4, 8],
            kernel: Downsampler::Area,
        }
    }
}

impl PyramidSpec {
    pub fn with_factors(factors: &[usize]) -> Self {
        Self {
            factors: factors.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for &f in &self.factors {
            if f == 0 {
                return Err(VdpError::Config("pyramid factors must be ≥ 1".into()));
            }
            for extent in [height, width] {
                if extent % f != 0 {
                    return Err(VdpError::Divisibility {
                        op: "pyramid_loss",
                        extent,
                        factor: f,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Area-average downsampling by an integer factor.
pub fn downsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    kernels::downsample_area(x, factor)
}

/// Downsampling with the chosen kernel.
pub fn downsample_with(x: &Tensor, factor: usize, kernel: Downsampler) -> Result<Tensor> {
    match kernel {
        _ if factor == 1 => Ok(x.clone()),
        Downsampler::Area => kernels::downsample_area(x, factor),
        Downsampler::Bicubic => {
            let (_, _, h, w) = x.nchw()?;
            check_divisible("downsample", h, w, factor)?;
            kernels::resample_separable(
                x,
                &kernels::bicubic_weights(h, factor),
                h / factor,
                &kernels::bicubic_weights(w, factor),
                w / factor,
            )
        }
    }
}

pub fn downsample_on(tape: &mut Tape, x: Var, factor: usize, kernel: Downsampler) -> Result<Var> {
    match kernel {
        _ if factor == 1 => Ok(x),
        Downsampler::Area => tape.downsample_area(x, factor),
        Downsampler::Bicubic => {
            let (_, _, h, w) = tape.value(x).nchw()?;
            check_divisible("downsample", h, w, factor)?;
            let rows = Rc::new(kernels::bicubic_weights(h, factor));
            let cols = Rc::new(kernels::bicubic_weights(w, factor));
            tape.resample(x, rows, h / factor, cols, w / factor)
        }
    }
}

fn check_divisible(op: &'static str, h: usize, w: usize, factor: usize) -> Result<()> {
    for extent in [h, w] {
        if extent % factor != 0 {
            return Err(VdpError::Divisibility { op, extent, factor });
        }
    }
    Ok(())
}

/// Unweighted loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms<T = f64> {
    pub rec: T,
    pub spl: T,
    pub var: T,
}

impl LossTerms<f64> {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.rec * self.rec + w.spl * self.spl + w.var * self.var
    }
}

/// How the prediction is compared with the target.
#[derive(Clone, Debug)]
pub enum LossMode {
    /// Prediction and target at the same resolution.
    Plain,
    /// The prediction is downscaled by this factor before comparison; the
    /// variation term still sees the full-resolution prediction.
    Downscaled(usize),
    /// Only pixels with mask 1 are compared; the variation term sees the full
    /// prediction. The mask is `[N, 1, H, W]` or `[N, C, H, W]`.
    Masked(Rc<Tensor>),
}

/// Target-side quantities that stay fixed during a fit.
#[derive(Clone, Debug)]
pub struct PreparedTarget {
    frames: Tensor,
    features: Vec<Tensor>,
    levels: Vec<Tensor>,
}

impl PreparedTarget {
    pub fn frames(&self) -> &Tensor {
        &self.frames
    }
}

/// Loss weights together with the feature map and pyramid they use.
#[derive(Clone, Debug)]
pub struct Objective {
    pub weights: LossWeights,
    pub features: Option<FeatureExtractor>,
    pub pyramid: PyramidSpec,
}

impl Objective {
    pub fn new(weights: LossWeights, features: Option<FeatureExtractor>, pyramid: PyramidSpec) -> Self {
        Self {
            weights,
            features,
            pyramid,
        }
    }

    /// Precomputes features and pyramid levels of `target`, masked first when
    /// a mask is given.
    pub fn prepare(&self, target: &Tensor, mask: Option<&Tensor>) -> Result<PreparedTarget> {
        let (_, _, h, w) = target.nchw()?;
        self.pyramid.validate(h, w)?;
        let frames = match mask {
            Some(m) => {
                check_binary(m)?;
                apply_mask(target, m)?
            }
            None => target.clone(),
        };
        let features = match &self.features {
            Some(phi) => phi.features(&frames)?,
            None => Vec::new(),
        };
        let levels = self
            .pyramid
            .factors
            .iter()
            .map(|&f| downsample_with(&frames, f, self.pyramid.kernel))
            .collect::<Result<_>>()?;
        Ok(PreparedTarget { frames, features, levels })
    }

    /// Loss components of `pred` against `target` on a tape.
    pub fn terms_on(&self, tape: &mut Tape, pred: Var, target: &PreparedTarget, mode: &LossMode) -> Result<LossTerms<Var>> {
        let compared = match mode {
            LossMode::Plain => pred,
            LossMode::Downscaled(s) => downsample_on(tape, pred, *s, self.pyramid.kernel)?,
            // A full mask is skipped so the gradient graph matches the plain one.
            LossMode::Masked(m) if m.data().iter().all(|&v| v == 1.0) => pred,
            LossMode::Masked(m) => tape.mask_mul(pred, m.clone())?,
        };
        let t = tape.constant(target.frames.clone());
        let mut rec = tape.l1_frames(compared, t)?;
        if let Some(phi) = &self.features {
            let feats = phi.features_on(tape, compared)?;
            for (f, tf) in feats.into_iter().zip(&target.features) {
                let tf = tape.constant(tf.clone());
                let d = tape.l1_frames(f, tf)?;
                rec = tape.add(rec, d)?;
            }
        }
        let mut spl = tape.constant(Tensor::scalar(0.0));
        for (&f, level) in self.pyramid.factors.iter().zip(&target.levels) {
            let d = downsample_on(tape, compared, f, self.pyramid.kernel)?;
            let tl = tape.constant(level.clone());
            let l = tape.l1_frames(d, tl)?;
            spl = tape.add(spl, l)?;
        }
        let var = tape.variation(pred)?;
        Ok(LossTerms { rec, spl, var })
    }

    /// `λ_rec·rec + λ_spl·spl + λ_var·var` on a tape.
    pub fn weighted_on(&self, tape: &mut Tape, terms: &LossTerms<Var>) -> Result<Var> {
        let w = &self.weights;
        let r = tape.scale(terms.rec, w.rec);
        let s = tape.scale(terms.spl, w.spl);
        let v = tape.scale(terms.var, w.var);
        let rs = tape.add(r, s)?;
        tape.add(rs, v)
    }

    /// Value-level components.
    pub fn terms(&self, pred: &Tensor, target: &Tensor, mode: &LossMode) -> Result<LossTerms> {
        let mask = match mode {
            LossMode::Masked(m) => Some(m.as_ref()),
            _ => None,
        };
        let prepared = self.prepare(target, mask)?;
        let mut tape = Tape::new();
        let p = tape.constant(pred.clone());
        let t = self.terms_on(&mut tape, p, &prepared, mode)?;
        Ok(LossTerms {
            rec: tape.value(t.rec).item(),
            spl: tape.value(t.spl).item(),
            var: tape.value(t.var).item(),
        })
    }
}

fn check_binary(mask: &Tensor) -> Result<()> {
    if mask.data().iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(())
    } else {
        Err(VdpError::Input("mask values must be exactly 0 or 1".into()))
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        let axis = if a.rank() == 4 && b.rank() == 4 && a.shape()[0] != b.shape()[0] { "frames" } else { "shape" };
        let (ea, eb) = if axis == "frames" { (a.shape()[0], b.shape()[0]) } else { (a.len(), b.len()) };
        return Err(VdpError::Dimension {
            op,
            axis,
            expected: ea,
            got: eb,
        });
    }
    Ok(())
}

/// Mean L1 plus the L1 distance of every feature tap.
pub fn rec_loss(x: &Tensor, xhat: &Tensor, phi: Option<&FeatureExtractor>) -> Result<f64> {
    check_same("rec_loss", x, xhat)?;
    let mut total = kernels::l1_frames(x, xhat)?;
    if let Some(phi) = phi {
        for (a, b) in phi.features(x)?.iter().zip(&phi.features(xhat)?) {
            total += kernels::l1_frames(a, b)?;
        }
    }
    Ok(total)
}

/// Σ over the pyramid factors of the mean L1 between downsampled frames.
pub fn pyramid_loss(x: &Tensor, xhat: &Tensor, spec: &PyramidSpec) -> Result<f64> {
    check_same("pyramid_loss", x, xhat)?;
    let (_, _, h, w) = x.nchw()?;
    spec.validate(h, w)?;
    let mut total = 0.0;
    for &f in &spec.factors {
        total += kernels::l1_frames(&downsample_with(x, f, spec.kernel)?, &downsample_with(xhat, f, spec.kernel)?)?;
    }
    Ok(total)
}

/// Anisotropic total variation normalized by the elements per frame.
pub fn variation_loss(xhat: &Tensor) -> Result<f64> {
    kernels::total_variation(xhat)
}

/// Weighted sum over frames of all three terms.
pub fn final_loss(video: &Tensor, frames: &Tensor, obj: &Objective) -> Result<f64> {
    check_same("final_loss", video, frames)?;
    Ok(obj.terms(frames, video, &LossMode::Plain)?.total(&obj.weights))
}

/// Rec and spl compare `x_lr` with the downscaled prediction; var acts on the
/// full-resolution prediction.
pub fn sr_loss(x_lr: &Tensor, xhat_hr: &Tensor, scale: usize, obj: &Objective) -> Result<f64> {
    let (n, c, h, w) = x_lr.nchw()?;
    let (hn, hc, hh, hw) = xhat_hr.nchw()?;
    if scale == 0 || (hn, hc, hh, hw) != (n, c, h * scale, w * scale) {
        return Err(VdpError::Dimension {
            op: "sr_loss",
            axis: "scale",
            expected: h * scale.max(1),
            got: hh,
        });
    }
    Ok(obj.terms(xhat_hr, x_lr, &LossMode::Downscaled(scale))?.total(&obj.weights))
}

/// Rec and spl compare `m ⊙ x` with `m ⊙ x̂`; var acts on the full `x̂`.
pub fn removal_loss(x: &Tensor, mask: &Tensor, xhat: &Tensor, obj: &Objective) -> Result<f64> {
    check_same("removal_loss", x, xhat)?;
    check_binary(mask)?;
    Ok(obj
        .terms(xhat, x, &LossMode::Masked(Rc::new(mask.clone())))?
        .total(&obj.weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_parse_and_apply() {
        let w = LossWeights::new(1.0, 0.01, 1e-4);
        assert_eq!("rec".parse::<LossSubset>().unwrap().apply(w), LossWeights::new(1.0, 0.0, 0.0));
        assert_eq!("rec+var".parse::<LossSubset>().unwrap().apply(w), LossWeights::new(1.0, 0.0, 1e-4));
        assert_eq!("rec+spl".parse::<LossSubset>().unwrap().apply(w), LossWeights::new(1.0, 0.01, 0.0));
        assert_eq!("all".parse::<LossSubset>().unwrap().apply(w), w);
        assert!("spl".parse::<LossSubset>().is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).validate().is_err());
        assert!(LossWeights::new(-1.0, 0.0, 1.0).validate().is_err());
        LossWeights::new(1.0, 1e-4, 1e-4).validate().unwrap();
    }

    #[test]
    fn pyramid_divisibility_error() {
        let x = Tensor::zeros(&[3, 12, 12]);
        let err = pyramid_loss(&x, &x, &PyramidSpec::default()).unwrap_err();
        assert!(matches!(err, VdpError::Divisibility { factor: 8, .. }));
        assert!(err.to_string().contains("pad"));
    }

    #[test]
    fn feature_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.manifest");
        let phi = FeatureExtractor::random(3, 9);
        phi.export(&path).unwrap();
        let back = FeatureExtractor::import(&path).unwrap();
        assert_eq!(back.taps(), 3);
        assert!(matches!(back.provenance(), Provenance::Imported(_)));
        let x = Tensor::from_fn(&[3, 8, 8], |i| (i % 7) as f64 / 7.0);
        let (a, b) = (phi.features(&x).unwrap(), back.features(&x).unwrap());
        for (fa, fb) in a.iter().zip(&b) {
            for (u, v) in fa.data().iter().zip(fb.data()) {
                assert!((u - v).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn removal_rejects_soft_mask() {
        let x = Tensor::zeros(&[1, 3, 8, 8]);
        let m = Tensor::full(&[1, 1, 8, 8], 0.5);
        let obj = Objective::new(LossWeights::new(1.0, 0.0, 0.0), None, PyramidSpec::with_factors(&[2]));
        assert!(removal_loss(&x, &m, &x, &obj).is_err());
    }
}
