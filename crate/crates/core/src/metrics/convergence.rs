//! Fits a short clip whose middle frame was replaced by noise under five loss
//! settings and measures how quickly each one reproduces its input.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{mse, nmi_matrix, psnr, NMI_BINS};
use crate::degrade::replace_frame_with_noise;
use crate::diffcore::Tensor;
use crate::error::{Result, VdpError};
use crate::losses::{LossSubset, LossWeights};
use crate::tasks::{detect_plateau, fit_with, Control, FeatureSource, Supervision, TaskConfig};
use crate::videoio::VideoSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    CleanL1,
    CorruptL1,
    CorruptL1Spl,
    CorruptL1Var,
    CorruptAll,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Self::CleanL1,
        Self::CorruptL1,
        Self::CorruptL1Spl,
        Self::CorruptL1Var,
        Self::CorruptAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::CleanL1 => "clean_l1",
            Self::CorruptL1 => "corrupt_l1",
            Self::CorruptL1Spl => "corrupt_l1_spl",
            Self::CorruptL1Var => "corrupt_l1_var",
            Self::CorruptAll => "corrupt_all",
        }
    }

    pub fn corrupt(self) -> bool {
        self != Self::CleanL1
    }

    fn subset(self) -> LossSubset {
        match self {
            Self::CleanL1 | Self::CorruptL1 => LossSubset::Rec,
            Self::CorruptL1Spl => LossSubset::RecSpl,
            Self::CorruptL1Var => LossSubset::RecVar,
            Self::CorruptAll => LossSubset::All,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    /// Architecture, learning rate, pyramid and plateau settings. Its loss
    /// weights and ablation are replaced per setting.
    pub base: TaskConfig,
    /// Weights of the spatial-pyramid and variation terms when enabled.
    pub spl_weight: f64,
    pub var_weight: f64,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    /// MSE-to-input threshold that counts as having fit the input.
    pub tau: f64,
    pub noise_frame: usize,
    pub noise_seed: u64,
    /// End a run once it has fit the input and its plateau snapshot exists.
    pub stop_when_fitted: bool,
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub setting: Setting,
    pub seed: u64,
    pub mse_to_input: Vec<f64>,
    pub mse_to_clean: Vec<f64>,
    /// First epoch with MSE-to-input below τ.
    pub epochs_to_fit: Option<usize>,
    pub plateau_epoch: Option<usize>,
    /// PSNR of the snapshot's corrupted frame against the clean frame.
    pub snapshot_psnr: Option<f64>,
    #[serde(skip)]
    pub snapshot: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub setting: Setting,
    pub weights: LossWeights,
    /// Median of `epochs_to_fit`, where a run that never fits counts as
    /// infinitely slow. `None` if the median run never fit.
    pub median_epochs_to_fit: Option<f64>,
    pub median_snapshot_psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub tau: f64,
    pub epochs: usize,
    pub noise_frame: usize,
    /// PSNR of the noise frame against the clean frame it replaced.
    pub noisy_frame_psnr: f64,
    pub settings: Vec<SettingSummary>,
    pub runs: Vec<SeedRun>,
    /// NMI matrices of the clean clip, the corrupted clip and the first
    /// seed's plateau snapshot for the last setting.
    pub nmi_clean: Vec<Vec<f64>>,
    pub nmi_corrupt: Vec<Vec<f64>>,
    pub nmi_snapshot: Option<Vec<Vec<f64>>>,
}

impl ConvergenceReport {
    pub fn summary(&self, s: Setting) -> &SettingSummary {
        self.settings.iter().find(|x| x.setting == s).expect("every setting is summarized")
    }

    /// Whether the medians satisfy `s1 < s2 ≤ {s3, s4} < s5`, with runs that
    /// never fit counting as infinitely slow.
    pub fn ordering_holds(&self) -> bool {
        let e = |s| self.summary(s).median_epochs_to_fit.unwrap_or(f64::INFINITY);
        let (s1, s2, s3, s4, s5) = (
            e(Setting::CleanL1),
            e(Setting::CorruptL1),
            e(Setting::CorruptL1Spl),
            e(Setting::CorruptL1Var),
            e(Setting::CorruptAll),
        );
        s1.is_finite() && s1 < s2 && s2 <= s3 && s2 <= s4 && s3 < s5 && s4 < s5
    }

    /// CSV of per-epoch median MSE-to-input, one column per setting.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("epoch");
        for st in Setting::ALL {
            s.push(',');
            s.push_str(st.name());
        }
        s.push('\n');
        let len = self.runs.iter().map(|r| r.mse_to_input.len()).max().unwrap_or(0);
        for e in 0..len {
            s.push_str(&e.to_string());
            for st in Setting::ALL {
                let vals: Vec<f64> = self
                    .runs
                    .iter()
                    .filter(|r| r.setting == st)
                    .filter_map(|r| r.mse_to_input.get(e).copied())
                    .collect();
                s.push(',');
                if let Some(m) = median(vals.iter().map(|&v| Some(v))) {
                    s.push_str(&format!("{m:e}"));
                }
            }
            s.push('\n');
        }
        s
    }
}

/// First epoch at which `curve` drops below `tau`.
pub fn epochs_to_threshold(curve: &[f64], tau: f64) -> Option<usize> {
    curve.iter().position(|&v| v < tau)
}

/// Median where `None` sorts above every value.
fn median(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = vals.map(|x| x.unwrap_or(f64::INFINITY)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

fn run_one(
    setting: Setting,
    seed: u64,
    clean: &Tensor,
    corrupt: &Tensor,
    cfg: &ConvergenceConfig,
) -> Result<SeedRun> {
    let input = if setting.corrupt() { corrupt } else { clean };
    let mut task = cfg.base.clone();
    task.weights = LossWeights::new(1.0, cfg.spl_weight, cfg.var_weight);
    task.ablate = setting.subset();
    task.features = FeatureSource::None;
    task.epochs = cfg.epochs;
    task.seed = seed;
    task.early_stop = false;
    let idx = cfg.noise_frame;
    let per = clean.len() / clean.shape()[0];
    let clean_mid = Tensor::new(&clean.shape()[1..], clean.data()[idx * per..(idx + 1) * per].to_vec())?;

    let mut mse_in = Vec::with_capacity(cfg.epochs);
    let mut mse_clean = Vec::with_capacity(cfg.epochs);
    let mut totals = Vec::with_capacity(cfg.epochs);
    let mut plateau = None;
    let mut snapshot = None;
    let mut fitted = None;
    let mut observer = |info: &crate::tasks::EpochInfo| -> Control {
        let m_in = mse(info.frames, input).unwrap_or(f64::NAN);
        mse_in.push(m_in);
        mse_clean.push(mse(info.frames, clean).unwrap_or(f64::NAN));
        totals.push(info.total);
        if fitted.is_none() && m_in < cfg.tau {
            fitted = Some(info.epoch);
        }
        if plateau.is_none() {
            if let Some(e) = detect_plateau(&totals, task.plateau_window, task.plateau_tol) {
                plateau = Some(e);
                snapshot = Some(info.frames.clone());
            }
        }
        if cfg.stop_when_fitted && fitted.is_some() && plateau.is_some() {
            Control::Stop
        } else {
            Control::Continue
        }
    };
    fit_with(input, &Supervision::Direct, &task, &mut observer)?;
    let snapshot_psnr = match &snapshot {
        Some(s) => {
            let f = Tensor::new(&s.shape()[1..], s.data()[idx * per..(idx + 1) * per].to_vec())?;
            Some(psnr(&f, &clean_mid, 1.0)?)
        }
        None => None,
    };
    Ok(SeedRun {
        setting,
        seed,
        epochs_to_fit: epochs_to_threshold(&mse_in, cfg.tau),
        mse_to_input: mse_in,
        mse_to_clean: mse_clean,
        plateau_epoch: plateau,
        snapshot_psnr,
        snapshot,
    })
}

/// Runs every setting for every seed. Results do not depend on `jobs`.
pub fn convergence_experiment(clean: &VideoSequence, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if clean.len() < 3 || cfg.noise_frame == 0 || cfg.noise_frame + 1 >= clean.len() {
        return Err(VdpError::Config("the noise frame must have a neighbor on each side".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(VdpError::Config("at least one seed is required".into()));
    }
    let corrupt = replace_frame_with_noise(clean, cfg.noise_frame, cfg.noise_seed)?;
    let jobs: Vec<(Setting, u64)> = Setting::ALL
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let slots: Vec<Mutex<Option<Result<SeedRun>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.jobs.clamp(1, jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(setting, seed)) = jobs.get(k) else { break };
                let r = run_one(setting, seed, clean.frames(), corrupt.frames(), cfg);
                *slots[k].lock().expect("slot lock") = Some(r);
            });
        }
    });
    let runs: Vec<SeedRun> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every job ran"))
        .collect::<Result<_>>()?;

    let settings = Setting::ALL
        .iter()
        .map(|&s| {
            let mine = || runs.iter().filter(move |r| r.setting == s);
            SettingSummary {
                setting: s,
                weights: s.subset().apply(LossWeights::new(1.0, cfg.spl_weight, cfg.var_weight)),
                median_epochs_to_fit: median(mine().map(|r| r.epochs_to_fit.map(|e| e as f64))),
                median_snapshot_psnr: median(mine().map(|r| r.snapshot_psnr)),
            }
        })
        .collect();
    let noisy_frame_psnr = psnr(&corrupt.frame(cfg.noise_frame)?, &clean.frame(cfg.noise_frame)?, 1.0)?;
    let nmi_snapshot = runs
        .iter()
        .find(|r| r.setting == Setting::CorruptAll)
        .and_then(|r| r.snapshot.clone())
        .map(|s| VideoSequence::new(s).and_then(|v| nmi_matrix(&v, NMI_BINS)))
        .transpose()?;
    Ok(ConvergenceReport {
        tau: cfg.tau,
        epochs: cfg.epochs,
        noise_frame: cfg.noise_frame,
        noisy_frame_psnr,
        settings,
        runs,
        nmi_clean: nmi_matrix(clean, NMI_BINS)?,
        nmi_corrupt: nmi_matrix(&corrupt, NMI_BINS)?,
        nmi_snapshot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_treats_missing_as_slowest() {
        assert_eq!(median([Some(3.0), None, Some(1.0)].into_iter()), Some(3.0));
        assert_eq!(median([None, None, Some(1.0)].into_iter()), None);
        assert_eq!(median([Some(1.0), Some(2.0)].into_iter()), Some(1.5));
    }

    #[test]
    fn threshold_crossing() {
        assert_eq!(epochs_to_threshold(&[0.5, 0.2, 0.05, 0.01], 0.1), Some(2));
        assert_eq!(epochs_to_threshold(&[0.5], 0.1), None);
    }
}
