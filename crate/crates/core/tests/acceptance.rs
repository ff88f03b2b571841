//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.

use std::io::Write;
use std::path::Path;
use std::rc::Rc;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vdp::cli::{self, RunConfig};
use vdp::degrade::{add_gaussian, make_lowres};
use vdp::diffcore::kernels::{self, NormMode};
use vdp::diffcore::{grad_check, Bound, Tape, Tensor, Var};
use vdp::losses::{
    pyramid_loss, rec_loss, removal_loss, variation_loss, FeatureExtractor, LossMode, LossWeights, Objective,
    PyramidSpec,
};
use vdp::metrics::{self, convergence_experiment, ConvergenceReport, Setting};
use vdp::model::{ModelConfig, Vdp};
use vdp::synth;
use vdp::tasks::{self, TaskConfig, TaskKind};
use vdp::videoio::{load_frames, save_frames, MaskSequence, VideoSequence};

fn report(n: u32, ok: bool, detail: &str) {
    // Written to the raw handle so the line survives test output capture.
    let line = format!("criterion {n:>2}: {} | {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(ok, "criterion {n} failed: {detail}");
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn unit(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random::<f64>())
}

fn project(t: &mut Tape, y: Var, seed: u64) -> vdp::Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let w = t.constant(random(&shape, seed));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn mean_l1(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn tiny_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::paper(3, 8, 8);
    cfg.latent_dim = 5;
    cfg.hidden = 4;
    cfg.lstm_layers = 1;
    cfg.depth = 2;
    cfg.base_channels = 4;
    cfg.min_channels = 2;
    cfg.norm = NormMode::Batch;
    cfg.init_seed = 3;
    cfg.latent_seed = 4;
    cfg
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    type Case = (&'static str, Box<dyn Fn(&mut Tape, &[Var]) -> vdp::Result<Var>>, Vec<Tensor>);
    let rows = Rc::new(kernels::bicubic_weights(8, 2));
    let cols = Rc::new(kernels::bicubic_weights(8, 2));
    let mask = Rc::new(Tensor::from_fn(&[2, 1, 4, 4], |i| (i % 3 != 0) as u8 as f64));
    let target = Rc::new(unit(&[2, 3, 4, 4], 60));
    let frozen = kernels::norm_stats(&random(&[3, 2, 3, 3], 53), NormMode::Batch).unwrap();
    let phi = Rc::new(FeatureExtractor::random(3, 9));
    let hid = 3;
    let cases: Vec<Case> = vec![
        ("add", Box::new(|t, v| { let y = t.add(v[0], v[1])?; project(t, y, 1) }), vec![random(&[6], 1), random(&[6], 2)]),
        ("sub", Box::new(|t, v| { let y = t.sub(v[0], v[1])?; project(t, y, 1) }), vec![random(&[6], 3), random(&[6], 4)]),
        ("mul", Box::new(|t, v| { let y = t.mul(v[0], v[1])?; project(t, y, 1) }), vec![random(&[6], 5), random(&[6], 6)]),
        ("scale", Box::new(|t, v| { let y = t.scale(v[0], 2.5); project(t, y, 1) }), vec![random(&[6], 7)]),
        ("tanh", Box::new(|t, v| { let y = t.tanh(v[0]); project(t, y, 1) }), vec![random(&[6], 8)]),
        ("sigmoid", Box::new(|t, v| { let y = t.sigmoid(v[0]); project(t, y, 1) }), vec![random(&[6], 9)]),
        ("leaky_relu", Box::new(|t, v| { let y = t.leaky_relu(v[0], 0.2); project(t, y, 1) }), vec![random(&[6], 10)]),
        ("sum", Box::new(|t, v| { let y = t.tanh(v[0]); Ok(t.sum(y)) }), vec![random(&[6], 11)]),
        (
            "reshape+slice+select+stack",
            Box::new(|t, v| {
                let s = t.stack(&[v[0], v[1]])?;
                let r = t.reshape(s, &[2, 2, 2])?;
                let a = t.slice(r, 1, &[2, 1, 2])?;
                let b = t.select(s, 1)?;
                let pa = project(t, a, 2)?;
                let pb = project(t, b, 3)?;
                t.add(pa, pb)
            }),
            vec![random(&[4], 12), random(&[4], 13)],
        ),
        (
            "concat_channels",
            Box::new(|t, v| { let y = t.concat_channels(&[v[0], v[1]])?; project(t, y, 4) }),
            vec![random(&[2, 1, 3, 3], 14), random(&[2, 2, 3, 3], 15)],
        ),
        (
            "linear",
            Box::new(|t, v| { let y = t.linear(v[0], v[1], v[2])?; project(t, y, 5) }),
            vec![random(&[3, 4], 16), random(&[5, 4], 17), random(&[5], 18)],
        ),
        (
            "conv2d stride 1",
            Box::new(|t, v| { let y = t.conv2d(v[0], v[1], v[2], 1, 1)?; project(t, y, 6) }),
            vec![random(&[2, 2, 5, 5], 19), random(&[3, 2, 3, 3], 20), random(&[3], 21)],
        ),
        (
            "conv2d stride 2",
            Box::new(|t, v| { let y = t.conv2d(v[0], v[1], v[2], 2, 1)?; project(t, y, 6) }),
            vec![random(&[2, 6, 6], 22), random(&[3, 2, 3, 3], 23), random(&[3], 24)],
        ),
        (
            "lstm_cell",
            Box::new(move |t, v| {
                let (h, c) = t.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])?;
                let ph = project(t, h, 7)?;
                let pc = project(t, c, 8)?;
                t.add(ph, pc)
            }),
            vec![
                random(&[2], 25),
                random(&[hid], 26),
                random(&[hid], 27),
                random(&[4 * hid, 2], 28),
                random(&[4 * hid, hid], 29),
                random(&[4 * hid], 30),
            ],
        ),
        (
            "upsample_nearest",
            Box::new(|t, v| { let y = t.upsample_nearest(v[0], 2)?; project(t, y, 9) }),
            vec![random(&[2, 3, 3], 31)],
        ),
        (
            "downsample_area",
            Box::new(|t, v| { let y = t.downsample_area(v[0], 2)?; project(t, y, 10) }),
            vec![random(&[2, 4, 6], 32)],
        ),
        (
            "bicubic resample",
            Box::new(move |t, v| { let y = t.resample(v[0], rows.clone(), 4, cols.clone(), 4)?; project(t, y, 11) }),
            vec![random(&[1, 8, 8], 33)],
        ),
        (
            "batch norm",
            Box::new(|t, v| { let (y, _) = t.norm_train(v[0], v[1], v[2], NormMode::Batch)?; project(t, y, 12) }),
            vec![random(&[3, 2, 3, 3], 34), random(&[2], 35), random(&[2], 36)],
        ),
        (
            "instance norm",
            Box::new(|t, v| { let (y, _) = t.norm_train(v[0], v[1], v[2], NormMode::Instance)?; project(t, y, 13) }),
            vec![random(&[3, 2, 3, 3], 37), random(&[2], 38), random(&[2], 39)],
        ),
        (
            "frozen norm",
            Box::new(move |t, v| { let y = t.norm_frozen(v[0], v[1], v[2], &frozen)?; project(t, y, 14) }),
            vec![random(&[3, 2, 3, 3], 40), random(&[2], 41), random(&[2], 42)],
        ),
        (
            "mask_mul",
            Box::new(move |t, v| { let y = t.mask_mul(v[0], mask.clone())?; project(t, y, 15) }),
            vec![random(&[2, 3, 4, 4], 43)],
        ),
        (
            "l1_frames",
            Box::new(move |t, v| { let c = t.constant((*target).clone()); t.l1_frames(v[0], c) }),
            vec![unit(&[2, 3, 4, 4], 44)],
        ),
        ("variation", Box::new(|t, v| t.variation(v[0])), vec![unit(&[2, 3, 5, 5], 45)]),
        (
            "feature extractor",
            Box::new(move |t, v| {
                let taps = phi.features_on(t, v[0])?;
                let mut acc = t.constant(Tensor::scalar(0.0));
                for (k, f) in taps.into_iter().enumerate() {
                    let p = project(t, f, 16 + k as u64)?;
                    acc = t.add(acc, p)?;
                }
                Ok(acc)
            }),
            vec![unit(&[2, 3, 8, 8], 46)],
        ),
    ];
    let mut worst: (f64, &str) = (0.0, "");
    for (name, f, leaves) in &cases {
        let err = grad_check(f, leaves, 12, 99).unwrap();
        if err > worst.0 {
            worst = (err, name);
        }
    }

    // Composed objective through a 2-block decoder and a 1-layer LSTM.
    let model = Vdp::new(tiny_model_config()).unwrap();
    let video = synth::moving_square(3, 8, 8, 2).unwrap();
    let objective = Objective::new(
        LossWeights::new(1.0, 0.1, 0.1),
        Some(FeatureExtractor::random(3, 5)),
        PyramidSpec::default(),
    );
    let prepared = objective.prepare(video.frames(), None).unwrap();
    let leaves: Vec<Tensor> = model.params().leaves().iter().map(|l| l.value.clone()).collect();
    let composed = grad_check(
        |t, v| {
            let bound = Bound::from_vars(v.to_vec());
            let r = model.rollout_on(t, &bound, 2, true, None)?;
            let terms = objective.terms_on(t, r.frames, &prepared, &LossMode::Plain)?;
            objective.weighted_on(t, &terms)
        },
        &leaves,
        6,
        7,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let ok = worst.0 <= 1e-4 && composed <= 1e-4 && elapsed < Duration::from_secs(120);
    report(
        1,
        ok,
        &format!(
            "{} ops, worst op rel err {:.2e} ({}), composed objective rel err {:.2e} over {} leaves, {:.1}s",
            cases.len(),
            worst.0,
            worst.1,
            composed,
            leaves.len(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_loss_identities() {
    let x = unit(&[3, 16, 16], 1);
    let phi = FeatureExtractor::random(3, 2);
    let spec = PyramidSpec::default();
    let rec = rec_loss(&x, &x, Some(&phi)).unwrap();
    let spl = pyramid_loss(&x, &x, &spec).unwrap();
    let var = variation_loss(&Tensor::full(&[3, 16, 16], 0.37)).unwrap();
    let obj = Objective::new(LossWeights::new(1.0, 0.01, 0.0), Some(phi.clone()), spec);
    let video = unit(&[2, 3, 16, 16], 3);
    let pred = unit(&[2, 3, 16, 16], 4);
    let zeros = Tensor::zeros(&[2, 1, 16, 16]);
    let removal = removal_loss(&video, &zeros, &pred, &obj).unwrap();
    let worst = [rec, spl, var, removal].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    report(
        2,
        worst <= 1e-7,
        &format!("rec {rec:e}, pyramid {spl:e}, variation {var:e}, removal(m=0) {removal:e}"),
    );
}

#[test]
fn criterion_03_overfit_sanity() {
    let video = synth::moving_square(3, 16, 16, 2).unwrap();
    let mut cfg = TaskConfig::desk(TaskKind::Denoise);
    cfg.epochs = 2000;
    let paper = TaskConfig::paper(TaskKind::Denoise);
    assert_eq!(cfg.weights, paper.weights);
    let result = tasks::denoise(&video, &cfg).unwrap();
    let l1 = mean_l1(&result.frames, video.frames());
    report(
        3,
        l1 < 0.02,
        &format!("final mean-L1 {l1:.5} after {} epochs, weights {:?}", result.curve.len(), cfg.weights),
    );
}

fn convergence() -> &'static (ConvergenceReport, Duration) {
    static REPORT: OnceLock<(ConvergenceReport, Duration)> = OnceLock::new();
    REPORT.get_or_init(|| {
        let rc = RunConfig::analyze_defaults();
        let s = &rc.analyze;
        let clean = synth::moving_square(s.frames, s.height, s.width, 3).unwrap();
        let mut cfg = rc.convergence_config();
        cfg.seeds = (0..5).collect();
        let start = Instant::now();
        let r = convergence_experiment(&clean, &cfg).unwrap();
        (r, start.elapsed())
    })
}

#[test]
fn criterion_04_convergence_ordering() {
    let (r, elapsed) = convergence();
    let med: Vec<String> = Setting::ALL
        .iter()
        .map(|&s| {
            let m = r.summary(s).median_epochs_to_fit;
            format!("{}={}", s.name(), m.map_or("inf".into(), |v| format!("{v}")))
        })
        .collect();
    let ok = r.ordering_holds() && *elapsed < Duration::from_secs(30 * 60);
    report(
        4,
        ok,
        &format!("tau {}, median epochs-to-fit {}, {:.0}s", r.tau, med.join(" "), elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_05_intermediate_recovery() {
    let (r, _) = convergence();
    let snap = r.summary(Setting::CorruptAll).median_snapshot_psnr;
    let margin = snap.map(|p| p - r.noisy_frame_psnr);
    report(
        5,
        margin.is_some_and(|m| m > 0.0),
        &format!(
            "snapshot middle-frame PSNR {} dB vs noisy {:.2} dB, margin {}",
            snap.map_or("none".into(), |p| format!("{p:.2}")),
            r.noisy_frame_psnr,
            margin.map_or("none".into(), |m| format!("{m:+.2} dB"))
        ),
    );
}

#[test]
fn criterion_06_denoise_property() {
    let clean = synth::moving_square(15, 48, 48, 3).unwrap();
    let noisy = add_gaussian(&clean, 20.0, 11).unwrap();
    let cfg = TaskConfig::desk(TaskKind::Denoise);
    let out = tasks::denoise(&noisy, &cfg).unwrap().video().unwrap();
    let before = metrics::mean_psnr(&noisy, &clean).unwrap();
    let after = metrics::mean_psnr(&out, &clean).unwrap();
    report(
        6,
        after > before,
        &format!("noisy {before:.2} dB, restored {after:.2} dB, gain {:+.2} dB after {} epochs", after - before, cfg.epochs),
    );
}

#[test]
fn criterion_07_interpolation_endpoints() {
    let video = synth::moving_square(3, 16, 16, 2).unwrap();
    let mut cfg = TaskConfig::desk(TaskKind::Interpolate);
    cfg.epochs = 30;
    let result = tasks::fit(&video, &cfg).unwrap();
    let mut worst = 0.0f64;
    for t in 0..video.len() - 1 {
        let a0 = result.decode_lerp(t, 0.0).unwrap();
        let a1 = result.decode_lerp(t, 1.0).unwrap();
        let f0 = result.frames.slice_outer(t).unwrap();
        let f1 = result.frames.slice_outer(t + 1).unwrap();
        worst = worst.max(a0.zip_map(&f0, |a, b| (a - b).abs()).max_abs());
        worst = worst.max(a1.zip_map(&f1, |a, b| (a - b).abs()).max_abs());
    }
    let alphas = tasks::alphas_for_factor(4).unwrap();
    let expanded = tasks::interpolate_fitted(&result, &alphas).unwrap();
    let mut lerp_err = 0.0f64;
    for t in 0..video.len() - 1 {
        for (k, &a) in alphas.iter().enumerate() {
            let d = result.decode_lerp(t, a).unwrap();
            let e = expanded.frame(4 * t + 1 + k).unwrap();
            lerp_err = lerp_err.max(d.zip_map(&e, |x, y| (x - y).abs()).max_abs());
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let out = dir.path().join("out");
    save_frames(&video, &input).unwrap();
    let code = cli::run([
        "vdp",
        "interpolate",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--factor",
        "4",
        "--epochs",
        "5",
    ]);
    let emitted = load_frames(&out).map(|v| v.len()).unwrap_or(0);
    let ok = worst <= 1e-6
        && lerp_err == 0.0
        && alphas == [0.25, 0.5, 0.75]
        && expanded.len() == 9
        && code == 0
        && emitted == 9;
    report(
        7,
        ok,
        &format!(
            "endpoint max err {worst:.2e}, alphas {alphas:?}, {} frames in memory, CLI exit {code} with {emitted} frames",
            expanded.len()
        ),
    );
}

#[test]
fn criterion_08_superres_cycle_consistency() {
    let hr = synth::moving_square(3, 64, 112, 8).unwrap();
    let lr = make_lowres(&hr, 4).unwrap();
    assert_eq!(lr.frame_shape(), (3, 16, 28));
    let mut cfg = TaskConfig::desk(TaskKind::Superres);
    cfg.pyramid = PyramidSpec::with_factors(&[2, 4]);
    let out = tasks::superresolve(&lr, &cfg).unwrap();
    assert_eq!(out.frames.shape(), &[3, 3, 64, 112]);
    let down = vdp::losses::downsample(&out.frames, 4).unwrap();
    let l1 = mean_l1(&down, lr.frames());
    report(8, l1 <= 0.03, &format!("cycle mean-L1 {l1:.5} after {} epochs", cfg.epochs));
}

#[test]
fn criterion_09_removal_hole_invariance() {
    let video = synth::moving_square(3, 16, 16, 2).unwrap();
    let mask = Tensor::from_fn(&[1, 16, 16], |i| {
        let (y, x) = (i / 16, i % 16);
        if (4..10).contains(&y) && (5..12).contains(&x) {
            0.0
        } else {
            1.0
        }
    });
    let masks = MaskSequence::stationary(&mask, 3).unwrap();
    let mut perturbed = video.frames().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (i, v) in perturbed.data_mut().iter_mut().enumerate() {
        if mask.data()[i % 256] == 0.0 {
            *v = rng.random::<f64>();
        }
    }
    let perturbed = VideoSequence::new(perturbed).unwrap();
    assert_ne!(&perturbed, &video);
    let mut cfg = TaskConfig::desk(TaskKind::Removal);
    cfg.epochs = 40;
    let a = tasks::remove_object(&video, &cfg, &masks).unwrap();
    let b = tasks::remove_object(&perturbed, &cfg, &masks).unwrap();
    let bits = |r: &tasks::FitResult| -> Vec<u64> {
        r.curve
            .iter()
            .flat_map(|p| [p.total, p.rec, p.spl, p.var].map(f64::to_bits))
            .collect()
    };
    let same_curve = bits(&a) == bits(&b);
    let same_frames = a.frames == b.frames;
    report(
        9,
        same_curve && same_frames,
        &format!("{} epochs, loss trajectory identical {same_curve}, output identical {same_frames}", cfg.epochs),
    );
}

fn scalar_mse(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s / a.len() as f64
}

/// Windowed SSIM with explicit loops over channels, windows and taps.
fn scalar_ssim(a: &Tensor, b: &Tensor) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let mut g = [0.0; 11];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
    }
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for ch in 0..c {
        let at = |t: &Tensor, y: usize, x: usize| t.data()[(ch * h + y) * w + x];
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let k = g[dy] * g[dx] / norm;
                        let (p, q) = (at(a, y0 + dy, x0 + dx), at(b, y0 + dy, x0 + dx));
                        ma += k * p;
                        mb += k * q;
                        saa += k * p * p;
                        sbb += k * q * q;
                        sab += k * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / c as f64
}

fn scalar_nmi(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let bin = |v: f64| ((v * bins as f64).floor() as usize).min(bins - 1);
    let n = a.len() as f64;
    let mut joint = vec![vec![0.0; bins]; bins];
    for i in 0..a.len() {
        joint[bin(a[i])][bin(b[i])] += 1.0;
    }
    let pa: Vec<f64> = (0..bins).map(|i| joint[i].iter().sum::<f64>() / n).collect();
    let pb: Vec<f64> = (0..bins).map(|j| (0..bins).map(|i| joint[i][j]).sum::<f64>() / n).collect();
    let h = |p: &[f64]| -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i][j] / n;
            if p > 0.0 {
                mi += p * (p / (pa[i] * pb[j])).ln();
            }
        }
    }
    2.0 * mi / (h(&pa) + h(&pb))
}

#[test]
fn criterion_10_metric_units() {
    let mut fails = Vec::new();
    let zero = Tensor::zeros(&[3, 16, 16]);
    let half = Tensor::full(&[3, 16, 16], 0.5);
    let p = metrics::psnr(&zero, &half, 1.0).unwrap();
    if (p - 6.0206).abs() > 1e-4 {
        fails.push(format!("psnr closed form {p}"));
    }
    let a = unit(&[3, 24, 24], 1);
    let b = unit(&[3, 24, 24], 2);
    if metrics::psnr(&a, &a, 1.0).unwrap() != 99.0 {
        fails.push("psnr identical".into());
    }
    let oracle = 10.0 * (1.0 / scalar_mse(a.data(), b.data())).log10();
    let p = metrics::psnr(&a, &b, 1.0).unwrap();
    if (p - oracle).abs() > 1e-6 {
        fails.push(format!("psnr oracle {p} vs {oracle}"));
    }
    let s = metrics::ssim(&a, &a, 1.0).unwrap();
    if (s - 1.0).abs() > 1e-12 {
        fails.push(format!("ssim(a,a) {s}"));
    }
    let smooth = Tensor::from_fn(&[3, 24, 24], |i| {
        let (y, x) = ((i / 24) % 24, i % 24);
        0.5 + 0.3 * ((x as f64) * 0.4).sin() * ((y as f64) * 0.3).cos()
    });
    let noisy = smooth.zip_map(&b, |s, n| (s + 0.2 * (n - 0.5)).clamp(0.0, 1.0));
    let s = metrics::ssim(&smooth, &noisy, 1.0).unwrap();
    let so = scalar_ssim(&smooth, &noisy);
    if (s - so).abs() > 1e-5 {
        fails.push(format!("ssim oracle {s} vs {so}"));
    }
    let n = metrics::nmi(&a, &a, 64).unwrap();
    if (n - 1.0).abs() > 1e-12 {
        fails.push(format!("nmi(a,a) {n}"));
    }
    let f = synth::moving_square(1, 64, 64, 1).unwrap().frame(0).unwrap();
    let g = unit(&[3, 64, 64], 4);
    let ind = metrics::nmi(&f, &g, 64).unwrap();
    if ind >= 0.1 {
        fails.push(format!("nmi independent {ind}"));
    }
    let no = scalar_nmi(f.data(), g.data(), 64);
    if (ind - no).abs() > 1e-9 {
        fails.push(format!("nmi oracle {ind} vs {no}"));
    }
    let corr = smooth.zip_map(&b, |s, n| (0.8 * s + 0.2 * n).clamp(0.0, 1.0));
    let nc = metrics::nmi(&smooth, &corr, 64).unwrap();
    let nco = scalar_nmi(smooth.data(), corr.data(), 64);
    if (nc - nco).abs() > 1e-9 {
        fails.push(format!("nmi correlated oracle {nc} vs {nco}"));
    }
    report(
        10,
        fails.is_empty(),
        &if fails.is_empty() {
            format!("psnr 6.0206 case, ssim/nmi identities, oracles agree; nmi vs noise {ind:.4}")
        } else {
            fails.join("; ")
        },
    );
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "timing.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("vdp").chain(args.iter().copied()))
}

#[test]
fn criterion_11_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let clean = synth::moving_square(3, 16, 16, 2).unwrap();
    save_frames(&clean, Path::new(&p("clean"))).unwrap();
    let mut codes = vec![
        run(&["degrade", "--in", &p("clean"), "--out", &p("noisy1"), "--gaussian", "20", "--seed", "4"]),
        run(&["degrade", "--config", &p("noisy1/run-config.echo"), "--out", &p("noisy2")]),
    ];
    let args = ["--in", &p("noisy1"), "--reference", &p("clean"), "--epochs", "25", "--seed", "3"];
    let mut first = vec!["denoise", "--out"];
    let out1 = p("den1");
    first.push(&out1);
    first.extend_from_slice(&args);
    codes.push(run(&first));
    codes.push(run(&["denoise", "--config", &p("den1/run-config.echo"), "--out", &p("den2")]));
    codes.push(run(&["denoise", "--config", &p("den1/run-config.echo"), "--out", &p("den3")]));
    codes.push(run(&[
        "analyze", "--out", &p("an1"), "--epochs", "15", "--seeds", "2", "--jobs", "2",
    ]));
    codes.push(run(&["analyze", "--config", &p("an1/run-config.echo"), "--out", &p("an2")]));
    let pairs = [("noisy1", "noisy2"), ("den1", "den2"), ("den1", "den3"), ("an1", "an2")];
    let mut mismatched = Vec::new();
    for (a, b) in pairs {
        let (x, y) = (dir_bytes(Path::new(&p(a))), dir_bytes(Path::new(&p(b))));
        if x.is_empty() || x.len() != y.len() {
            mismatched.push(format!("{a}/{b}: file sets differ"));
            continue;
        }
        for (fx, fy) in x.iter().zip(&y) {
            if fx != fy {
                mismatched.push(format!("{a}/{b}: {}", fx.0));
            }
        }
    }
    let ok = codes.iter().all(|&c| c == 0) && mismatched.is_empty();
    report(
        11,
        ok,
        &format!("exit codes {codes:?}, {} output pairs compared, mismatches {mismatched:?}", pairs.len()),
    );
}
