use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vdp::degrade::replace_frame_with_noise;
use vdp::diffcore::Tensor;
use vdp::metrics::{
    compare_videos, epochs_to_threshold, mse, nmi, nmi_matrix, psnr, ssim, ConvergenceReport, MetricsReport,
    Setting, SettingSummary, PSNR_CAP_DB,
};
use vdp::losses::LossWeights;
use vdp::synth;
use vdp::videoio::VideoSequence;

fn unit(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random::<f64>())
}

#[test]
fn psnr_examples() {
    let a = unit(&[3, 16, 16], 1);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    let p = psnr(&Tensor::zeros(&[3, 4, 4]), &Tensor::full(&[3, 4, 4], 0.5), 1.0).unwrap();
    assert!((p - 10.0 * 4f64.log10()).abs() < 1e-12);
    assert!((p - 6.0206).abs() < 1e-4);
    let b = unit(&[3, 16, 16], 2);
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a.data()[i] - b.data()[i]).powi(2);
    }
    let oracle = 10.0 * (1.0 / (s / a.len() as f64)).log10();
    assert!((psnr(&a, &b, 1.0).unwrap() - oracle).abs() < 1e-6);
    assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    assert!(psnr(&a, &Tensor::zeros(&[3, 16, 8]), 1.0).is_err());
}

#[test]
fn psnr_is_uncapped_for_tiny_errors() {
    let a = Tensor::full(&[1, 4, 4], 0.5);
    let b = a.map(|v| v + 1e-6);
    assert!(psnr(&a, &b, 1.0).unwrap() > 100.0);
}

#[test]
fn ssim_examples() {
    let a = unit(&[3, 16, 16], 3);
    assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
    let bin = a.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let inv = bin.map(|v| 1.0 - v);
    assert!(ssim(&bin, &inv, 1.0).unwrap() < 0.0);
    let b = unit(&[3, 16, 16], 4);
    assert_eq!(ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
    assert!(ssim(&Tensor::zeros(&[1, 8, 8]), &Tensor::zeros(&[1, 8, 8]), 1.0).is_err());
}

#[test]
fn nmi_examples() {
    let a = synth::moving_square(1, 64, 64, 1).unwrap().frame(0).unwrap();
    assert!((nmi(&a, &a, 64).unwrap() - 1.0).abs() < 1e-12);
    let noise = unit(&[3, 64, 64], 5);
    let v = nmi(&a, &noise, 64).unwrap();
    assert!((0.0..0.1).contains(&v), "{v}");
}

#[test]
fn nmi_is_invariant_to_shared_permutation() {
    let a = unit(&[1, 16, 16], 6);
    let b = a.zip_map(&unit(&[1, 16, 16], 7), |x, y| 0.7 * x + 0.3 * y);
    let mut idx: Vec<usize> = (0..256).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in (1..idx.len()).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let pa = Tensor::from_fn(&[1, 16, 16], |i| a.data()[idx[i]]);
    let pb = Tensor::from_fn(&[1, 16, 16], |i| b.data()[idx[i]]);
    let (x, y) = (nmi(&a, &b, 64).unwrap(), nmi(&pa, &pb, 64).unwrap());
    assert!((x - y).abs() < 1e-12);
}

#[test]
fn noise_frame_is_independent_of_neighbors() {
    let clean = synth::moving_square(3, 64, 64, 2).unwrap();
    let corrupt = replace_frame_with_noise(&clean, 1, 3).unwrap();
    let m = nmi_matrix(&corrupt, 64).unwrap();
    assert!(m[0][1] < 0.1 && m[2][1] < 0.1, "{m:?}");
    assert!(m[0][2] > 0.3, "{m:?}");
    assert!((m[1][1] - 1.0).abs() < 1e-12);
}

#[test]
fn identical_videos_score_cap_and_one() {
    let v = synth::moving_square(2, 16, 16, 1).unwrap();
    let scores = compare_videos(&v, &v).unwrap();
    assert!(scores.iter().all(|s| s.psnr == PSNR_CAP_DB && s.ssim == Some(1.0)));
    let mut r = MetricsReport::new(serde_json::json!({}));
    r.score(&v, &v).unwrap();
    assert_eq!(r.mean_psnr, Some(PSNR_CAP_DB));
    let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    let small = VideoSequence::new(Tensor::zeros(&[1, 3, 4, 4])).unwrap();
    assert_eq!(compare_videos(&small, &small).unwrap()[0].ssim, None);
}

#[test]
fn mse_matches_definition() {
    let (a, b) = (unit(&[2, 5], 9), unit(&[2, 5], 10));
    let m: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 10.0;
    assert!((mse(&a, &b).unwrap() - m).abs() < 1e-15);
}

fn summary(s: Setting, e: Option<f64>) -> SettingSummary {
    SettingSummary {
        setting: s,
        weights: LossWeights::new(1.0, 0.0, 0.0),
        median_epochs_to_fit: e,
        median_snapshot_psnr: None,
    }
}

fn report(e: [Option<f64>; 5]) -> ConvergenceReport {
    ConvergenceReport {
        tau: 0.02,
        epochs: 10,
        noise_frame: 1,
        noisy_frame_psnr: 10.0,
        settings: Setting::ALL.iter().zip(e).map(|(&s, v)| summary(s, v)).collect(),
        runs: Vec::new(),
        nmi_clean: Vec::new(),
        nmi_corrupt: Vec::new(),
        nmi_snapshot: None,
    }
}

#[test]
fn ordering_rule() {
    assert!(report([Some(1.0), Some(5.0), Some(5.0), Some(7.0), Some(9.0)]).ordering_holds());
    assert!(report([Some(1.0), Some(5.0), Some(6.0), Some(7.0), None]).ordering_holds());
    assert!(!report([Some(1.0), Some(5.0), Some(4.0), Some(7.0), Some(9.0)]).ordering_holds());
    assert!(!report([Some(1.0), Some(5.0), Some(6.0), Some(9.0), Some(9.0)]).ordering_holds());
    assert!(!report([Some(5.0), Some(5.0), Some(6.0), Some(7.0), Some(9.0)]).ordering_holds());
    assert!(!report([Some(1.0), Some(5.0), None, Some(7.0), None]).ordering_holds());
}

#[test]
fn threshold_epoch() {
    assert_eq!(epochs_to_threshold(&[0.5, 0.3, 0.1, 0.05], 0.1), Some(3));
    assert_eq!(epochs_to_threshold(&[0.5, 0.3], 0.1), None);
}
