use std::path::{Path, PathBuf};

use vdp::cli::{self, parse_config, RunConfig, EXIT_OK, EXIT_USAGE};
use vdp::metrics::{compare_videos, MetricsReport, PSNR_CAP_DB};
use vdp::synth;
use vdp::videoio::{load_frames, save_frames};

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("vdp").chain(args.iter().copied()))
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        save_frames(&synth::moving_square(3, 16, 16, 2).unwrap(), &w.path("clean")).unwrap();
        w
    }

    fn path(&self, s: &str) -> PathBuf {
        self.dir.path().join(s)
    }

    fn p(&self, s: &str) -> String {
        self.path(s).to_string_lossy().into_owned()
    }
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]), EXIT_USAGE);
    assert_eq!(run(&["denoise"]), EXIT_USAGE);
    assert_eq!(run(&["denoise", "--out", "x", "--bogus"]), EXIT_USAGE);
    assert_eq!(run(&["--help"]), EXIT_OK);
    let w = Work::new();
    assert_eq!(run(&["denoise", "--in", &w.p("absent"), "--out", &w.p("o")]), EXIT_USAGE);
    assert_eq!(run(&["denoise", "--in", &w.p("clean"), "--out", &w.p("o"), "--preset", "paper-fly"]), EXIT_USAGE);
    assert_eq!(run(&["denoise", "--in", &w.p("clean"), "--out", &w.p("o"), "--preset", "paper-superres"]), EXIT_USAGE);
    assert_eq!(run(&["denoise", "--in", &w.p("clean"), "--out", &w.p("o"), "--ablate", "most"]), EXIT_USAGE);
    assert_eq!(run(&["remove", "--in", &w.p("clean"), "--out", &w.p("o")]), EXIT_USAGE);
    assert_eq!(run(&["interpolate", "--in", &w.p("clean"), "--out", &w.p("o"), "--factor", "1"]), EXIT_USAGE);
    assert_eq!(run(&["degrade", "--in", &w.p("clean"), "--out", &w.p("o")]), EXIT_USAGE);
    assert_eq!(run(&["degrade", "--in", &w.p("clean"), "--out", &w.p("o"), "--replace-frame", "7"]), EXIT_USAGE);
    assert!(!w.path("o").exists());
}

#[test]
fn degrade_variants_write_frames_and_spec() {
    let w = Work::new();
    for (flag, value, kind) in [("--gaussian", "20", "gaussian"), ("--poisson", "25", "poisson"), ("--replace-frame", "1", "frame_replace")] {
        let out = w.p(kind);
        assert_eq!(run(&["degrade", "--in", &w.p("clean"), "--out", &out, flag, value]), EXIT_OK);
        assert_eq!(load_frames(&w.path(kind)).unwrap().len(), 3);
        let spec = read_json(&w.path(kind).join("noise-spec.json"));
        assert_eq!(spec["kind"], kind);
        assert!(w.path(kind).join("run-config.echo").exists());
    }
}

#[test]
fn denoise_writes_reports() {
    let w = Work::new();
    let code = run(&[
        "denoise", "--in", &w.p("clean"), "--out", &w.p("o"), "--epochs", "4", "--reference", &w.p("clean"),
        "--preset", "paper-denoise",
    ]);
    assert_eq!(code, EXIT_OK);
    for f in ["metrics.json", "curves.csv", "run-config.echo", "timing.json"] {
        assert!(w.path("o").join(f).exists(), "{f}");
    }
    let m = read_json(&w.path("o/metrics.json"));
    assert_eq!(m["config"]["task"]["lambda_spl"], "0.0001");
    assert_eq!(m["config"]["task"]["lambda_var"], "0.0001");
    assert_eq!(m["per_frame"].as_array().unwrap().len(), 3);
    assert!(m.to_string().find(&w.p("o")).is_none(), "output path leaked into metrics.json");
    let csv = std::fs::read_to_string(w.path("o/curves.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "epoch,total,rec,spl,var");
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn flags_override_config_file() {
    let w = Work::new();
    std::fs::write(w.path("run.cfg"), "[task]\nepochs = 3\nlambda_var = 0.5\nseed = 9\n").unwrap();
    let code = run(&[
        "denoise", "--config", &w.p("run.cfg"), "--in", &w.p("clean"), "--out", &w.p("o"), "--seed", "2",
    ]);
    assert_eq!(code, EXIT_OK);
    let echo = std::fs::read_to_string(w.path("o/run-config.echo")).unwrap();
    let map = parse_config(&echo, Path::new("echo")).unwrap();
    assert_eq!(map["task.epochs"], "3");
    assert_eq!(map["task.lambda_var"], "0.5");
    assert_eq!(map["task.seed"], "2");
    assert_eq!(map["run.command"], "denoise");
}

#[test]
fn superres_rec_only_ablation() {
    let w = Work::new();
    save_frames(&synth::moving_square(2, 8, 8, 1).unwrap(), &w.path("lr")).unwrap();
    let code = run(&[
        "superres", "--in", &w.p("lr"), "--out", &w.p("o"), "--scale", "4", "--ablate", "rec", "--epochs", "2",
    ]);
    assert_eq!(code, EXIT_OK);
    let out = load_frames(&w.path("o")).unwrap();
    assert_eq!(out.frame_shape(), (3, 32, 32));
    let m = read_json(&w.path("o/metrics.json"));
    assert_eq!(m["config"]["task"]["ablate"], "rec");
    let spl = m["curves"][0][1][0]["spl"].as_f64().unwrap();
    assert!(spl > 0.0);
}

#[test]
fn remove_with_stationary_mask() {
    let w = Work::new();
    let mask = vdp::diffcore::Tensor::from_fn(&[1, 16, 16], |i| if i % 16 < 5 { 0.0 } else { 1.0 });
    vdp::videoio::save_mask(&mask, &w.path("mask.png")).unwrap();
    let code = run(&[
        "remove", "--in", &w.p("clean"), "--out", &w.p("o"), "--mask", &w.p("mask.png"), "--epochs", "3",
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(load_frames(&w.path("o")).unwrap().len(), 3);
}

#[test]
fn metrics_command_matches_module() {
    let w = Work::new();
    assert_eq!(run(&["degrade", "--in", &w.p("clean"), "--out", &w.p("noisy"), "--gaussian", "20"]), EXIT_OK);
    assert_eq!(run(&["metrics", "--in", &w.p("clean"), "--reference", &w.p("clean"), "--out", &w.p("same")]), EXIT_OK);
    let same: MetricsReport = serde_json::from_value(read_json(&w.path("same/metrics.json"))).unwrap();
    assert!(same.per_frame.iter().all(|s| s.psnr == PSNR_CAP_DB && s.ssim == Some(1.0)));

    assert_eq!(run(&["metrics", "--in", &w.p("noisy"), "--reference", &w.p("clean"), "--out", &w.p("m")]), EXIT_OK);
    let r: MetricsReport = serde_json::from_value(read_json(&w.path("m/metrics.json"))).unwrap();
    let direct = compare_videos(&load_frames(&w.path("noisy")).unwrap(), &load_frames(&w.path("clean")).unwrap()).unwrap();
    assert_eq!(r.per_frame, direct);

    save_frames(&synth::moving_square(2, 16, 16, 2).unwrap(), &w.path("short")).unwrap();
    assert_eq!(run(&["metrics", "--in", &w.p("short"), "--reference", &w.p("clean")]), EXIT_USAGE);
}

#[test]
fn analyze_writes_setting_columns_and_tau() {
    let w = Work::new();
    let code = run(&["analyze", "--out", &w.p("a"), "--epochs", "6", "--seeds", "1", "--tau", "0.03"]);
    assert_eq!(code, EXIT_OK);
    let csv = std::fs::read_to_string(w.path("a/curves.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "epoch,clean_l1,corrupt_l1,corrupt_l1_spl,corrupt_l1_var,corrupt_all"
    );
    let c = read_json(&w.path("a/convergence.json"));
    assert_eq!(c["tau"], 0.03);
    assert_eq!(c["runs"].as_array().unwrap().len(), 5);
    assert!(w.path("a/metrics.json").exists());
}

#[test]
fn echo_round_trips_through_config() {
    let rc = RunConfig::analyze_defaults();
    let echo = rc.echo();
    let mut back = RunConfig::from_preset("analyze", &rc.preset).unwrap();
    back.apply_map(&parse_config(&echo, Path::new("echo")).unwrap()).unwrap();
    assert_eq!(back.echo(), echo);
}
