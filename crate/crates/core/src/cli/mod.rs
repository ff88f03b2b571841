//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a computation fails, 2 for usage,
//! configuration and input errors.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_config, AnalyzeSettings, ConfigMap, RunConfig};

use crate::degrade::NoiseSpec;
use crate::error::VdpError;
use crate::metrics::{self, compare_videos, convergence_experiment, ConvergenceConfig, MetricsReport, Setting};
use crate::synth;
use crate::tasks::{self, curve_csv, FitResult, TaskKind};
use crate::videoio::{load_frames, load_masks, save_frame_tensor, save_frames, VideoSequence};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "vdp", version, about = "Per-video latent dynamics prior for video restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct TaskArgs {
    /// Directory of frame_%05d.png input frames.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// paper-<task> or desk-<task>.
    #[arg(long)]
    preset: Option<String>,
    /// key = value configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_rec: Option<f64>,
    #[arg(long)]
    lambda_spl: Option<f64>,
    #[arg(long)]
    lambda_var: Option<f64>,
    /// Loss subset: rec, rec+var, rec+spl or all.
    #[arg(long)]
    ablate: Option<String>,
    /// Stop at the first loss plateau.
    #[arg(long)]
    early_stop: bool,
    /// Ground-truth frames to score the output against.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Restore a noisy sequence.
    Denoise(TaskArgs),
    /// Insert frames between every pair of input frames.
    Interpolate {
        #[command(flatten)]
        task: TaskArgs,
        /// Temporal upsampling factor; inserts factor − 1 frames per pair.
        #[arg(long)]
        factor: Option<usize>,
    },
    /// Upscale every frame.
    Superres {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Fill masked regions.
    Remove {
        #[command(flatten)]
        task: TaskArgs,
        /// mask.png, or a directory with mask.png or mask_%05d.png.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Corrupt a clean sequence.
    Degrade {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Gaussian noise standard deviation in 8-bit units.
        #[arg(long)]
        gaussian: Option<f64>,
        /// Additive Poisson noise intensity in 8-bit units.
        #[arg(long)]
        poisson: Option<f64>,
        /// Replace this frame with uniform noise.
        #[arg(long)]
        replace_frame: Option<usize>,
        /// Area-average downscaling factor.
        #[arg(long)]
        downscale: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the five-setting convergence experiment.
    Analyze {
        #[command(flatten)]
        task: TaskArgs,
        /// Number of seeds per setting.
        #[arg(long)]
        seeds: Option<usize>,
        /// MSE-to-input threshold.
        #[arg(long)]
        tau: Option<f64>,
        /// Parallel fits.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare two frame directories.
    Metrics {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Directory for metrics.json; printed to stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: VdpError,
}

fn usage(error: VdpError) -> Failure {
    Failure { code: EXIT_USAGE, error }
}

fn compute(error: VdpError) -> Failure {
    Failure {
        code: EXIT_COMPUTE,
        error,
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Denoise(a) => run_task("denoise", &a, |_| Ok(())),
        Command::Interpolate { task, factor } => run_task("interpolate", &task, |rc| {
            if let Some(f) = factor {
                rc.task.alphas = tasks::alphas_for_factor(f)?;
            }
            Ok(())
        }),
        Command::Superres { task, scale } => run_task("superres", &task, |rc| {
            if let Some(s) = scale {
                rc.task.scale = s;
            }
            Ok(())
        }),
        Command::Remove { task, mask } => run_task("remove", &task, |rc| {
            if let Some(m) = &mask {
                rc.mask = Some(m.clone());
            }
            Ok(())
        }),
        Command::Degrade {
            input,
            out,
            config,
            gaussian,
            poisson,
            replace_frame,
            downscale,
            seed,
        } => cmd_degrade(input, &out, config, [gaussian, poisson], replace_frame, downscale, seed),
        Command::Analyze { task, seeds, tau, jobs } => cmd_analyze(&task, seeds, tau, jobs),
        Command::Metrics { input, reference, out } => cmd_metrics(&input, &reference, out.as_deref()),
    }
}

fn read_config(path: &Path) -> CliResult<ConfigMap> {
    let text = fs::read_to_string(path).map_err(|e| usage(VdpError::io(path, e)))?;
    parse_config(&text, path).map_err(usage)
}

/// Preset, then config file, then flags.
fn resolve(command: &str, a: &TaskArgs) -> CliResult<RunConfig> {
    let map = match &a.config {
        Some(p) => read_config(p)?,
        None => ConfigMap::new(),
    };
    let preset = a
        .preset
        .clone()
        .or_else(|| map.get("task.preset").cloned())
        .unwrap_or_else(|| config::default_preset(command).to_string());
    let mut rc = RunConfig::from_preset(command, &preset).map_err(usage)?;
    if command == "analyze" && !map.contains_key("task.epochs") {
        rc.apply_analyze_defaults();
    }
    rc.apply_map(&map).map_err(usage)?;
    let t = &mut rc.task;
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.lambda_rec {
        t.weights.rec = v;
    }
    if let Some(v) = a.lambda_spl {
        t.weights.spl = v;
    }
    if let Some(v) = a.lambda_var {
        t.weights.var = v;
    }
    if let Some(v) = &a.ablate {
        t.ablate = v.parse().map_err(usage)?;
    }
    if a.early_stop {
        t.early_stop = true;
    }
    if let Some(p) = &a.input {
        rc.input = Some(p.clone());
    }
    if let Some(p) = &a.reference {
        rc.reference = Some(p.clone());
    }
    Ok(rc)
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| compute(VdpError::io(path, e)))
}

fn prepare_out(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| compute(VdpError::io(out, e)))
}

fn write_timing(out: &Path, start: Instant, epoch_seconds: &[f64]) -> CliResult<()> {
    let timing = serde_json::json!({
        "total_seconds": start.elapsed().as_secs_f64(),
        "epoch_seconds": epoch_seconds,
    });
    write(&out.join("timing.json"), &serde_json::to_string_pretty(&timing).expect("timing serializes"))
}

fn load_input(rc: &RunConfig) -> CliResult<VideoSequence> {
    let input = rc
        .input
        .as_ref()
        .ok_or_else(|| usage(VdpError::Config("missing --in".into())))?;
    load_frames(input).map_err(usage)
}

fn run_task(command: &str, a: &TaskArgs, extra: impl FnOnce(&mut RunConfig) -> crate::Result<()>) -> CliResult<()> {
    let start = Instant::now();
    let mut rc = resolve(command, a)?;
    extra(&mut rc).map_err(usage)?;
    rc.task.validate().map_err(usage)?;
    let video = load_input(&rc)?;
    let reference = rc.reference.as_ref().map(|p| load_frames(p)).transpose().map_err(usage)?;
    let masks = match rc.task.kind {
        TaskKind::Removal => {
            let path = rc
                .mask
                .as_ref()
                .ok_or_else(|| usage(VdpError::Config("remove needs --mask".into())))?;
            Some(load_masks(path, video.len()).map_err(usage)?)
        }
        _ => None,
    };

    let (result, output) = match rc.task.kind {
        TaskKind::Denoise => {
            let r = tasks::denoise(&video, &rc.task).map_err(compute)?;
            let v = r.video().map_err(compute)?;
            (r, v)
        }
        TaskKind::Interpolate => tasks::interpolate(&video, &rc.task).map_err(compute)?,
        TaskKind::Superres => {
            let r = tasks::superresolve(&video, &rc.task).map_err(compute)?;
            let v = r.video().map_err(compute)?;
            (r, v)
        }
        TaskKind::Removal => {
            let masks = masks.as_ref().expect("masks loaded for removal");
            let r = tasks::remove_object(&video, &rc.task, masks).map_err(compute)?;
            let v = r.video().map_err(compute)?;
            (r, v)
        }
    };

    let out = &a.out;
    prepare_out(out)?;
    save_frames(&output, out).map_err(compute)?;
    let mut report = task_report(&rc, &result, &video, &output)?;
    if let Some(reference) = &reference {
        report.score(&output, reference).map_err(usage)?;
        if reference.len() == video.len() && reference.frame_shape() == video.frame_shape() {
            report.input_mean_psnr = Some(metrics::mean_psnr(&video, reference).map_err(compute)?);
        }
    }
    write(&out.join("metrics.json"), &report.to_json())?;
    write(&out.join("curves.csv"), &curve_csv(&result.curve))?;
    write(&out.join("run-config.echo"), &rc.echo())?;
    write_timing(out, start, &result.epoch_seconds)
}

fn task_report(rc: &RunConfig, result: &FitResult, input: &VideoSequence, output: &VideoSequence) -> CliResult<MetricsReport> {
    let mut report = MetricsReport::new(rc.to_json());
    report.curves.push(("fit".into(), result.curve.clone()));
    report.warnings = result.warnings.clone();
    report.extras.insert("epochs_run".into(), result.curve.len() as f64);
    if let Some(e) = result.early_stop_epoch {
        report.extras.insert("early_stop_epoch".into(), e as f64);
    }
    if let Some(last) = result.curve.last() {
        report.extras.insert("final_loss".into(), last.total);
    }
    match rc.task.kind {
        TaskKind::Superres => {
            let down = crate::losses::downsample(output.frames(), rc.task.scale).map_err(compute)?;
            let l1 = crate::diffcore::kernels::l1_frames(&down, input.frames()).map_err(compute)? / input.len() as f64;
            report.extras.insert("cycle_mean_l1".into(), l1);
        }
        TaskKind::Denoise | TaskKind::Removal => {
            report.extras.insert("psnr_vs_input".into(), metrics::mean_psnr(output, input).map_err(compute)?);
        }
        TaskKind::Interpolate => {
            report.extras.insert("frames_out".into(), output.len() as f64);
        }
    }
    Ok(report)
}

fn cmd_degrade(
    input: Option<PathBuf>,
    out: &Path,
    config: Option<PathBuf>,
    noise: [Option<f64>; 2],
    replace_frame: Option<usize>,
    downscale: Option<usize>,
    seed: Option<u64>,
) -> CliResult<()> {
    let map = match &config {
        Some(p) => read_config(p)?,
        None => ConfigMap::new(),
    };
    let mut rc = RunConfig::from_preset("degrade", "desk-denoise").map_err(usage)?;
    rc.apply_map(&map).map_err(usage)?;
    if let Some(p) = input {
        rc.input = Some(p);
    }
    let seed = seed.unwrap_or(rc.task.seed);
    let [gaussian, poisson] = noise;
    let mut specs = Vec::new();
    if let Some(sigma) = gaussian {
        specs.push(NoiseSpec::Gaussian { sigma, seed });
    }
    if let Some(lambda) = poisson {
        specs.push(NoiseSpec::Poisson { lambda, seed });
    }
    if let Some(i) = replace_frame {
        specs.push(NoiseSpec::FrameReplace { indices: vec![i], seed });
    }
    if let Some(scale) = downscale {
        specs.push(NoiseSpec::Downscale { scale });
    }
    match specs.len() {
        0 if rc.noise.is_some() => {}
        1 => rc.noise = specs.pop(),
        0 => return Err(usage(VdpError::Config("choose one of --gaussian, --poisson, --replace-frame, --downscale".into()))),
        _ => return Err(usage(VdpError::Config("give only one corruption per run".into()))),
    }
    rc.task.seed = seed;
    let spec = rc.noise.clone().expect("noise spec resolved");
    let video = load_input(&rc)?;
    spec.validate(video.len()).map_err(usage)?;
    let degraded = spec.apply(&video).map_err(|e| match e {
        VdpError::Divisibility { .. } => usage(e),
        other => compute(other),
    })?;
    prepare_out(out)?;
    save_frames(&degraded, out).map_err(compute)?;
    write(&out.join("noise-spec.json"), &serde_json::to_string_pretty(&spec).expect("spec serializes"))?;
    write(&out.join("run-config.echo"), &rc.echo())
}

fn cmd_analyze(a: &TaskArgs, seeds: Option<usize>, tau: Option<f64>, jobs: Option<usize>) -> CliResult<()> {
    let start = Instant::now();
    let mut rc = resolve("analyze", a)?;
    if let Some(s) = seeds {
        rc.analyze.seeds = s;
    }
    if let Some(t) = tau {
        rc.analyze.tau = t;
    }
    if let Some(j) = jobs {
        rc.jobs = j;
    }
    rc.task.validate().map_err(usage)?;
    if rc.analyze.seeds == 0 {
        return Err(usage(VdpError::Config("--seeds must be ≥ 1".into())));
    }
    let clean = match &rc.input {
        Some(_) => load_input(&rc)?,
        None => {
            let s = &rc.analyze;
            synth::moving_square(s.frames, s.height, s.width, 3).map_err(usage)?
        }
    };
    let cfg = rc.convergence_config();
    let report = convergence_experiment(&clean, &cfg).map_err(|e| match e {
        VdpError::Config(_) | VdpError::Divisibility { .. } => usage(e),
        other => compute(other),
    })?;

    let out = &a.out;
    prepare_out(out)?;
    write(&out.join("curves.csv"), &report.curves_csv())?;
    write(
        &out.join("convergence.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    if let Some(snap) = report
        .runs
        .iter()
        .find(|r| r.setting == Setting::CorruptAll)
        .and_then(|r| r.snapshot.as_ref())
    {
        save_frame_tensor(snap, &out.join("snapshot")).map_err(compute)?;
    }
    let mut m = MetricsReport::new(rc.to_json());
    m.nmi = report.nmi_snapshot.clone();
    for s in &report.settings {
        if let Some(e) = s.median_epochs_to_fit {
            m.extras.insert(format!("median_epochs_to_fit.{}", s.setting.name()), e);
        }
        if let Some(p) = s.median_snapshot_psnr {
            m.extras.insert(format!("median_snapshot_psnr.{}", s.setting.name()), p);
        }
    }
    m.extras.insert("noisy_frame_psnr".into(), report.noisy_frame_psnr);
    m.extras.insert("ordering_holds".into(), if report.ordering_holds() { 1.0 } else { 0.0 });
    write(&out.join("metrics.json"), &m.to_json())?;
    write(&out.join("run-config.echo"), &rc.echo())?;
    write_timing(out, start, &[])
}

fn cmd_metrics(input: &Path, reference: &Path, out: Option<&Path>) -> CliResult<()> {
    let a = load_frames(input).map_err(usage)?;
    let b = load_frames(reference).map_err(usage)?;
    if a.len() != b.len() || a.frame_shape() != b.frame_shape() {
        return Err(usage(VdpError::Input(format!(
            "{} frames of {:?} vs {} frames of {:?}",
            a.len(),
            a.frame_shape(),
            b.len(),
            b.frame_shape()
        ))));
    }
    let mut report = MetricsReport::new(serde_json::json!({
        "command": "metrics",
        "input": input.display().to_string(),
        "reference": reference.display().to_string(),
    }));
    report.per_frame = compare_videos(&a, &b).map_err(compute)?;
    report.score(&a, &b).map_err(compute)?;
    let json = report.to_json();
    match out {
        Some(dir) => {
            prepare_out(dir)?;
            write(&dir.join("metrics.json"), &json)
        }
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

impl RunConfig {
    /// Configuration `vdp analyze` resolves to without a config file or flags.
    pub fn analyze_defaults() -> Self {
        let mut rc = Self::from_preset("analyze", config::default_preset("analyze")).expect("default preset exists");
        rc.apply_analyze_defaults();
        rc
    }

    /// Epoch budget, learning rate and plateau rule of the experiment.
    pub fn apply_analyze_defaults(&mut self) {
        self.task.epochs = ANALYZE_EPOCHS;
        self.task.lr = ANALYZE_LR;
        self.task.plateau_window = ANALYZE_PLATEAU_WINDOW;
        self.task.plateau_tol = ANALYZE_PLATEAU_TOL;
    }

    pub fn convergence_config(&self) -> ConvergenceConfig {
        let s = &self.analyze;
        ConvergenceConfig {
            base: self.task.clone(),
            spl_weight: s.spl_weight,
            var_weight: s.var_weight,
            epochs: self.task.epochs,
            seeds: (0..s.seeds as u64).collect(),
            tau: s.tau,
            noise_frame: s.noise_frame,
            noise_seed: s.noise_seed,
            stop_when_fitted: s.stop_when_fitted,
            jobs: self.jobs.max(1),
        }
    }
}

pub const ANALYZE_EPOCHS: usize = 2000;
pub const ANALYZE_LR: f64 = 2e-3;
pub const ANALYZE_PLATEAU_WINDOW: usize = 100;
pub const ANALYZE_PLATEAU_TOL: f64 = 0.05;

