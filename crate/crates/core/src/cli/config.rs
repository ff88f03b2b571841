//! Flat `key = value` run configuration with `[section]` headers.
//!
//! ```text
//! [task]
//! epochs = 600
//! lambda_spl = 0.0001
//! [model]
//! hidden = 64
//! ```
//!
//! `#` starts a comment. The echo written next to every run uses the same
//! format and lists every resolved key, so it can be fed back with
//! `--config` to repeat the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::degrade::NoiseSpec;
use crate::diffcore::NormMode;
use crate::error::{Result, VdpError};
use crate::losses::{Downsampler, LossSubset};
use crate::tasks::{FeatureSource, FrameMapping, TaskConfig, TaskKind};

/// Parsed file: `section.key → value`, in file order of last assignment.
pub type ConfigMap = BTreeMap<String, String>;

pub fn parse_config(text: &str, origin: &Path) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    let mut section = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| VdpError::format(origin, format!("line {}: expected `key = value`", n + 1)))?;
        let key = if section.is_empty() {
            k.trim().to_string()
        } else {
            format!("{section}.{}", k.trim())
        };
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

/// Settings of the convergence experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeSettings {
    pub seeds: usize,
    pub tau: f64,
    pub spl_weight: f64,
    pub var_weight: f64,
    pub noise_frame: usize,
    pub noise_seed: u64,
    pub stop_when_fitted: bool,
    /// Synthetic clip shape used when no input is given.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

/// Experiment defaults chosen from calibration runs on the synthetic clip.
impl Default for AnalyzeSettings {
    fn default() -> Self {
        Self {
            seeds: 5,
            tau: 0.02,
            spl_weight: 1.0,
            var_weight: 0.1,
            noise_frame: 1,
            noise_seed: 7,
            stop_when_fitted: true,
            frames: 3,
            height: 32,
            width: 32,
        }
    }
}

/// Everything a run needs, fully resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub preset: String,
    pub input: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub task: TaskConfig,
    pub noise: Option<NoiseSpec>,
    pub analyze: AnalyzeSettings,
    pub jobs: usize,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| VdpError::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(VdpError::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn task_kind_for(command: &str) -> Option<TaskKind> {
    match command {
        "denoise" => Some(TaskKind::Denoise),
        "interpolate" => Some(TaskKind::Interpolate),
        "superres" => Some(TaskKind::Superres),
        "remove" => Some(TaskKind::Removal),
        "analyze" => Some(TaskKind::Denoise),
        _ => None,
    }
}

pub fn default_preset(command: &str) -> &'static str {
    match command {
        "interpolate" => "desk-interpolate",
        "superres" => "desk-superres",
        "remove" => "desk-remove",
        _ => "desk-denoise",
    }
}

impl RunConfig {
    pub fn from_preset(command: &str, preset: &str) -> Result<Self> {
        let mut task = TaskConfig::preset(preset)?;
        if let Some(kind) = task_kind_for(command) {
            if command != "analyze" && task.kind != kind {
                return Err(VdpError::Config(format!("preset `{preset}` is not a {command} preset")));
            }
            task.kind = kind;
        }
        Ok(Self {
            command: command.to_string(),
            preset: preset.to_string(),
            input: None,
            mask: None,
            reference: None,
            task,
            noise: None,
            analyze: AnalyzeSettings::default(),
            jobs: 1,
        })
    }

    /// Applies one `section.key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.task;
        match key {
            "run.command" | "task.preset" | "task.kind" => {}
            "run.input" => self.input = (!v.is_empty()).then(|| PathBuf::from(v)),
            "run.mask" => self.mask = (!v.is_empty()).then(|| PathBuf::from(v)),
            "run.reference" => self.reference = (!v.is_empty()).then(|| PathBuf::from(v)),
            "run.jobs" => self.jobs = parse(key, v)?,
            "task.epochs" => t.epochs = parse(key, v)?,
            "task.lr" => t.lr = parse(key, v)?,
            "task.seed" => t.seed = parse(key, v)?,
            "task.lambda_rec" => t.weights.rec = parse(key, v)?,
            "task.lambda_spl" => t.weights.spl = parse(key, v)?,
            "task.lambda_var" => t.weights.var = parse(key, v)?,
            "task.ablate" => t.ablate = v.parse::<LossSubset>()?,
            "task.early_stop" => t.early_stop = parse_bool(key, v)?,
            "task.plateau_window" => t.plateau_window = parse(key, v)?,
            "task.plateau_tol" => t.plateau_tol = parse(key, v)?,
            "task.mapping" => {
                t.mapping = match v {
                    "aux_initial" => FrameMapping::AuxInitial,
                    "literal" => FrameMapping::Literal,
                    _ => return Err(VdpError::Config(format!("`{key}`: expected aux_initial or literal"))),
                }
            }
            "task.alphas" => t.alphas = parse_list(key, v)?,
            "task.scale" => t.scale = parse(key, v)?,
            "task.memory_limit_bytes" => t.memory_limit_bytes = parse(key, v)?,
            "model.latent_dim" => t.arch.latent_dim = parse(key, v)?,
            "model.hidden" => t.arch.hidden = parse(key, v)?,
            "model.lstm_layers" => t.arch.lstm_layers = parse(key, v)?,
            "model.base_channels" => t.arch.base_channels = parse(key, v)?,
            "model.min_channels" => t.arch.min_channels = parse(key, v)?,
            "model.max_depth" => t.arch.max_depth = parse(key, v)?,
            "model.norm" => {
                t.arch.norm = match v {
                    "batch" => NormMode::Batch,
                    "instance" => NormMode::Instance,
                    _ => return Err(VdpError::Config(format!("`{key}`: expected batch or instance"))),
                }
            }
            "model.train_latent" => t.arch.train_latent = parse_bool(key, v)?,
            "model.bptt_window" => t.arch.bptt_window = if v == "none" { None } else { Some(parse(key, v)?) },
            "losses.features" => {
                t.features = match v {
                    "none" => FeatureSource::None,
                    "random" => FeatureSource::Random {
                        seed: match &t.features {
                            FeatureSource::Random { seed } => *seed,
                            _ => 0,
                        },
                    },
                    path => FeatureSource::Import { path: PathBuf::from(path) },
                }
            }
            "losses.feature_seed" => {
                let seed = parse(key, v)?;
                if let FeatureSource::Random { seed: s } = &mut t.features {
                    *s = seed;
                }
            }
            "losses.pyramid" => t.pyramid.factors = parse_list(key, v)?,
            "losses.downsampler" => {
                t.pyramid.kernel = match v {
                    "area" => Downsampler::Area,
                    "bicubic" => Downsampler::Bicubic,
                    _ => return Err(VdpError::Config(format!("`{key}`: expected area or bicubic"))),
                }
            }
            "noise.spec" => {
                self.noise = if v == "none" {
                    None
                } else {
                    Some(serde_json::from_str(v).map_err(|e| VdpError::Config(format!("`{key}`: {e}")))?)
                }
            }
            "analyze.seeds" => self.analyze.seeds = parse(key, v)?,
            "analyze.tau" => self.analyze.tau = parse(key, v)?,
            "analyze.spl_weight" => self.analyze.spl_weight = parse(key, v)?,
            "analyze.var_weight" => self.analyze.var_weight = parse(key, v)?,
            "analyze.noise_frame" => self.analyze.noise_frame = parse(key, v)?,
            "analyze.noise_seed" => self.analyze.noise_seed = parse(key, v)?,
            "analyze.stop_when_fitted" => self.analyze.stop_when_fitted = parse_bool(key, v)?,
            "analyze.frames" => self.analyze.frames = parse(key, v)?,
            "analyze.height" => self.analyze.height = parse(key, v)?,
            "analyze.width" => self.analyze.width = parse(key, v)?,
            _ => return Err(VdpError::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply_map(&mut self, map: &ConfigMap) -> Result<()> {
        // The feature source decides whether a feature seed applies.
        if let Some(v) = map.get("losses.features") {
            self.set("losses.features", v)?;
        }
        for (k, v) in map {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// All resolved keys, grouped by section, input paths included.
    pub fn entries(&self) -> Vec<(&'static str, Vec<(&'static str, String)>)> {
        let t = &self.task;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let (features, feature_seed) = match &t.features {
            FeatureSource::None => ("none".to_string(), 0),
            FeatureSource::Random { seed } => ("random".to_string(), *seed),
            FeatureSource::Import { path } => (path.display().to_string(), 0),
        };
        let a = &self.analyze;
        vec![
            (
                "run",
                vec![
                    ("command", self.command.clone()),
                    ("input", path(&self.input)),
                    ("mask", path(&self.mask)),
                    ("reference", path(&self.reference)),
                    ("jobs", self.jobs.to_string()),
                ],
            ),
            (
                "task",
                vec![
                    ("preset", self.preset.clone()),
                    ("kind", t.kind.name().to_string()),
                    ("epochs", t.epochs.to_string()),
                    ("lr", t.lr.to_string()),
                    ("seed", t.seed.to_string()),
                    ("lambda_rec", t.weights.rec.to_string()),
                    ("lambda_spl", t.weights.spl.to_string()),
                    ("lambda_var", t.weights.var.to_string()),
                    ("ablate", t.ablate.name().to_string()),
                    ("early_stop", t.early_stop.to_string()),
                    ("plateau_window", t.plateau_window.to_string()),
                    ("plateau_tol", t.plateau_tol.to_string()),
                    (
                        "mapping",
                        match t.mapping {
                            FrameMapping::AuxInitial => "aux_initial",
                            FrameMapping::Literal => "literal",
                        }
                        .to_string(),
                    ),
                    ("alphas", join(&t.alphas)),
                    ("scale", t.scale.to_string()),
                    ("memory_limit_bytes", t.memory_limit_bytes.to_string()),
                ],
            ),
            (
                "model",
                vec![
                    ("latent_dim", t.arch.latent_dim.to_string()),
                    ("hidden", t.arch.hidden.to_string()),
                    ("lstm_layers", t.arch.lstm_layers.to_string()),
                    ("base_channels", t.arch.base_channels.to_string()),
                    ("min_channels", t.arch.min_channels.to_string()),
                    ("max_depth", t.arch.max_depth.to_string()),
                    (
                        "norm",
                        match t.arch.norm {
                            NormMode::Batch => "batch",
                            NormMode::Instance => "instance",
                        }
                        .to_string(),
                    ),
                    ("train_latent", t.arch.train_latent.to_string()),
                    (
                        "bptt_window",
                        t.arch.bptt_window.map_or("none".to_string(), |w| w.to_string()),
                    ),
                ],
            ),
            (
                "losses",
                vec![
                    ("features", features),
                    ("feature_seed", feature_seed.to_string()),
                    ("pyramid", join(&t.pyramid.factors)),
                    (
                        "downsampler",
                        match t.pyramid.kernel {
                            Downsampler::Area => "area",
                            Downsampler::Bicubic => "bicubic",
                        }
                        .to_string(),
                    ),
                ],
            ),
            (
                "noise",
                vec![(
                    "spec",
                    self.noise
                        .as_ref()
                        .map_or("none".to_string(), |n| serde_json::to_string(n).expect("noise spec serializes")),
                )],
            ),
            (
                "analyze",
                vec![
                    ("seeds", a.seeds.to_string()),
                    ("tau", a.tau.to_string()),
                    ("spl_weight", a.spl_weight.to_string()),
                    ("var_weight", a.var_weight.to_string()),
                    ("noise_frame", a.noise_frame.to_string()),
                    ("noise_seed", a.noise_seed.to_string()),
                    ("stop_when_fitted", a.stop_when_fitted.to_string()),
                    ("frames", a.frames.to_string()),
                    ("height", a.height.to_string()),
                    ("width", a.width.to_string()),
                ],
            ),
        ]
    }

    /// Text form accepted by [`parse_config`].
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (section, kv) in self.entries() {
            s.push_str(&format!("[{section}]\n"));
            for (k, v) in kv {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }

    /// JSON object of the same entries.
    pub fn to_json(&self) -> serde_json::Value {
        let mut root = serde_json::Map::new();
        for (section, kv) in self.entries() {
            let obj = kv.into_iter().map(|(k, v)| (k.to_string(), serde_json::Value::String(v))).collect();
            root.insert(section.to_string(), serde_json::Value::Object(obj));
        }
        serde_json::Value::Object(root)
    }
}
