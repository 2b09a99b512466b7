//! Strict TOML experiment configuration.
//!
//! ```toml
//! [experiment]
//! kind = "durations"          # anomaly_types | motion_speeds | durations
//! seeds = [0, 1, 2, 3, 4]
//! methods = ["Diffusion", "FFT", "Spline"]
//!
//! [fdd]
//! diff_threshold = 90         # any subset; the rest keeps the rescaled default
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::{AnomalyIntensity, AnomalyKind, DurationPreset};
use crate::fdd::FddParams;
use crate::reconstruct::Method;
use crate::scene::{SceneConfig, DEFAULT_FRAMES};
use crate::telemanip::MarkovGameConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("missing required keys in [{section}]: {}", .keys.join(", "))]
    MissingKeys { section: String, keys: Vec<String> },
    #[error("config value out of range: {0}")]
    OutOfRange(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    AnomalyTypes,
    MotionSpeeds,
    Durations,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 3] = [
        ExperimentKind::AnomalyTypes,
        ExperimentKind::MotionSpeeds,
        ExperimentKind::Durations,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::AnomalyTypes => "anomaly_types",
            Self::MotionSpeeds => "motion_speeds",
            Self::Durations => "durations",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Self::AnomalyTypes => "E1",
            Self::MotionSpeeds => "E2",
            Self::Durations => "E3",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Self::AnomalyTypes => "Performance under different anomaly types",
            Self::MotionSpeeds => "Performance under different motion speeds",
            Self::Durations => "Performance under different anomaly durations",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s || k.short().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown experiment {s:?}"))
    }
}

/// Motion presets: three sinusoid rates and a random path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpeedPreset {
    L1,
    L2,
    L3,
    L4,
}

impl SpeedPreset {
    pub const ALL: [SpeedPreset; 4] = [SpeedPreset::L1, SpeedPreset::L2, SpeedPreset::L3, SpeedPreset::L4];

    /// Sinusoid rate in cycles per frame; `None` for the random path.
    pub fn gamma(self) -> Option<f64> {
        match self {
            Self::L1 => Some(0.002),
            Self::L2 => Some(0.01),
            Self::L3 => Some(0.03),
            Self::L4 => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::L1 => "L1",
            Self::L2 => "L2",
            Self::L3 => "L3",
            Self::L4 => "L4",
        }
    }
}

impl FromStr for SpeedPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown speed preset {s:?} (expected L1..L4)"))
    }
}

/// Where the denoiser comes from when a run needs one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Loaded when it exists, otherwise written after training.
    pub checkpoint: Option<PathBuf>,
    pub train_steps: usize,
    pub corpus_clips: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            train_steps: 60_000,
            corpus_clips: 160,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Anomaly types (one scenario each) for the anomaly-type sweep.
    pub anomalies: Vec<AnomalyKind>,
    /// Anomaly used by the speed and duration sweeps.
    pub anomaly: AnomalyKind,
    pub speeds: Vec<SpeedPreset>,
    pub durations: Vec<DurationPreset>,
    /// Window for the sweeps that do not vary it.
    pub duration: DurationPreset,
    pub frames: usize,
    pub amplitude: f64,
    pub gamma: f64,
    pub waypoint_every: usize,
    pub fft_keep: usize,
    pub out_dir: PathBuf,
    pub write_clips: bool,
    pub scene: SceneConfig,
    pub fdd: FddParams,
    pub intensity: AnomalyIntensity,
    pub control: MarkovGameConfig,
    pub control_seed: u64,
    pub model: ModelConfig,
}

/// The `[experiment]` table before defaults are filled in.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    kind: Option<ExperimentKind>,
    seeds: Option<Vec<u64>>,
    methods: Option<Vec<Method>>,
    anomalies: Option<Vec<AnomalyKind>>,
    anomaly: Option<AnomalyKind>,
    speeds: Option<Vec<SpeedPreset>>,
    durations: Option<Vec<DurationPreset>>,
    duration: Option<DurationPreset>,
    frames: Option<usize>,
    amplitude: Option<f64>,
    gamma: Option<f64>,
    waypoint_every: Option<usize>,
    fft_keep: Option<usize>,
    out_dir: Option<PathBuf>,
    write_clips: Option<bool>,
    control_seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<ExperimentSection>,
    scene: Option<toml::Table>,
    fdd: Option<toml::Table>,
    intensity: Option<toml::Table>,
    control: Option<toml::Table>,
    model: Option<toml::Table>,
}

fn line_of(text: &str, err: &toml::de::Error) -> usize {
    err.span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(1)
}

fn syntax(text: &str, err: toml::de::Error) -> ConfigError {
    ConfigError::Syntax {
        line: line_of(text, &err),
        message: err.message().to_owned(),
    }
}

/// Applies the keys of `table` on top of `defaults`, rejecting unknown ones.
fn overlay<T: Serialize + DeserializeOwned>(
    section: &str,
    defaults: T,
    table: Option<toml::Table>,
) -> Result<T, ConfigError> {
    let Some(table) = table else {
        return Ok(defaults);
    };
    let toml::Value::Table(mut base) = toml::Value::try_from(&defaults)
        .map_err(|e| ConfigError::Invalid(format!("[{section}] defaults: {e}")))?
    else {
        return Err(ConfigError::Invalid(format!("[{section}] defaults are not a table")));
    };
    base.extend(table);
    T::deserialize(toml::Value::Table(base)).map_err(|e| ConfigError::Invalid(format!("[{section}]: {}", e.message())))
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_inner(text, false)
}

/// Like [`parse_config`], but `kind` and `seeds` may be left out (a
/// single-seed duration sweep is assumed). Used by the single-stage
/// commands, which only read the scene, detector and control tables.
pub fn parse_stage_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_inner(text, true)
}

fn parse_inner(text: &str, lenient: bool) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| syntax(text, e))?;
    let mut exp = raw.experiment.unwrap_or_default();
    if lenient {
        exp.kind.get_or_insert(ExperimentKind::Durations);
        exp.seeds.get_or_insert_with(|| vec![0]);
    }
    let mut missing = Vec::new();
    if exp.kind.is_none() {
        missing.push("kind".to_owned());
    }
    if exp.seeds.is_none() {
        missing.push("seeds".to_owned());
    }
    let (Some(kind), Some(seeds)) = (exp.kind, exp.seeds) else {
        return Err(ConfigError::MissingKeys {
            section: "experiment".into(),
            keys: missing,
        });
    };
    let scene = overlay("scene", SceneConfig::default(), raw.scene)?;
    scene
        .validate()
        .map_err(|e| ConfigError::OutOfRange(format!("[scene] {e}")))?;
    let fdd = overlay("fdd", FddParams::for_resolution(scene.width, scene.height), raw.fdd)?;
    let default_methods = match kind {
        ExperimentKind::AnomalyTypes => vec![Method::Diffusion],
        _ => vec![Method::Diffusion, Method::Fft, Method::Spline],
    };
    let cfg = ExperimentConfig {
        kind,
        seeds,
        methods: exp.methods.unwrap_or(default_methods),
        anomalies: exp.anomalies.unwrap_or_else(|| AnomalyKind::ALL.to_vec()),
        anomaly: exp.anomaly.unwrap_or(match kind {
            ExperimentKind::Durations => AnomalyKind::LightingChange,
            _ => AnomalyKind::Occlusion,
        }),
        speeds: exp.speeds.unwrap_or_else(|| SpeedPreset::ALL.to_vec()),
        durations: exp.durations.unwrap_or_else(|| DurationPreset::ALL.to_vec()),
        duration: exp.duration.unwrap_or(DurationPreset::OneSecond),
        frames: exp.frames.unwrap_or(DEFAULT_FRAMES),
        amplitude: exp.amplitude.unwrap_or(20.0),
        gamma: exp.gamma.unwrap_or(0.01),
        waypoint_every: exp.waypoint_every.unwrap_or(30),
        fft_keep: exp.fft_keep.unwrap_or(crate::reconstruct::fourier::DEFAULT_KEEP),
        out_dir: exp.out_dir.unwrap_or_else(|| PathBuf::from("out")),
        write_clips: exp.write_clips.unwrap_or(false),
        scene,
        fdd,
        intensity: overlay("intensity", AnomalyIntensity::default(), raw.intensity)?,
        control: overlay("control", MarkovGameConfig::default(), raw.control)?,
        control_seed: exp.control_seed.unwrap_or(0),
        model: overlay("model", ModelConfig::default(), raw.model)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Defaults for one sweep, as if parsed from a minimal file.
    pub fn preset(kind: ExperimentKind, seeds: Vec<u64>) -> Result<Self, ConfigError> {
        let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
        parse_config(&format!(
            "[experiment]\nkind = \"{}\"\nseeds = [{}]\n",
            kind.name(),
            seeds.join(", ")
        ))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::OutOfRange(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        match self.kind {
            ExperimentKind::AnomalyTypes if self.anomalies.is_empty() => {
                return bad("anomalies must not be empty".into())
            }
            ExperimentKind::MotionSpeeds if self.speeds.is_empty() => {
                return bad("speeds must not be empty".into())
            }
            ExperimentKind::Durations if self.durations.is_empty() => {
                return bad("durations must not be empty".into())
            }
            _ => {}
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 180.0) {
            return bad(format!("amplitude {} outside (0, 180]", self.amplitude));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {}", self.gamma));
        }
        if self.waypoint_every < 2 {
            return bad(format!("waypoint_every {} < 2", self.waypoint_every));
        }
        if self.fft_keep == 0 {
            return bad("fft_keep must be positive".into());
        }
        let last = self.windows().iter().map(|w| w.end).max().unwrap_or(0);
        if self.frames <= last + 1 {
            return bad(format!("{} frames cannot hold a window ending at {last}", self.frames));
        }
        self.fdd
            .validate(self.scene.width, self.scene.height)
            .map_err(|e| ConfigError::OutOfRange(format!("[fdd] {e}")))?;
        self.control
            .validate()
            .map_err(|e| ConfigError::OutOfRange(format!("[control] {e}")))?;
        if self.model.train_steps == 0 || self.model.corpus_clips == 0 {
            return bad("[model] train_steps and corpus_clips must be positive".into());
        }
        Ok(())
    }

    fn windows(&self) -> Vec<crate::anomaly::Window> {
        match self.kind {
            ExperimentKind::Durations => self.durations.iter().map(|d| d.window()).collect(),
            _ => vec![self.duration.window()],
        }
    }

    pub fn needs_model(&self) -> bool {
        self.methods.contains(&Method::Diffusion)
    }
}
