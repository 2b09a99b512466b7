//! Experiment sweeps: every seed and scenario cell runs the full
//! synth, inject, detect, reconstruct, follow and score chain.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{parse_config, parse_stage_config, ConfigError, ExperimentConfig, ExperimentKind, ModelConfig, SpeedPreset};
pub use report::{emit_report, render_svg, summarize, ReportFiles, SummaryRow};

use crate::anomaly::{inject, AnomalyError, AnomalyKind, AnomalySpec, Window};
use crate::fdd::{detect, FddError};
use crate::metrics::{evaluate_run, MetricsError, MetricsReport, RunTrajectories};
use crate::pose::{extract_trajectory, MarkerDetector};
use crate::reconstruct::denoiser::{train_denoiser, CorpusSpec, DenoiserCorpus, DenoiserModel, TrainConfig, TrainReport};
use crate::reconstruct::{reconstruct_video, Method, NoiseSchedule, ReconstructContext, ReconstructError};
use crate::scene::{gen_random, gen_sinusoid_from, synth_video, SceneError, Trajectory};
use crate::telemanip::{run_telemanipulation, Controller, TelemanipError};
use crate::video::container::{self, ContainerError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no records to report")]
    NoRecords,
    #[error("record encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Telemanip(#[from] TelemanipError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_owned(),
        source,
    }
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Stage failures inside one cell.
#[derive(Debug, Error)]
enum CellError {
    #[error("no anomaly detected")]
    NotDetected,
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
    #[error(transparent)]
    Fdd(#[from] FddError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Telemanip(#[from] TelemanipError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MotionSpec {
    Sinusoid { amplitude: f64, gamma: f64, start: f64 },
    Random { amplitude: f64, waypoint_every: usize, seed: u64 },
}

impl MotionSpec {
    pub fn generate(&self, frames: usize) -> Result<Trajectory, SceneError> {
        match *self {
            Self::Sinusoid { amplitude, gamma, start } => gen_sinusoid_from(frames, amplitude, gamma, start),
            Self::Random {
                amplitude,
                waypoint_every,
                seed,
            } => gen_random(frames, amplitude, waypoint_every, seed),
        }
    }
}

/// Phase offset (in frames) that makes each seed's sinusoid a different
/// recording of the same motion.
pub fn seed_phase(seed: u64, gamma: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    rng.random_range(0.0..1.0 / gamma)
}

/// One seed of one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub experiment: ExperimentKind,
    pub scenario: String,
    pub seed: u64,
    pub motion: MotionSpec,
    pub anomaly: AnomalySpec,
    pub frames: usize,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("{}/seed{}", self.scenario, self.seed)
    }
}

/// Scenario labels in report order.
pub fn scenarios(cfg: &ExperimentConfig) -> Vec<String> {
    match cfg.kind {
        ExperimentKind::AnomalyTypes => cfg.anomalies.iter().map(|k| k.name().to_owned()).collect(),
        ExperimentKind::MotionSpeeds => cfg.speeds.iter().map(|s| s.name().to_owned()).collect(),
        ExperimentKind::Durations => cfg.durations.iter().map(|d| d.name().to_owned()).collect(),
    }
}

pub fn plan_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let sinusoid = |gamma: f64, seed: u64| MotionSpec::Sinusoid {
        amplitude: cfg.amplitude,
        gamma,
        start: seed_phase(seed, gamma),
    };
    let random = |seed: u64| MotionSpec::Random {
        amplitude: cfg.amplitude,
        waypoint_every: cfg.waypoint_every,
        seed,
    };
    let spec = |kind: AnomalyKind, window: Window, seed: u64| AnomalySpec {
        kind,
        window,
        intensity: cfg.intensity.clone(),
        seed,
    };
    let mut cells = Vec::new();
    for label in scenarios(cfg) {
        for &seed in &cfg.seeds {
            let (motion, anomaly) = match cfg.kind {
                ExperimentKind::AnomalyTypes => {
                    let kind: AnomalyKind = label.parse().expect("planned from the enum");
                    (sinusoid(cfg.gamma, seed), spec(kind, cfg.duration.window(), seed))
                }
                ExperimentKind::MotionSpeeds => {
                    let speed: SpeedPreset = label.parse().expect("planned from the enum");
                    let motion = match speed.gamma() {
                        Some(g) => sinusoid(g, seed),
                        None => random(seed),
                    };
                    (motion, spec(cfg.anomaly, cfg.duration.window(), seed))
                }
                ExperimentKind::Durations => {
                    let d: crate::anomaly::DurationPreset = label.parse().expect("planned from the enum");
                    (random(seed), spec(cfg.anomaly, d.window(), seed))
                }
            };
            cells.push(Cell {
                experiment: cfg.kind,
                scenario: label.clone(),
                seed,
                motion,
                anomaly,
                frames: cfg.frames,
            });
        }
    }
    cells
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed { message: String },
}

/// Trajectories kept for plotting; not serialised.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellTrajectories {
    pub truth: Option<Trajectory>,
    pub methods: Vec<(Method, Trajectory)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: Cell,
    pub status: CellStatus,
    pub detected: Option<(usize, usize)>,
    pub reports: Vec<MetricsReport>,
    pub artifacts: Vec<PathBuf>,
    /// Stage wall-clock times in milliseconds.
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(skip)]
    pub trajectories: CellTrajectories,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    pub fn dir(&self, out: &Path) -> PathBuf {
        out.join(self.cell.experiment.name())
            .join(&self.cell.scenario)
            .join(format!("seed{}", self.cell.seed))
    }
}

/// Shared read-only state for a sweep.
pub struct RunContext<'a> {
    pub config: &'a ExperimentConfig,
    pub model: Option<&'a DenoiserModel>,
    pub controller: &'a Controller,
    pub detector: MarkerDetector,
}

struct Timer(BTreeMap<String, f64>, Instant);

impl Timer {
    fn new() -> Self {
        Self(BTreeMap::new(), Instant::now())
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        *self.0.entry(stage.to_owned()).or_default() += (now - self.1).as_secs_f64() * 1e3;
        self.1 = now;
    }
}

fn run_cell_inner(ctx: &RunContext<'_>, cell: &Cell, record: &mut RunRecord, timer: &mut Timer) -> Result<(), CellError> {
    let cfg = ctx.config;
    let dir = record.dir(&cfg.out_dir);
    let truth = cell.motion.generate(cell.frames)?;
    let clean = synth_video(&cfg.scene, &truth)?;
    timer.lap("synth");
    let corrupted = inject(&clean, &cell.anomaly, Some(&cfg.scene), Some(&truth))?;
    timer.lap("inject");
    let interval = detect(&corrupted, &cfg.fdd, &ctx.detector)?.ok_or(CellError::NotDetected)?;
    record.detected = Some((interval.start, interval.end));
    let gap = (interval.start, interval.end);
    timer.lap("detect");

    let save = |name: &str, bytes: Vec<u8>, record: &mut RunRecord| -> Result<(), HarnessError> {
        let p = dir.join(name);
        write_file(&p, bytes)?;
        record.artifacts.push(p);
        Ok(())
    };
    save("truth.csv", truth.to_csv().into_bytes(), record)?;
    save(
        "measured.csv",
        extract_trajectory(&corrupted, &ctx.detector).to_csv().into_bytes(),
        record,
    )?;
    save("fdd.csv", interval.to_csv().into_bytes(), record)?;
    if cfg.write_clips {
        save("corrupted.detv", container::encode(&corrupted)?, record)?;
    }

    let dt = cfg.control.dt;
    let gt_robot = run_telemanipulation(&truth, ctx.controller, dt)?;
    save("gt_robot.csv", gt_robot.to_csv().into_bytes(), record)?;
    for &method in &cfg.methods {
        let rctx = ReconstructContext {
            detector: &ctx.detector,
            model: ctx.model,
            fft_keep: cfg.fft_keep,
            seed: cell.seed,
        };
        let rec = reconstruct_video(&corrupted, &interval, method, &rctx)?;
        timer.lap(method.name());
        let robot = run_telemanipulation(&rec.trajectory, ctx.controller, dt)?;
        timer.lap("simulate");
        let run = RunTrajectories {
            truth: &truth,
            human: &rec.trajectory,
            robot: &robot,
            gt_robot: &gt_robot,
        };
        record
            .reports
            .extend(evaluate_run(run, gap, &cell.scenario, method.name())?);
        timer.lap("evaluate");
        let stem = method.name().to_ascii_lowercase();
        save(&format!("{stem}.csv"), rec.trajectory.to_csv().into_bytes(), record)?;
        save(&format!("{stem}_robot.csv"), robot.to_csv().into_bytes(), record)?;
        if cfg.write_clips && method == Method::Diffusion {
            save("diffusion.detv", container::encode(&rec.clip)?, record)?;
        }
        record.trajectories.methods.push((method, rec.trajectory));
    }
    record.trajectories.truth = Some(truth);
    Ok(())
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Runs one cell; failures and panics end up in the record.
pub fn run_cell(ctx: &RunContext<'_>, cell: &Cell) -> RunRecord {
    let mut record = RunRecord {
        cell: cell.clone(),
        status: CellStatus::Ok,
        detected: None,
        reports: Vec::new(),
        artifacts: Vec::new(),
        timings_ms: BTreeMap::new(),
        trajectories: CellTrajectories::default(),
    };
    let mut timer = Timer::new();
    let outcome = catch_unwind(AssertUnwindSafe(|| run_cell_inner(ctx, cell, &mut record, &mut timer)));
    let failure = match outcome {
        Ok(Ok(())) => None,
        Ok(Err(e)) => Some(e.to_string()),
        Err(p) => Some(format!("panic: {}", panic_message(p))),
    };
    if let Some(message) = failure {
        record.status = CellStatus::Failed { message };
        record.reports.clear();
        record.trajectories = CellTrajectories::default();
    }
    record.timings_ms = timer.0;
    record
}

/// Runs every planned cell, in parallel, in plan order.
pub fn run_experiment(ctx: &RunContext<'_>) -> Result<Vec<RunRecord>, HarnessError> {
    ctx.config.validate()?;
    if ctx.config.needs_model() && ctx.model.is_none() {
        return Err(ReconstructError::MissingModel.into());
    }
    let cells = plan_cells(ctx.config);
    Ok(cells.par_iter().map(|c| run_cell(ctx, c)).collect())
}

/// Trains a denoiser on the default synthetic sinusoid corpus.
pub fn train_model(
    cfg: &ExperimentConfig,
    progress: impl FnMut(usize, f64),
) -> Result<(DenoiserModel, TrainReport), HarnessError> {
    let spec = CorpusSpec {
        clips: cfg.model.corpus_clips,
        ..CorpusSpec::default()
    };
    let corpus = DenoiserCorpus::synthetic(&cfg.scene, &spec, cfg.model.seed)?;
    let tc = TrainConfig {
        steps: cfg.model.train_steps,
        ..TrainConfig::default()
    };
    Ok(train_denoiser(&corpus, NoiseSchedule::default(), &tc, cfg.model.seed, progress)?)
}

/// Loads the configured checkpoint, or trains and stores one.
pub fn load_or_train_model(
    cfg: &ExperimentConfig,
    progress: impl FnMut(usize, f64),
) -> Result<DenoiserModel, HarnessError> {
    let path = cfg
        .model
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("denoiser.detm"));
    if path.exists() {
        return Ok(DenoiserModel::load(&path)?);
    }
    let (model, _) = train_model(cfg, progress)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    model.save(&path)?;
    Ok(model)
}
