use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use det_core::anomaly::{inject, AnomalyKind, AnomalySpec, DurationPreset, Window};
use det_core::fdd::{detect, diagnose, AnomalyInterval};
use det_core::harness::{
    emit_report, load_or_train_model, parse_config, parse_stage_config, run_experiment, seed_phase,
    train_model, ExperimentConfig, ExperimentKind, RunContext,
};
use det_core::metrics::{evaluate_run, reports_to_csv, RunTrajectories};
use det_core::pose::MarkerDetector;
use det_core::reconstruct::denoiser::DenoiserModel;
use det_core::reconstruct::{reconstruct_video, Method, ReconstructContext};
use det_core::scene::{gen_random, gen_sinusoid_from, synth_video, Trajectory, DEFAULT_FPS};
use det_core::telemanip::{run_telemanipulation, Controller, PolicyKind};
use det_core::video::container;

/// Synthetic marker video, anomaly repair and telemanipulation sweeps.
#[derive(Debug, Parser)]
#[command(name = "det", version)]
struct Cli {
    /// TOML file with [scene], [fdd], [intensity], [control], [model] and
    /// [experiment] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed the command uses.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Relative output paths are placed here.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a clean clip and its ground-truth trajectory.
    Synth(SynthArgs),
    /// Corrupt a window of a clip.
    Inject(InjectArgs),
    /// Flag anomalous frames and print the detected interval.
    Detect(DetectArgs),
    /// Fill the detected gap and write the repaired trajectory.
    Reconstruct(ReconstructArgs),
    /// Drive the follower robot from a target trajectory.
    Simulate(SimulateArgs),
    /// Score human, robot and ground-truth robot trajectories.
    Evaluate(EvaluateArgs),
    /// Run a full sweep and write its report.
    Experiment(ExperimentArgs),
    /// Train the gap denoiser and save a checkpoint.
    TrainDenoiser(TrainArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MotionKind {
    Sinusoid,
    Random,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "sinusoid")]
    motion: MotionKind,
    #[arg(long, default_value_t = 150)]
    frames: usize,
    /// Peak angle in degrees.
    #[arg(long, default_value_t = 20.0)]
    amplitude: f64,
    /// Sinusoid rate in cycles per frame.
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    /// Frames between random-path waypoints.
    #[arg(long, default_value_t = 30)]
    waypoint_every: usize,
    /// Clip output (.detv).
    #[arg(short, long, default_value = "clip.detv")]
    output: PathBuf,
    /// Ground-truth trajectory output.
    #[arg(long, default_value = "truth.csv")]
    truth: PathBuf,
}

#[derive(Debug, Args)]
struct InjectArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long, default_value = "corrupted.detv")]
    output: PathBuf,
    /// occlusion, lighting_change, signal_noise or out_of_frame.
    #[arg(long, default_value = "occlusion")]
    kind: AnomalyKind,
    /// Window preset; ignored when --start and --end are given.
    #[arg(long, default_value = "1s")]
    duration: DurationPreset,
    #[arg(long, requires = "end")]
    start: Option<usize>,
    #[arg(long, requires = "start")]
    end: Option<usize>,
    /// Ground truth of the clip, needed for out_of_frame.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Per-frame diagnostics output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Diffusion, FFT, Spline or HoldLast (any case).
    #[arg(long, default_value = "diffusion")]
    method: Method,
    /// Gap bounds; detected when omitted.
    #[arg(long, requires = "end")]
    start: Option<usize>,
    #[arg(long, requires = "start")]
    end: Option<usize>,
    /// Denoiser checkpoint; defaults to the configured one.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(short, long, default_value = "reconstructed.csv")]
    output: PathBuf,
    /// Also write the repaired clip.
    #[arg(long)]
    clip: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    RateLimited,
    QLearned,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Target trajectory CSV.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long, default_value = "robot.csv")]
    output: PathBuf,
    /// Overrides the configured controller.
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    truth: PathBuf,
    /// Reconstructed (human-side) trajectory.
    #[arg(long)]
    human: PathBuf,
    #[arg(long)]
    robot: PathBuf,
    #[arg(long)]
    gt_robot: PathBuf,
    #[arg(long)]
    start: usize,
    #[arg(long)]
    end: usize,
    #[arg(long, default_value = "custom")]
    scenario: String,
    #[arg(long, default_value = "unknown")]
    method: String,
    /// CSV output; printed when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// anomaly_types (E1), motion_speeds (E2) or durations (E3); taken from
    /// the config when omitted.
    #[arg(long)]
    kind: Option<ExperimentKind>,
    /// Seed count for presets.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(short, long, default_value = "denoiser.detm")]
    output: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    clips: Option<usize>,
}

struct Env {
    config: ExperimentConfig,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
}

impl Env {
    fn out(&self, path: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_owned(),
        }
    }

    fn seed(&self, fallback: u64) -> u64 {
        self.seed.unwrap_or(fallback)
    }

    fn fps(&self) -> f64 {
        DEFAULT_FPS
    }

    fn detector(&self) -> MarkerDetector {
        MarkerDetector::for_scene(&self.config.scene)
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_trajectory(path: &Path, fps: f64) -> Result<Trajectory> {
    Trajectory::from_csv(&read_text(path)?, fps).with_context(|| format!("parsing {}", path.display()))
}

fn load_clip(path: &Path) -> Result<det_core::video::VideoClip> {
    container::load(path).with_context(|| format!("loading {}", path.display()))
}

fn synth(env: &Env, a: &SynthArgs) -> Result<()> {
    let truth = match a.motion {
        MotionKind::Sinusoid => {
            let start = env.seed.map_or(0.0, |s| seed_phase(s, a.gamma));
            gen_sinusoid_from(a.frames, a.amplitude, a.gamma, start)?
        }
        MotionKind::Random => gen_random(a.frames, a.amplitude, a.waypoint_every, env.seed(0))?,
    };
    let clip = synth_video(&env.config.scene, &truth)?;
    let (out, truth_out) = (env.out(&a.output), env.out(&a.truth));
    write(&out, container::encode(&clip)?)?;
    write(&truth_out, truth.to_csv())?;
    println!("wrote {} ({} frames) and {}", out.display(), clip.len(), truth_out.display());
    Ok(())
}

fn inject_cmd(env: &Env, a: &InjectArgs) -> Result<()> {
    let clip = load_clip(&a.input)?;
    let window = match (a.start, a.end) {
        (Some(s), Some(e)) => Window::new(s, e),
        _ => a.duration.window(),
    };
    let truth = a.truth.as_deref().map(|p| read_trajectory(p, clip.fps())).transpose()?;
    let mut spec = AnomalySpec::new(a.kind, window, env.seed(0));
    spec.intensity = env.config.intensity.clone();
    let out_clip = inject(&clip, &spec, Some(&env.config.scene), truth.as_ref())?;
    let out = env.out(&a.output);
    write(&out, container::encode(&out_clip)?)?;
    println!("{} frames {}..={} -> {}", a.kind.name(), window.start, window.end, out.display());
    Ok(())
}

fn detect_cmd(env: &Env, a: &DetectArgs) -> Result<()> {
    let clip = load_clip(&a.input)?;
    let diag = diagnose(&clip, &env.config.fdd, &env.detector())?;
    if let Some(p) = &a.output {
        write(&env.out(p), diag.to_csv())?;
    }
    match diag.interval() {
        Some(iv) => println!("{},{}", iv.start, iv.end),
        None => println!("none"),
    }
    Ok(())
}

fn model_for(env: &Env, path: Option<&Path>) -> Result<DenoiserModel> {
    let path = path
        .map(Path::to_owned)
        .or_else(|| env.config.model.checkpoint.clone())
        .ok_or_else(|| anyhow!("diffusion needs a checkpoint (--model or [model] checkpoint)"))?;
    DenoiserModel::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn reconstruct_cmd(env: &Env, a: &ReconstructArgs) -> Result<()> {
    let clip = load_clip(&a.input)?;
    let detector = env.detector();
    let interval = match (a.start, a.end) {
        (Some(s), Some(e)) => AnomalyInterval::from_bounds(s, e, clip.len())?,
        _ => detect(&clip, &env.config.fdd, &detector)?
            .ok_or_else(|| anyhow!("no anomaly detected in {}", a.input.display()))?,
    };
    let model = match a.method {
        Method::Diffusion => Some(model_for(env, a.model.as_deref())?),
        _ => None,
    };
    let ctx = ReconstructContext {
        detector: &detector,
        model: model.as_ref(),
        fft_keep: env.config.fft_keep,
        seed: env.seed(0),
    };
    let rec = reconstruct_video(&clip, &interval, a.method, &ctx)?;
    write(&env.out(&a.output), rec.trajectory.to_csv())?;
    if let Some(p) = &a.clip {
        write(&env.out(p), container::encode(&rec.clip)?)?;
    }
    println!("{} filled {}..={}", a.method.name(), interval.start, interval.end);
    Ok(())
}

fn controller(env: &Env, policy: Option<PolicyArg>) -> Result<Controller> {
    let mut cfg = env.config.control.clone();
    if let Some(p) = policy {
        cfg.policy = match p {
            PolicyArg::RateLimited => PolicyKind::RateLimited,
            PolicyArg::QLearned => PolicyKind::QLearned,
        };
    }
    Ok(Controller::from_config(&cfg, env.seed(env.config.control_seed))?)
}

fn simulate_cmd(env: &Env, a: &SimulateArgs) -> Result<()> {
    let target = read_trajectory(&a.input, env.fps())?;
    let ctl = controller(env, a.policy)?;
    let robot = run_telemanipulation(&target, &ctl, env.config.control.dt)?;
    let out = env.out(&a.output);
    write(&out, robot.to_csv())?;
    println!("wrote {} ({} steps)", out.display(), robot.len());
    Ok(())
}

fn evaluate_cmd(env: &Env, a: &EvaluateArgs) -> Result<()> {
    let fps = env.fps();
    let truth = read_trajectory(&a.truth, fps)?;
    let human = read_trajectory(&a.human, fps)?;
    let robot = read_trajectory(&a.robot, fps)?;
    let gt_robot = read_trajectory(&a.gt_robot, fps)?;
    let run = RunTrajectories {
        truth: &truth,
        human: &human,
        robot: &robot,
        gt_robot: &gt_robot,
    };
    let csv = reports_to_csv(&evaluate_run(run, (a.start, a.end), &a.scenario, &a.method)?);
    match &a.output {
        Some(p) => write(&env.out(p), csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn progress(step: usize, loss: f64) {
    eprintln!("step {step:>6}  held-out loss {loss:.5}");
}

fn experiment_cmd(mut env: Env, a: &ExperimentArgs, from_file: bool) -> Result<()> {
    let mut cfg = match (a.kind, from_file) {
        (Some(kind), false) => ExperimentConfig::preset(kind, (0..a.seeds).collect())?,
        (Some(kind), true) => {
            let mut c = env.config.clone();
            c.kind = kind;
            c
        }
        (None, true) => env.config.clone(),
        (None, false) => bail!("experiment needs --kind or a --config with an [experiment] table"),
    };
    if from_file && a.kind.is_some() && a.kind != Some(env.config.kind) {
        // methods and anomaly defaults follow the kind
        let preset = ExperimentConfig::preset(cfg.kind, cfg.seeds.clone())?;
        cfg.methods = preset.methods;
        cfg.anomaly = preset.anomaly;
    }
    if let Some(s) = env.seed {
        cfg.seeds = vec![s];
    }
    if let Some(d) = env.out_dir.take() {
        cfg.out_dir = d;
    }
    env.config = cfg;
    let cfg = &env.config;
    cfg.validate()?;
    let model = if cfg.needs_model() {
        Some(load_or_train_model(cfg, progress)?)
    } else {
        None
    };
    let controller = Controller::from_config(&cfg.control, cfg.control_seed)?;
    let ctx = RunContext {
        config: cfg,
        model: model.as_ref(),
        controller: &controller,
        detector: MarkerDetector::for_scene(&cfg.scene),
    };
    let mut records = run_experiment(&ctx)?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    let files = emit_report(&mut records, cfg, &cfg.out_dir)?;
    print!("{}", fs::read_to_string(&files.summary_table).unwrap_or_default());
    println!(
        "{} cells ({} failed); summary in {}",
        records.len(),
        failed,
        files.summary_csv.display()
    );
    if failed == records.len() {
        bail!("every cell failed");
    }
    Ok(())
}

fn train_cmd(env: &Env, a: &TrainArgs) -> Result<()> {
    let mut cfg = env.config.clone();
    if let Some(s) = a.steps {
        cfg.model.train_steps = s;
    }
    if let Some(c) = a.clips {
        cfg.model.corpus_clips = c;
    }
    if let Some(s) = env.seed {
        cfg.model.seed = s;
    }
    let (model, report) = train_model(&cfg, progress)?;
    eprintln!(
        "held-out loss {:.5} -> {:.5}",
        report.initial_loss, report.final_loss
    );
    let out = env.out(&a.output);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    model.save(&out)?;
    println!("saved {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let text = cli.config.as_deref().map(read_text).transpose()?;
    let is_experiment = matches!(cli.command, Command::Experiment(_));
    let config = match &text {
        Some(t) if is_experiment => parse_config(t),
        Some(t) => parse_stage_config(t),
        None => parse_stage_config(""),
    }
    .with_context(|| format!("config {}", cli.config.as_deref().unwrap_or(Path::new("")).display()))?;
    let env = Env {
        config,
        seed: cli.seed,
        out_dir: cli.out_dir,
    };
    match &cli.command {
        Command::Synth(a) => synth(&env, a),
        Command::Inject(a) => inject_cmd(&env, a),
        Command::Detect(a) => detect_cmd(&env, a),
        Command::Reconstruct(a) => reconstruct_cmd(&env, a),
        Command::Simulate(a) => simulate_cmd(&env, a),
        Command::Evaluate(a) => evaluate_cmd(&env, a),
        Command::Experiment(a) => experiment_cmd(env, a, text.is_some()),
        Command::TrainDenoiser(a) => train_cmd(&env, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
