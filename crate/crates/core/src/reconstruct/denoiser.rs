//! Conditional noise-prediction model over pooled frame latents.
//!
//! Each missing frame is generated independently. The network sees the
//! noisy latent, the latents of the frames just before and just after the
//! gap, where in the gap the frame sits, and the diffusion step.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::latent::{Latent, LatentCodec, LatentSeq};
use super::nn::{Adam, Mlp};
use super::schedule::NoiseSchedule;
use super::ReconstructError;
use crate::scene::{gen_random, gen_sinusoid_from, synth_video, SceneConfig, Trajectory};
use crate::video::{Frame, VideoClip};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DETM";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Shape of the conditioning input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conditioning {
    pub latent_dim: usize,
    /// Context frames taken from each side of the gap.
    pub context: usize,
    pub step_embedding: usize,
}

impl Default for Conditioning {
    fn default() -> Self {
        Self {
            latent_dim: 256,
            context: 4,
            step_embedding: 32,
        }
    }
}

impl Conditioning {
    pub fn input_dim(&self) -> usize {
        self.latent_dim * (1 + 2 * self.context) + 1 + self.step_embedding
    }

    pub fn context_dim(&self) -> usize {
        2 * self.context * self.latent_dim
    }

    /// Sinusoidal features of the step index.
    pub fn embed_step(&self, step: usize, out: &mut Vec<f64>) {
        let half = self.step_embedding / 2;
        for j in 0..half {
            let freq = (-(1000f64).ln() * j as f64 / half as f64).exp();
            let a = step as f64 * freq;
            out.push(a.sin());
            out.push(a.cos());
        }
    }

    /// Writes one network input row.
    pub fn assemble(&self, q: &NoiseQuery<'_>, out: &mut Vec<f64>) {
        out.extend_from_slice(q.noisy);
        out.extend_from_slice(q.context);
        out.push(q.tau);
        self.embed_step(q.step, out);
    }
}

/// Position of frame `t` inside the gap `[start, end]`, strictly in (0, 1).
pub fn gap_position(t: usize, start: usize, end: usize) -> f64 {
    (t as f64 - start as f64 + 1.0) / ((end - start + 1) as f64 + 1.0)
}

/// One noise-prediction request.
#[derive(Clone, Copy, Debug)]
pub struct NoiseQuery<'a> {
    pub noisy: &'a [f64],
    /// `context` latents before the gap, then `context` after, flattened.
    pub context: &'a [f64],
    pub tau: f64,
    pub step: usize,
}

pub trait NoisePredictor: Sync {
    fn latent_dim(&self) -> usize;
    /// Predicted noise for each query, flattened row-major.
    fn predict_noise(&self, queries: &[NoiseQuery<'_>]) -> Vec<f64>;
}

/// Per-feature affine standardisation applied before the first layer.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and inverse spread of each column of `rows`. Near-constant
    /// columns are only centred.
    pub fn fit(rows: &[f64], dim: usize) -> Self {
        let n = (rows.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        Self {
            shift: mean,
            scale: var.into_iter().map(|v| 1.0 / v.sqrt().max(0.1)).collect(),
        }
    }

    pub fn apply(&self, rows: &mut [f64]) {
        let dim = self.shift.len();
        for r in rows.chunks_exact_mut(dim) {
            for ((v, m), s) in r.iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = (*v - m) * s;
            }
        }
    }
}

/// Output scaling at one noise level, in the variance-exploding view
/// `x = z / sqrt(alpha_bar) = z0 + sigma * eps`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Scaling {
    sigma: f64,
    c_skip: f64,
    c_out: f64,
    c_in: f64,
    inv_sqrt_ab: f64,
}

/// The network predicts a correction around an anchor latent (the blend of
/// the two frames bordering the gap); the skip and output weights keep its
/// target near unit variance at every noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub conditioning: Conditioning,
    /// Typical spread of a gap latent around its anchor.
    pub sigma_data: f64,
    pub norm: InputNorm,
    pub net: Mlp,
    pub schedule: NoiseSchedule,
}

impl DenoiserModel {
    pub fn new(conditioning: Conditioning, hidden: &[usize], schedule: NoiseSchedule, seed: u64) -> Self {
        let mut dims = vec![conditioning.input_dim()];
        dims.extend_from_slice(hidden);
        dims.push(conditioning.latent_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            conditioning,
            sigma_data: 0.5,
            norm: InputNorm::identity(conditioning.input_dim()),
            net: Mlp::new(&dims, &mut rng),
            schedule,
        }
    }

    pub fn default_architecture(schedule: NoiseSchedule, seed: u64) -> Self {
        Self::new(Conditioning::default(), &[256, 256], schedule, seed)
    }

    fn scaling(&self, step: usize) -> Scaling {
        let ab = self.schedule.alpha_bar(step).unwrap_or(f64::MIN_POSITIVE);
        let sigma = ((1.0 - ab) / ab).sqrt();
        let sd2 = self.sigma_data * self.sigma_data;
        let total = sigma * sigma + sd2;
        Scaling {
            sigma,
            c_skip: sd2 / total,
            c_out: sigma * self.sigma_data / total.sqrt(),
            c_in: 1.0 / total.sqrt(),
            inv_sqrt_ab: 1.0 / ab.sqrt(),
        }
    }

    /// Linear blend of the last latent before the gap and the first after.
    pub fn anchor(&self, context: &[f64], tau: f64) -> Vec<f64> {
        let (d, k) = (self.conditioning.latent_dim, self.conditioning.context);
        let before = &context[(k - 1) * d..k * d];
        let after = &context[k * d..(k + 1) * d];
        before
            .iter()
            .zip(after)
            .map(|(b, a)| (1.0 - tau) * b + tau * a)
            .collect()
    }

    /// Standardised network input rows, with the anchor and the rescaled
    /// noisy latent of each query.
    fn prepare(&self, queries: &[NoiseQuery<'_>]) -> (Vec<f64>, Vec<(Vec<f64>, Vec<f64>)>) {
        let mut x = Vec::with_capacity(queries.len() * self.conditioning.input_dim());
        let mut aux = Vec::with_capacity(queries.len());
        for q in queries {
            let sc = self.scaling(q.step);
            let anchor = self.anchor(q.context, q.tau);
            let ve: Vec<f64> = q.noisy.iter().map(|z| z * sc.inv_sqrt_ab).collect();
            let scaled: Vec<f64> = ve.iter().zip(&anchor).map(|(v, m)| sc.c_in * (v - m)).collect();
            self.conditioning.assemble(&NoiseQuery { noisy: &scaled, ..*q }, &mut x);
            aux.push((anchor, ve));
        }
        (x, aux)
    }

    pub fn save(&self, path: &Path) -> Result<(), ReconstructError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ReconstructError> {
        Self::read(&mut std::fs::File::open(path)?)
    }

    /// Layout: magic, version (u16), latent dim, context, step embedding
    /// (u32 each), layer count + 1 and the layer widths (u32), the data
    /// spread (f64), input shift
    /// and scale (f64 per input), network parameters (f64), then step count
    /// (u32) and betas (f64). Little-endian.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<(), ReconstructError> {
        let c = &self.conditioning;
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [c.latent_dim, c.context, c.step_embedding, self.net.dims().len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for d in self.net.dims() {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        w.write_all(&self.sigma_data.to_le_bytes())?;
        for p in self.norm.shift.iter().chain(&self.norm.scale).chain(self.net.params()) {
            w.write_all(&p.to_le_bytes())?;
        }
        w.write_all(&(self.schedule.steps() as u32).to_le_bytes())?;
        for b in self.schedule.betas() {
            w.write_all(&b.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self, ReconstructError> {
        let bad = |m: &str| ReconstructError::Checkpoint(m.to_string());
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = bytes.as_slice();
        let mut take = |n: usize| -> Result<&[u8], ReconstructError> {
            if cur.len() < n {
                return Err(bad("truncated checkpoint"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut u32s = |n: usize| -> Result<Vec<usize>, ReconstructError> {
            (0..n)
                .map(|_| Ok(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize))
                .collect()
        };
        let head = u32s(4)?;
        let conditioning = Conditioning {
            latent_dim: head[0],
            context: head[1],
            step_embedding: head[2],
        };
        if head[3] < 2 || head[3] > 64 {
            return Err(bad("implausible layer count"));
        }
        let dims = u32s(head[3])?;
        if dims[0] != conditioning.input_dim() || *dims.last().expect("dims") != conditioning.latent_dim {
            return Err(bad("layer widths do not match the conditioning shape"));
        }
        let sigma_data = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        if !(sigma_data > 0.0 && sigma_data.is_finite()) {
            return Err(bad("invalid data spread"));
        }
        let n = Mlp::param_count(&dims) + 2 * dims[0];
        let raw = take(n.checked_mul(8).ok_or_else(|| bad("parameter count overflow"))?)?;
        let mut params: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        let net_params = params.split_off(2 * dims[0]);
        let scale = params.split_off(dims[0]);
        let norm = InputNorm { shift: params, scale };
        let steps = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let betas: Vec<f64> = take(steps.checked_mul(8).ok_or_else(|| bad("step count overflow"))?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            conditioning,
            sigma_data,
            norm,
            net: Mlp::from_params(dims, net_params).ok_or_else(|| bad("parameter count"))?,
            schedule: NoiseSchedule::from_betas(betas)?,
        })
    }
}

impl NoisePredictor for DenoiserModel {
    fn latent_dim(&self) -> usize {
        self.conditioning.latent_dim
    }

    fn predict_noise(&self, queries: &[NoiseQuery<'_>]) -> Vec<f64> {
        let (mut x, aux) = self.prepare(queries);
        self.norm.apply(&mut x);
        let mut out = self.net.predict(&x, queries.len());
        let d = self.conditioning.latent_dim;
        for ((row, q), (anchor, ve)) in out.chunks_exact_mut(d).zip(queries).zip(&aux) {
            let sc = self.scaling(q.step);
            for ((o, v), m) in row.iter_mut().zip(ve).zip(anchor) {
                *o = ((1.0 - sc.c_skip) * (v - m) - sc.c_out * *o) / sc.sigma;
            }
        }
        out
    }
}

/// Mean of the reverse step from `z` at step `l` given predicted noise.
pub fn reverse_mean(
    z: &[f64],
    eps: &[f64],
    l: usize,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>, ReconstructError> {
    let (a, b, ab) = (schedule.alpha(l)?, schedule.beta(l)?, schedule.alpha_bar(l)?);
    let k = b / (1.0 - ab).sqrt();
    let inv = 1.0 / a.sqrt();
    Ok(z.iter().zip(eps).map(|(z, e)| inv * (z - k * e)).collect())
}

/// Context latents flattened in the order the network expects.
pub fn context_vector(
    before: &LatentSeq,
    after: &LatentSeq,
    context: usize,
) -> Result<Vec<f64>, ReconstructError> {
    if before.len() < context || after.len() < context {
        return Err(ReconstructError::InvalidProblem(format!(
            "need {context} context frames on each side, have {} and {}",
            before.len(),
            after.len()
        )));
    }
    let mut v = Vec::new();
    for z in before.latents[before.len() - context..]
        .iter()
        .chain(&after.latents[..context])
    {
        v.extend_from_slice(z.values());
    }
    Ok(v)
}

/// Ancestral sampling of `gap_len` latents between two context blocks.
pub fn sample_gap_latents<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    context: &[f64],
    gap_len: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, ReconstructError> {
    let d = model.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z: Vec<Vec<f64>> = (0..gap_len)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let taus: Vec<f64> = (0..gap_len)
        .map(|i| gap_position(i, 0, gap_len - 1))
        .collect();
    for l in (1..=schedule.steps()).rev() {
        let queries: Vec<NoiseQuery<'_>> = z
            .iter()
            .zip(&taus)
            .map(|(zi, tau)| NoiseQuery {
                noisy: zi,
                context,
                tau: *tau,
                step: l,
            })
            .collect();
        let eps = model.predict_noise(&queries);
        if eps.len() != gap_len * d {
            return Err(ReconstructError::Dimension(format!(
                "predictor returned {} values for {gap_len} x {d}",
                eps.len()
            )));
        }
        let sd = schedule.beta(l)?.sqrt();
        let mut next = Vec::with_capacity(gap_len);
        for (zi, e) in z.iter().zip(eps.chunks_exact(d)) {
            let mut m = reverse_mean(zi, e, l, schedule)?;
            if l > 1 {
                for v in &mut m {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *v += sd * n;
                }
            }
            next.push(m);
        }
        z = next;
    }
    Ok(z)
}

/// Generates the frames between `before` and `after`.
pub fn sample_gap_frames<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    codec: &LatentCodec,
    context: usize,
    before: &VideoClip,
    after: &VideoClip,
    gap_len: usize,
    seed: u64,
) -> Result<Vec<Frame>, ReconstructError> {
    if gap_len == 0 {
        return Ok(Vec::new());
    }
    if codec.dim() != model.latent_dim() {
        return Err(ReconstructError::Dimension(format!(
            "codec latent of {} but model latent of {}",
            codec.dim(),
            model.latent_dim()
        )));
    }
    let n_before = before.len().min(context);
    let b = codec.encode_seq(&before.frames()[before.len() - n_before..])?;
    let a = codec.encode_seq(&after.frames()[..after.len().min(context)])?;
    let ctx = context_vector(&b, &a, context)?;
    sample_gap_latents(model, schedule, &ctx, gap_len, seed)?
        .into_iter()
        .map(|z| {
            let z = z.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            codec.decode(&Latent::new(codec.side, z)?)
        })
        .collect()
}

/// Clips encoded once for training.
#[derive(Clone, Debug, Default)]
pub struct DenoiserCorpus {
    pub clips: Vec<LatentSeq>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusSpec {
    pub clips: usize,
    pub frames: usize,
    pub amplitude: (f64, f64),
    pub gamma: (f64, f64),
    /// Share of clips following smooth random paths instead of sinusoids.
    pub random_fraction: f64,
    pub waypoint_every: (usize, usize),
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            clips: 160,
            frames: 150,
            amplitude: (20.0, 20.0),
            gamma: (0.001, 0.04),
            random_fraction: 0.0,
            waypoint_every: (15, 45),
        }
    }
}

impl DenoiserCorpus {
    pub fn from_clips(clips: &[VideoClip], codec: &LatentCodec) -> Result<Self, ReconstructError> {
        Ok(Self {
            clips: clips.iter().map(|c| codec.encode_seq(c.frames())).collect::<Result<_, _>>()?,
        })
    }

    /// Sinusoids with random amplitude, rate and phase, optionally mixed
    /// with smooth random paths.
    pub fn synthetic(scene: &SceneConfig, spec: &CorpusSpec, seed: u64) -> Result<Self, ReconstructError> {
        let codec = LatentCodec::for_frame(scene.width, scene.height)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajectories: Vec<Trajectory> = (0..spec.clips)
            .map(|_| {
                let amp = rng.random_range(spec.amplitude.0..=spec.amplitude.1);
                if !rng.random_bool(spec.random_fraction.clamp(0.0, 1.0)) {
                    let gamma = rng.random_range(spec.gamma.0..=spec.gamma.1);
                    let start = rng.random_range(0.0..1.0 / gamma);
                    gen_sinusoid_from(spec.frames, amp, gamma, start)
                } else {
                    let every = rng.random_range(spec.waypoint_every.0..=spec.waypoint_every.1);
                    gen_random(spec.frames, amp, every, rng.random())
                }
            })
            .collect::<Result<_, _>>()?;
        use rayon::prelude::*;
        let clips = trajectories
            .par_iter()
            .map(|t| codec.encode_seq(synth_video(scene, t)?.frames()))
            .collect::<Result<Vec<_>, ReconstructError>>()?;
        Ok(Self { clips })
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

/// Per-noise-level weight of the training loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossWeighting {
    /// Squared error of the predicted noise.
    Noise,
    /// Unit weight on the preconditioned target. Compared with `Noise` this
    /// up-weights the high-noise steps by `1 + sigma^2 / sigma_data^2`.
    #[default]
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub min_gap: usize,
    pub max_gap: usize,
    /// Probability that a context frame is dimmed, and the lowest gain.
    pub dim_prob: f64,
    pub dim_floor: f64,
    /// Held-out examples used to report the loss.
    pub eval_examples: usize,
    /// Standardise inputs with statistics from `norm_examples` draws.
    pub fit_input_norm: bool,
    pub norm_examples: usize,
    /// Fixed anchor spread; fitted from the norm draws when absent.
    pub sigma_data: Option<f64>,
    pub weighting: LossWeighting,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 60_000,
            batch: 32,
            lr: 1e-3,
            min_gap: 8,
            max_gap: 50,
            dim_prob: 0.15,
            dim_floor: 0.85,
            eval_examples: 256,
            fit_input_norm: true,
            norm_examples: 2048,
            sigma_data: None,
            weighting: LossWeighting::default(),
            log_every: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Held-out loss under the training weighting.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Held-out squared error of the predicted noise.
    pub initial_noise_loss: f64,
    pub final_noise_loss: f64,
    /// `(step, held-out loss)` every `log_every` steps.
    pub curve: Vec<(usize, f64)>,
    /// `(step, held-out noise loss)` at the same steps.
    pub noise_curve: Vec<(usize, f64)>,
}

/// Flattened training rows ready for the network.
struct Batch {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    weights: Vec<f64>,
    rows: usize,
}

/// Raw draws before the model's scaling is applied.
struct Draws {
    clean: Vec<f64>,
    noise: Vec<f64>,
    context: Vec<f64>,
    taus: Vec<f64>,
    steps: Vec<usize>,
}

pub struct Trainer<'a> {
    corpus: &'a DenoiserCorpus,
    config: TrainConfig,
    model: DenoiserModel,
    opt: Adam,
    rng: ChaCha8Rng,
    eval: Batch,
    /// Same draws weighted as plain noise-prediction error.
    eval_noise_weights: Vec<f64>,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        corpus: &'a DenoiserCorpus,
        model: DenoiserModel,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self, ReconstructError> {
        if corpus.is_empty() {
            return Err(ReconstructError::InvalidProblem("empty training corpus".into()));
        }
        let ctx = model.conditioning.context;
        let shortest = corpus.clips.iter().map(LatentSeq::len).min().unwrap_or(0);
        if config.min_gap == 0
            || config.min_gap > config.max_gap
            || shortest < config.max_gap + 2 * ctx
        {
            return Err(ReconstructError::InvalidProblem(format!(
                "gap range {}..={} does not fit clips of {shortest} frames",
                config.min_gap, config.max_gap
            )));
        }
        if corpus.clips.iter().flat_map(|c| &c.latents).any(|z| z.dim() != model.conditioning.latent_dim) {
            return Err(ReconstructError::Dimension("corpus latent size differs from model".into()));
        }
        let mut model = model;
        let mut eval_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        if config.fit_input_norm {
            let raw = draw(corpus, &model, &config, config.norm_examples, &mut eval_rng);
            model.sigma_data = config.sigma_data.unwrap_or_else(|| anchor_spread(&model, &raw));
            let sample = to_batch(&model, &raw, config.weighting);
            model.norm = InputNorm::fit(&sample.inputs, model.conditioning.input_dim());
        }
        let raw = draw(corpus, &model, &config, config.eval_examples, &mut eval_rng);
        let mut eval = to_batch(&model, &raw, config.weighting);
        model.norm.apply(&mut eval.inputs);
        let eval_noise_weights = to_batch(&model, &raw, LossWeighting::Noise).weights;
        Ok(Self {
            corpus,
            opt: Adam::new(model.net.params().len(), config.lr),
            config,
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            eval,
            eval_noise_weights,
            step: 0,
        })
    }

    pub fn model(&self) -> &DenoiserModel {
        &self.model
    }

    pub fn into_model(self) -> DenoiserModel {
        self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Training objective on the held-out draws.
    pub fn eval_loss(&self) -> f64 {
        let e = &self.eval;
        self.model.net.weighted_mse_loss(&e.inputs, &e.targets, &e.weights, e.rows)
    }

    /// Noise-prediction error on the held-out draws.
    pub fn eval_noise_loss(&self) -> f64 {
        let e = &self.eval;
        self.model
            .net
            .weighted_mse_loss(&e.inputs, &e.targets, &self.eval_noise_weights, e.rows)
    }

    /// One optimiser step; returns the batch loss before the update.
    pub fn step(&mut self) -> Result<f64, ReconstructError> {
        let raw = draw(self.corpus, &self.model, &self.config, self.config.batch, &mut self.rng);
        let mut b = to_batch(&self.model, &raw, self.config.weighting);
        self.model.norm.apply(&mut b.inputs);
        let (loss, grad) = self
            .model
            .net
            .weighted_mse_loss_grad(&b.inputs, &b.targets, &b.weights, b.rows);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ReconstructError::Diverged {
                step: self.step,
                loss,
            });
        }
        self.opt.step(self.model.net.params_mut(), &grad);
        self.step += 1;
        Ok(loss)
    }
}

fn draw(
    corpus: &DenoiserCorpus,
    model: &DenoiserModel,
    cfg: &TrainConfig,
    rows: usize,
    rng: &mut ChaCha8Rng,
) -> Draws {
    let cond = model.conditioning;
    let d = cond.latent_dim;
    let ctx = cond.context;
    let steps = model.schedule.steps();
    let mut out = Draws {
        clean: Vec::with_capacity(rows * d),
        noise: Vec::with_capacity(rows * d),
        context: Vec::with_capacity(rows * cond.context_dim()),
        taus: Vec::with_capacity(rows),
        steps: Vec::with_capacity(rows),
    };
    for _ in 0..rows {
        let clip = &corpus.clips[rng.random_range(0..corpus.clips.len())];
        let n = rng.random_range(cfg.min_gap..=cfg.max_gap);
        let start = rng.random_range(ctx..=clip.len() - ctx - n);
        let end = start + n - 1;
        let t = rng.random_range(start..=end);
        for z in clip.latents[start - ctx..start].iter().chain(&clip.latents[end + 1..end + 1 + ctx]) {
            if rng.random_bool(cfg.dim_prob) {
                let g = rng.random_range(cfg.dim_floor..=1.0);
                out.context.extend(z.values().iter().map(|v| g * (v + 1.0) - 1.0));
            } else {
                out.context.extend_from_slice(z.values());
            }
        }
        out.clean.extend_from_slice(clip.latents[t].values());
        out.noise.extend((0..d).map(|_| -> f64 { StandardNormal.sample(rng) }));
        out.taus.push(gap_position(t, start, end));
        out.steps.push(rng.random_range(1..=steps));
    }
    out
}

/// Root-mean-square distance of the clean latents from their anchors.
fn anchor_spread(model: &DenoiserModel, raw: &Draws) -> f64 {
    let d = model.conditioning.latent_dim;
    let cd = model.conditioning.context_dim();
    let mut acc = 0.0;
    for (r, tau) in raw.taus.iter().enumerate() {
        let m = model.anchor(&raw.context[r * cd..(r + 1) * cd], *tau);
        acc += raw.clean[r * d..(r + 1) * d]
            .iter()
            .zip(&m)
            .map(|(x, a)| (x - a).powi(2))
            .sum::<f64>();
    }
    (acc / raw.clean.len() as f64).sqrt().max(1e-3)
}

/// Network inputs, residual targets and loss weights. Under
/// [`LossWeighting::Noise`] the weighted residual error equals the error of
/// the predicted noise.
fn to_batch(model: &DenoiserModel, raw: &Draws, weighting: LossWeighting) -> Batch {
    let d = model.conditioning.latent_dim;
    let cd = model.conditioning.context_dim();
    let rows = raw.taus.len();
    let mut noisy = vec![0.0; d];
    let mut inputs = Vec::with_capacity(rows * model.conditioning.input_dim());
    let mut targets = Vec::with_capacity(rows * d);
    let mut weights = Vec::with_capacity(rows);
    for r in 0..rows {
        let l = raw.steps[r];
        let ab = model.schedule.alpha_bar(l).expect("step in range");
        let clean = &raw.clean[r * d..(r + 1) * d];
        let eps = &raw.noise[r * d..(r + 1) * d];
        for ((z, x), e) in noisy.iter_mut().zip(clean).zip(eps) {
            *z = ab.sqrt() * x + (1.0 - ab).sqrt() * e;
        }
        let q = NoiseQuery {
            noisy: &noisy,
            context: &raw.context[r * cd..(r + 1) * cd],
            tau: raw.taus[r],
            step: l,
        };
        let (x, aux) = model.prepare(std::slice::from_ref(&q));
        inputs.extend_from_slice(&x);
        let (anchor, ve) = &aux[0];
        let sc = model.scaling(l);
        targets.extend(
            clean
                .iter()
                .zip(ve)
                .zip(anchor)
                .map(|((x0, v), m)| (x0 - m - sc.c_skip * (v - m)) / sc.c_out),
        );
        weights.push(match weighting {
            LossWeighting::Noise => (sc.c_out / sc.sigma).powi(2),
            LossWeighting::Uniform => 1.0,
        });
    }
    Batch {
        inputs,
        targets,
        weights,
        rows,
    }
}

/// Trains a fresh model. `progress` is called with `(step, held-out loss)`
/// every `log_every` steps.
pub fn train_denoiser(
    corpus: &DenoiserCorpus,
    schedule: NoiseSchedule,
    config: &TrainConfig,
    seed: u64,
    mut progress: impl FnMut(usize, f64),
) -> Result<(DenoiserModel, TrainReport), ReconstructError> {
    let model = DenoiserModel::default_architecture(schedule, seed);
    let mut trainer = Trainer::new(corpus, model, config.clone(), seed.wrapping_add(1))?;
    let initial_loss = trainer.eval_loss();
    let mut curve = vec![(0, initial_loss)];
    let mut noise_curve = vec![(0, trainer.eval_noise_loss())];
    progress(0, initial_loss);
    for s in 1..=config.steps {
        trainer.step()?;
        if (config.log_every > 0 && s % config.log_every == 0) || s == config.steps {
            let l = trainer.eval_loss();
            if !l.is_finite() {
                return Err(ReconstructError::Diverged { step: s, loss: l });
            }
            curve.push((s, l));
            noise_curve.push((s, trainer.eval_noise_loss()));
            if config.log_every > 0 && s % config.log_every == 0 {
                progress(s, l);
            }
        }
    }
    let final_loss = curve.last().map_or(initial_loss, |c| c.1);
    Ok((
        trainer.into_model(),
        TrainReport {
            initial_loss,
            final_loss,
            initial_noise_loss: noise_curve[0].1,
            final_noise_loss: noise_curve.last().map_or(f64::NAN, |c| c.1),
            curve,
            noise_curve,
        },
    ))
}
