//! Filling the excised anomaly window.
//!
//! [`fourier`] and [`spline`] fill the pose trajectory directly. The
//! diffusion path regenerates the missing frames in latent space
//! ([`latent`], [`denoiser`]) and measures the pose on the spliced clip.

pub mod denoiser;
pub mod fourier;
pub mod latent;
pub mod nn;
pub mod schedule;
pub mod spline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fdd::{segment, AnomalyInterval, FddError};
use crate::pose::{extract_trajectory, MarkerDetector, MeasuredTrajectory, PoseError};
use crate::scene::{SceneError, Trajectory, TrajectoryLabel};
use crate::video::{VideoClip, VideoError};

pub use denoiser::{DenoiserModel, NoisePredictor};
pub use fourier::fft_fill;
pub use latent::{Latent, LatentCodec, LatentSeq};
pub use schedule::{forward_diffuse, NoiseSchedule};
pub use spline::spline_fill;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("invalid gap problem: {0}")]
    InvalidProblem(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("diffusion step {step} outside 1..={steps}")]
    StepOutOfRange { step: usize, steps: usize },
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("diffusion reconstruction needs a trained model")]
    MissingModel,
    #[error(transparent)]
    Fdd(#[from] FddError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A trajectory with an inclusive window of unknown samples.
#[derive(Clone, Debug, PartialEq)]
pub struct GapProblem {
    series: Vec<f64>,
    fps: f64,
    gap: Option<(usize, usize)>,
}

impl GapProblem {
    /// Values of `series` inside `[start, end]` are ignored.
    pub fn new(series: Vec<f64>, fps: f64, start: usize, end: usize) -> Result<Self, ReconstructError> {
        if start > end || end >= series.len() {
            return Err(ReconstructError::InvalidProblem(format!(
                "gap ({start},{end}) outside {} samples",
                series.len()
            )));
        }
        if start == 0 || end + 1 == series.len() {
            return Err(ReconstructError::InvalidProblem(format!(
                "gap ({start},{end}) leaves one side empty"
            )));
        }
        Ok(Self {
            series,
            fps,
            gap: Some((start, end)),
        })
    }

    pub fn without_gap(series: Vec<f64>, fps: f64) -> Self {
        Self {
            series,
            fps,
            gap: None,
        }
    }

    /// Uses measured poses outside the interval; isolated missed
    /// detections there are bridged linearly first.
    pub fn from_measured(m: &MeasuredTrajectory, interval: &AnomalyInterval) -> Result<Self, ReconstructError> {
        let filled = m.filled_linear()?;
        Self::new(filled.angles().to_vec(), m.fps(), interval.start, interval.end)
    }

    pub fn series(&self) -> &[f64] {
        &self.series
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn gap(&self) -> Option<(usize, usize)> {
        self.gap
    }

    /// `(t, value)` for every sample outside the gap, in order.
    pub fn known(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let gap = self.gap;
        self.series
            .iter()
            .copied()
            .enumerate()
            .filter(move |(t, _)| gap.is_none_or(|(s, e)| *t < s || *t > e))
    }

    pub(crate) fn passthrough(&self) -> Result<Trajectory, ReconstructError> {
        Ok(Trajectory::new(self.series.clone(), self.fps, TrajectoryLabel::Reconstructed)?)
    }
}

/// Repeats the last sample before the gap.
pub fn hold_last_fill(p: &GapProblem) -> Result<Trajectory, ReconstructError> {
    let Some((start, end)) = p.gap() else {
        return p.passthrough();
    };
    let mut out = p.series().to_vec();
    let v = out[start - 1];
    out[start..=end].fill(v);
    Ok(Trajectory::new(out, p.fps(), TrajectoryLabel::Reconstructed)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Diffusion,
    #[serde(rename = "FFT")]
    Fft,
    Spline,
    HoldLast,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Diffusion, Method::Fft, Method::Spline, Method::HoldLast];

    pub fn name(self) -> &'static str {
        match self {
            Self::Diffusion => "Diffusion",
            Self::Fft => "FFT",
            Self::Spline => "Spline",
            Self::HoldLast => "HoldLast",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Everything a reconstruction may need besides the clip itself.
#[derive(Clone, Copy)]
pub struct ReconstructContext<'a> {
    pub detector: &'a MarkerDetector,
    pub model: Option<&'a DenoiserModel>,
    pub fft_keep: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub clip: VideoClip,
    pub trajectory: Trajectory,
    /// Pose measured on the input clip (the gap is whatever the detector saw).
    pub measured: MeasuredTrajectory,
}

pub fn reconstruct_video(
    clip: &VideoClip,
    interval: &AnomalyInterval,
    method: Method,
    ctx: &ReconstructContext<'_>,
) -> Result<Reconstruction, ReconstructError> {
    let measured = extract_trajectory(clip, ctx.detector);
    let problem = GapProblem::from_measured(&measured, interval)?;
    let (out_clip, trajectory) = match method {
        Method::Fft => (clip.clone(), fft_fill(&problem, ctx.fft_keep)?),
        Method::Spline => (clip.clone(), spline_fill(&problem)?.trajectory),
        Method::HoldLast => {
            let mut frames = clip.frames().to_vec();
            let held = frames[interval.start - 1].clone();
            frames[interval.start..=interval.end].fill(held);
            (VideoClip::new(frames, clip.fps())?, hold_last_fill(&problem)?)
        }
        Method::Diffusion => {
            let model = ctx.model.ok_or(ReconstructError::MissingModel)?;
            let (before, after) = segment(clip, interval)?;
            let codec = LatentCodec::for_frame(clip.width(), clip.height())?;
            let generated = denoiser::sample_gap_frames(
                model,
                &model.schedule,
                &codec,
                model.conditioning.context,
                &before,
                &after,
                interval.len(),
                ctx.seed,
            )?;
            let mut frames = before.into_frames();
            frames.extend(generated);
            frames.extend(after.into_frames());
            let spliced = VideoClip::new(frames, clip.fps())?;
            let pose = extract_trajectory(&spliced, ctx.detector).filled_linear()?;
            // outside the gap the frames are untouched, so keep the
            // measurement the other methods also see
            let mut angles = problem.series().to_vec();
            angles[interval.start..=interval.end]
                .copy_from_slice(&pose.angles()[interval.start..=interval.end]);
            let t = Trajectory::new(angles, clip.fps(), TrajectoryLabel::Reconstructed)?;
            (spliced, t)
        }
    };
    Ok(Reconstruction {
        clip: out_clip,
        trajectory,
        measured,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::{inject, AnomalyKind, AnomalySpec, Window};
    use crate::scene::{gen_sinusoid, synth_video, SceneConfig};

    #[test]
    fn gap_problem_validation() {
        assert!(GapProblem::new(vec![0.0; 10], 30.0, 0, 3).is_err());
        assert!(GapProblem::new(vec![0.0; 10], 30.0, 3, 9).is_err());
        assert!(GapProblem::new(vec![0.0; 10], 30.0, 5, 3).is_err());
        let p = GapProblem::new((0..10).map(f64::from).collect(), 30.0, 3, 5).unwrap();
        let k: Vec<usize> = p.known().map(|(t, _)| t).collect();
        assert_eq!(k, vec![0, 1, 2, 6, 7, 8, 9]);
    }

    #[test]
    fn fills_are_identity_without_gap() {
        let t = gen_sinusoid(150, 20.0, 0.01).unwrap();
        let p = GapProblem::without_gap(t.angles().to_vec(), 30.0);
        assert_eq!(fft_fill(&p, 8).unwrap().angles(), t.angles());
        assert_eq!(spline_fill(&p).unwrap().trajectory.angles(), t.angles());
        assert_eq!(hold_last_fill(&p).unwrap().angles(), t.angles());
    }

    #[test]
    fn hold_last_repeats_the_edge() {
        let p = GapProblem::new(vec![1.0, 2.0, 0.0, 0.0, 5.0], 30.0, 2, 3).unwrap();
        assert_eq!(hold_last_fill(&p).unwrap().angles(), &[1.0, 2.0, 2.0, 2.0, 5.0]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("fft".parse::<Method>().unwrap(), Method::Fft);
    }

    #[test]
    fn analytic_methods_keep_frames_and_known_samples() {
        let scene = SceneConfig::default();
        let truth = gen_sinusoid(150, 20.0, 0.01).unwrap();
        let clean = synth_video(&scene, &truth).unwrap();
        let w = Window::new(60, 90);
        let bad = inject(&clean, &AnomalySpec::new(AnomalyKind::LightingChange, w, 0), None, None).unwrap();
        let det = MarkerDetector::for_scene(&scene);
        let iv = AnomalyInterval::from_bounds(58, 92, 150).unwrap();
        let ctx = ReconstructContext {
            detector: &det,
            model: None,
            fft_keep: 8,
            seed: 0,
        };
        for m in [Method::Fft, Method::Spline, Method::HoldLast] {
            let r = reconstruct_video(&bad, &iv, m, &ctx).unwrap();
            assert_eq!(r.clip.len(), bad.len());
            assert_eq!(r.trajectory.label(), TrajectoryLabel::Reconstructed);
            let measured = r.measured.filled_linear().unwrap();
            for t in (0..58).chain(93..150) {
                assert_eq!(r.trajectory.angles()[t], measured.angles()[t]);
            }
            if m != Method::HoldLast {
                assert_eq!(r.clip, bad);
            }
        }
        assert!(matches!(
            reconstruct_video(&bad, &iv, Method::Diffusion, &ctx),
            Err(ReconstructError::MissingModel)
        ));
    }

    #[test]
    fn diffusion_output_length_matches() {
        let scene = SceneConfig::default();
        let truth = gen_sinusoid(150, 20.0, 0.01).unwrap();
        let clip = synth_video(&scene, &truth).unwrap();
        let det = MarkerDetector::for_scene(&scene);
        let model = DenoiserModel::new(
            denoiser::Conditioning::default(),
            &[16],
            NoiseSchedule::linear(5, 1e-3, 0.2).unwrap(),
            1,
        );
        let ctx = ReconstructContext {
            detector: &det,
            model: Some(&model),
            fft_keep: 8,
            seed: 3,
        };
        let iv = AnomalyInterval::from_bounds(60, 90, 150).unwrap();
        let r = reconstruct_video(&clip, &iv, Method::Diffusion, &ctx).unwrap();
        assert_eq!(r.clip.len(), 150);
        assert_eq!(&r.clip.frames()[..60], &clip.frames()[..60]);
        assert_eq!(&r.clip.frames()[91..], &clip.frames()[91..]);
    }
}
