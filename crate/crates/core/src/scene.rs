//! Ground-truth rotation trajectories and the synthetic marker renderer that
//! stands in for the overhead camera.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::video::{Frame, VideoClip, VideoError};

pub const DEFAULT_FPS: f64 = 30.0;
pub const DEFAULT_FRAMES: usize = 150;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("trajectory csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Video(#[from] VideoError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrajectoryLabel {
    GroundTruth,
    Measured,
    Reconstructed,
}

impl fmt::Display for TrajectoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GroundTruth => "GroundTruth",
            Self::Measured => "Measured",
            Self::Reconstructed => "Reconstructed",
        })
    }
}

impl FromStr for TrajectoryLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "GroundTruth" => Ok(Self::GroundTruth),
            "Measured" => Ok(Self::Measured),
            "Reconstructed" => Ok(Self::Reconstructed),
            other => Err(format!("unknown trajectory label {other:?}")),
        }
    }
}

/// One rotation angle (degrees) per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    angles: Vec<f64>,
    fps: f64,
    label: TrajectoryLabel,
}

impl Trajectory {
    pub fn new(angles: Vec<f64>, fps: f64, label: TrajectoryLabel) -> Result<Self, SceneError> {
        if angles.is_empty() {
            return Err(SceneError::InvalidTrajectory("empty".into()));
        }
        if let Some((i, a)) = angles
            .iter()
            .enumerate()
            .find(|(_, a)| !a.is_finite() || a.abs() > 180.0)
        {
            return Err(SceneError::InvalidTrajectory(format!(
                "angle {a} at frame {i} is not a finite value in [-180, 180]"
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(SceneError::InvalidTrajectory(format!("fps {fps}")));
        }
        Ok(Self { angles, fps, label })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn label(&self) -> TrajectoryLabel {
        self.label
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn with_label(mut self, label: TrajectoryLabel) -> Self {
        self.label = label;
        self
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        self.fps = fps;
        self
    }

    /// `frame,angle_deg,label` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,angle_deg,label\n");
        for (i, a) in self.angles.iter().enumerate() {
            out.push_str(&format!("{i},{a:.6},{}\n", self.label));
        }
        out
    }

    pub fn from_csv(text: &str, fps: f64) -> Result<Self, SceneError> {
        let rows = parse_trajectory_rows(text)?;
        let mut angles = Vec::with_capacity(rows.len());
        let mut label = None;
        for (line, (_, angle, l)) in rows {
            let a = angle.ok_or_else(|| SceneError::Csv {
                line,
                msg: "missing angle".into(),
            })?;
            angles.push(a);
            label.get_or_insert(l);
        }
        let label = label.ok_or_else(|| SceneError::Csv {
            line: 1,
            msg: "no rows".into(),
        })?;
        Self::new(angles, fps, label)
    }
}

/// Parsed `(frame, angle, label)` rows keyed by their 1-based line number.
/// An empty angle field denotes a frame without a measurement.
pub(crate) fn parse_trajectory_rows(
    text: &str,
) -> Result<Vec<(usize, (usize, Option<f64>, TrajectoryLabel))>, SceneError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "frame,angle_deg,label" => {}
        _ => {
            return Err(SceneError::Csv {
                line: 1,
                msg: "expected header `frame,angle_deg,label`".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| SceneError::Csv { line: line_no, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, got {}", fields.len())));
        }
        let frame: usize = fields[0]
            .parse()
            .map_err(|e| err(format!("frame: {e}")))?;
        if frame != rows.len() {
            return Err(err(format!("expected frame {}, got {frame}", rows.len())));
        }
        let angle = if fields[1].is_empty() {
            None
        } else {
            Some(
                fields[1]
                    .parse::<f64>()
                    .map_err(|e| err(format!("angle: {e}")))?,
            )
        };
        let label = fields[2].parse().map_err(err)?;
        rows.push((line_no, (frame, angle, label)));
    }
    Ok(rows)
}

pub fn gen_sinusoid(frames: usize, amplitude: f64, gamma: f64) -> Result<Trajectory, SceneError> {
    gen_sinusoid_from(frames, amplitude, gamma, 0.0)
}

/// `amplitude * sin(2π γ (t + start))` for frame index `t`.
pub fn gen_sinusoid_from(
    frames: usize,
    amplitude: f64,
    gamma: f64,
    start: f64,
) -> Result<Trajectory, SceneError> {
    if frames == 0 {
        return Err(SceneError::InvalidTrajectory("zero frames".into()));
    }
    if !(amplitude > 0.0 && amplitude <= 180.0) {
        return Err(SceneError::InvalidTrajectory(format!(
            "amplitude {amplitude} outside (0, 180]"
        )));
    }
    let angles = (0..frames)
        .map(|t| amplitude * (2.0 * std::f64::consts::PI * gamma * (t as f64 + start)).sin())
        .collect();
    Trajectory::new(angles, DEFAULT_FPS, TrajectoryLabel::GroundTruth)
}

/// Waypoints every `every` frames joined by cubic smoothstep segments.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomPath {
    waypoints: Vec<f64>,
    every: usize,
}

impl RandomPath {
    /// Draws `ceil((frames-1)/every) + 1` waypoints, each
    /// `amplitude * (2u - 1)` with `u` uniform in `[0, 1)` from a ChaCha8
    /// stream seeded with `seed`.
    pub fn new(frames: usize, amplitude: f64, every: usize, seed: u64) -> Result<Self, SceneError> {
        if every < 2 {
            return Err(SceneError::InvalidTrajectory(format!(
                "waypoint spacing {every} < 2"
            )));
        }
        if !(0.0..=180.0).contains(&amplitude) {
            return Err(SceneError::InvalidTrajectory(format!(
                "amplitude {amplitude} outside [0, 180]"
            )));
        }
        let segments = frames.saturating_sub(1).div_ceil(every).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waypoints = (0..=segments)
            .map(|_| amplitude * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        Ok(Self { waypoints, every })
    }

    pub fn waypoints(&self) -> &[f64] {
        &self.waypoints
    }

    fn segment(&self, t: f64) -> (usize, f64) {
        let every = self.every as f64;
        let last = self.waypoints.len() - 2;
        let seg = ((t / every).floor().max(0.0) as usize).min(last);
        (seg, (t - seg as f64 * every) / every)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let (seg, s) = self.segment(t);
        let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
        a + (b - a) * s * s * (3.0 - 2.0 * s)
    }

    /// Analytic derivative in degrees per frame.
    pub fn slope_at(&self, t: f64) -> f64 {
        let (seg, s) = self.segment(t);
        let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
        (b - a) * 6.0 * s * (1.0 - s) / self.every as f64
    }
}

pub fn gen_random(
    frames: usize,
    amplitude: f64,
    waypoint_every: usize,
    seed: u64,
) -> Result<Trajectory, SceneError> {
    if frames == 0 {
        return Err(SceneError::InvalidTrajectory("zero frames".into()));
    }
    let path = RandomPath::new(frames, amplitude, waypoint_every, seed)?;
    let angles = (0..frames).map(|t| path.value_at(t as f64)).collect();
    Trajectory::new(angles, DEFAULT_FPS, TrajectoryLabel::GroundTruth)
}

/// Geometry and palette of the synthetic marker scene. Radii and offsets
/// are fractions of the frame width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub disk_radius: f64,
    pub dot_radius: f64,
    pub dot_offset: f64,
    pub background: [u8; 3],
    pub disk_color: [u8; 3],
    pub dot_color: [u8; 3],
    /// Translation of the marker center from the frame center, in pixels.
    pub center_shift: [f64; 2],
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            disk_radius: 0.35,
            dot_radius: 0.10,
            dot_offset: 0.22,
            background: [20, 20, 20],
            disk_color: [235, 235, 235],
            dot_color: [250, 170, 0],
            center_shift: [0.0, 0.0],
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn with_size(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width < crate::video::MIN_FRAME_DIM || self.height < crate::video::MIN_FRAME_DIM {
            return Err(SceneError::InvalidConfig(format!(
                "frame {}x{} too small",
                self.width, self.height
            )));
        }
        if !(self.disk_radius > 0.0 && self.disk_radius <= 0.45) {
            return Err(SceneError::InvalidConfig(format!(
                "disk radius {} outside (0, 0.45]",
                self.disk_radius
            )));
        }
        if !(self.dot_radius > 0.0 && self.dot_offset >= 0.0) {
            return Err(SceneError::InvalidConfig("dot geometry must be positive".into()));
        }
        if self.dot_offset + self.dot_radius >= self.disk_radius {
            return Err(SceneError::InvalidConfig(format!(
                "dot (offset {} + radius {}) must lie inside the disk (radius {})",
                self.dot_offset, self.dot_radius, self.disk_radius
            )));
        }
        Ok(())
    }

    /// Marker center in continuous image coordinates (y down).
    pub fn marker_center(&self) -> (f64, f64) {
        (
            self.width as f64 / 2.0 + self.center_shift[0],
            self.height as f64 / 2.0 + self.center_shift[1],
        )
    }

    pub fn disk_radius_px(&self) -> f64 {
        self.disk_radius * self.width as f64
    }

    /// Dot center for a rotation of `angle` degrees (0° = +x, CCW positive
    /// with y up).
    pub fn dot_center(&self, angle: f64) -> (f64, f64) {
        let (cx, cy) = self.marker_center();
        let r = self.dot_offset * self.width as f64;
        let th = angle.to_radians();
        (cx + r * th.cos(), cy - r * th.sin())
    }
}

/// Renders one frame with 2x2 supersampling.
pub fn render_frame(cfg: &SceneConfig, angle: f64) -> Result<Frame, SceneError> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let (cx, cy) = cfg.marker_center();
    let (dx, dy) = cfg.dot_center(angle);
    let disk_r2 = cfg.disk_radius_px().powi(2);
    let dot_r2 = (cfg.dot_radius * w as f64).powi(2);
    let sample = |x: f64, y: f64| -> [u8; 3] {
        if (x - dx).powi(2) + (y - dy).powi(2) <= dot_r2 {
            cfg.dot_color
        } else if (x - cx).powi(2) + (y - cy).powi(2) <= disk_r2 {
            cfg.disk_color
        } else {
            cfg.background
        }
    };
    const OFFSETS: [(f64, f64); 4] = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)];
    let mut pixels = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0u32; 3];
            for (ox, oy) in OFFSETS {
                let c = sample(x as f64 + ox, y as f64 + oy);
                for ch in 0..3 {
                    acc[ch] += u32::from(c[ch]);
                }
            }
            // integer round-half-up of acc / 4
            pixels.extend(acc.iter().map(|a| ((a + 2) / 4) as u8));
        }
    }
    Ok(Frame::new(w, h, pixels)?)
}

/// One rendered frame per trajectory sample, at the trajectory's frame rate.
pub fn synth_video(cfg: &SceneConfig, traj: &Trajectory) -> Result<VideoClip, SceneError> {
    let frames = traj
        .angles()
        .iter()
        .map(|a| render_frame(cfg, *a))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VideoClip::new(frames, traj.fps())?)
}
