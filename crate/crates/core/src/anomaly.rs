//! Deterministic corruption of a clean clip over a frame window.
//!
//! Every injector leaves frames outside `[start, end]` untouched. Ramped
//! anomalies use a triangular level that is zero one frame before the
//! window and one frame after it and peaks at the window midpoint, so each
//! frame inside the window is corrupted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{render_frame, SceneConfig, SceneError, Trajectory};
use crate::video::{Frame, VideoClip, VideoError};

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("window ({start},{end}) invalid for a clip of {len} frames")]
    WindowOutOfRange { start: usize, end: usize, len: usize },
    #[error("invalid intensity: {0}")]
    InvalidIntensity(String),
    #[error("out-of-frame injection needs the scene config and ground-truth trajectory")]
    MissingRenderer,
    #[error("trajectory has {traj} samples but the clip has {clip} frames")]
    LengthMismatch { traj: usize, clip: usize },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Video(#[from] VideoError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Occlusion,
    LightingChange,
    SignalNoise,
    OutOfFrame,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 4] = [
        AnomalyKind::Occlusion,
        AnomalyKind::LightingChange,
        AnomalyKind::SignalNoise,
        AnomalyKind::OutOfFrame,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Occlusion => "occlusion",
            Self::LightingChange => "lighting_change",
            Self::SignalNoise => "signal_noise",
            Self::OutOfFrame => "out_of_frame",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Self::Occlusion => "Occlusion",
            Self::LightingChange => "Lighting Change",
            Self::SignalNoise => "Signal Noise",
            Self::OutOfFrame => "Out of frame",
        }
    }
}

impl std::str::FromStr for AnomalyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown anomaly kind {s:?}"))
    }
}

/// Inclusive frame window `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..=self.end).contains(&i)
    }

    /// Position of frame `i` in `(0, 1)`; 0 and 1 fall on the frames just
    /// outside the window.
    pub fn phase(&self, i: usize) -> f64 {
        (i as f64 - self.start as f64 + 1.0) / (self.len() as f64 + 1.0)
    }

    /// Triangular ramp: 0 at the outside neighbours, 1 at the midpoint.
    pub fn level(&self, i: usize) -> f64 {
        if !self.contains(i) {
            return 0.0;
        }
        1.0 - (2.0 * self.phase(i) - 1.0).abs()
    }

    fn check(&self, len: usize) -> Result<(), AnomalyError> {
        if self.start > self.end || self.end >= len {
            return Err(AnomalyError::WindowOutOfRange {
                start: self.start,
                end: self.end,
                len,
            });
        }
        Ok(())
    }
}

/// Anomaly windows placed mid-clip for a 150-frame, 30 FPS recording.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DurationPreset {
    #[serde(rename = "0.5s")]
    HalfSecond,
    #[serde(rename = "1s")]
    OneSecond,
    #[serde(rename = "1.5s")]
    OneAndHalfSecond,
}

impl DurationPreset {
    pub const ALL: [DurationPreset; 3] = [
        DurationPreset::HalfSecond,
        DurationPreset::OneSecond,
        DurationPreset::OneAndHalfSecond,
    ];

    pub fn window(self) -> Window {
        match self {
            Self::HalfSecond => Window::new(68, 83),
            Self::OneSecond => Window::new(60, 90),
            Self::OneAndHalfSecond => Window::new(52, 97),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::HalfSecond => "0.5s",
            Self::OneSecond => "1s",
            Self::OneAndHalfSecond => "1.5s",
        }
    }
}

impl std::str::FromStr for DurationPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown duration preset {s:?} (expected 0.5s, 1s or 1.5s)"))
    }
}

/// Strength knobs shared by all injectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyIntensity {
    /// Occluder hexagon circumradius as a fraction of width.
    pub occluder_radius: f64,
    pub occluder_color: [u8; 3],
    /// Brightness gain at the window midpoint.
    pub min_gain: f64,
    /// Salt-and-pepper density at the window midpoint.
    pub max_noise_density: f64,
    /// Extra pixels beyond the frame edge the marker travels when pushed out.
    pub slide_margin: f64,
}

impl Default for AnomalyIntensity {
    fn default() -> Self {
        Self {
            occluder_radius: 0.30,
            occluder_color: [150, 150, 150],
            min_gain: 0.15,
            max_noise_density: 0.25,
            slide_margin: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub window: Window,
    pub intensity: AnomalyIntensity,
    pub seed: u64,
}

impl AnomalySpec {
    pub fn new(kind: AnomalyKind, window: Window, seed: u64) -> Self {
        Self {
            kind,
            window,
            intensity: AnomalyIntensity::default(),
            seed,
        }
    }
}

fn replace_window(
    clip: &VideoClip,
    w: Window,
    mut f: impl FnMut(usize, &Frame) -> Result<Frame, AnomalyError>,
) -> Result<VideoClip, AnomalyError> {
    w.check(clip.len())?;
    let frames = clip
        .frames()
        .iter()
        .enumerate()
        .map(|(i, fr)| if w.contains(i) { f(i, fr) } else { Ok(fr.clone()) })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VideoClip::new(frames, clip.fps())?)
}

fn hexagon_contains(px: f64, py: f64, cx: f64, cy: f64, r: f64) -> bool {
    // pointy-left/right regular hexagon: |dy| <= r*sqrt(3)/2 and
    // sqrt(3)|dx| + |dy| <= sqrt(3) r
    let (dx, dy) = ((px - cx).abs(), (py - cy).abs());
    let s3 = 3f64.sqrt();
    dy <= r * s3 / 2.0 && s3 * dx + dy <= s3 * r
}

/// Opaque hexagon sweeping left to right, centred on the frame at the
/// window midpoint.
pub fn inject_occlusion(clip: &VideoClip, spec: &AnomalySpec) -> Result<VideoClip, AnomalyError> {
    let r = spec.intensity.occluder_radius * clip.width() as f64;
    if !(r > 0.0) {
        return Err(AnomalyError::InvalidIntensity(format!(
            "occluder radius {}",
            spec.intensity.occluder_radius
        )));
    }
    let (w, h) = (clip.width() as f64, clip.height() as f64);
    let color = spec.intensity.occluder_color;
    replace_window(clip, spec.window, |i, fr| {
        let cx = -r / 2.0 + spec.window.phase(i) * (w + r);
        let cy = h / 2.0;
        let mut out = fr.clone();
        for y in 0..fr.height() {
            for x in 0..fr.width() {
                let mut hits = 0u32;
                for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                    if hexagon_contains(x as f64 + ox, y as f64 + oy, cx, cy, r) {
                        hits += 1;
                    }
                }
                if hits > 0 {
                    let p = fr.pixel(x, y);
                    let mut q = [0u8; 3];
                    for c in 0..3 {
                        let v = (u32::from(color[c]) * hits + u32::from(p[c]) * (4 - hits) + 2) / 4;
                        q[c] = v as u8;
                    }
                    out.set_pixel(x, y, q);
                }
            }
        }
        Ok(out)
    })
}

/// Multiplicative gain ramping 1 -> `min_gain` -> 1.
pub fn inject_lighting(clip: &VideoClip, spec: &AnomalySpec) -> Result<VideoClip, AnomalyError> {
    let floor = spec.intensity.min_gain;
    if !(0.0..=1.0).contains(&floor) {
        return Err(AnomalyError::InvalidIntensity(format!("min gain {floor}")));
    }
    replace_window(clip, spec.window, |i, fr| {
        let gain = 1.0 - (1.0 - floor) * spec.window.level(i);
        let pixels = fr
            .pixels()
            .iter()
            .map(|p| (f64::from(*p) * gain).round().clamp(0.0, 255.0) as u8)
            .collect();
        Ok(Frame::new(fr.width(), fr.height(), pixels)?)
    })
}

/// Salt-and-pepper noise whose density ramps 0 -> `max_noise_density` -> 0.
pub fn inject_noise(clip: &VideoClip, spec: &AnomalySpec) -> Result<VideoClip, AnomalyError> {
    let d_max = spec.intensity.max_noise_density;
    if !(d_max > 0.0 && d_max <= 1.0) {
        return Err(AnomalyError::InvalidIntensity(format!(
            "noise density {d_max}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    replace_window(clip, spec.window, |i, fr| {
        let d = d_max * spec.window.level(i);
        let mut out = fr.clone();
        for px in out.pixels_mut().chunks_exact_mut(3) {
            let u: f64 = rng.random();
            if u < d {
                let v = if u < d / 2.0 { 0 } else { 255 };
                px.fill(v);
            }
        }
        Ok(out)
    })
}

/// Slides the marker out to the left during the first third of the window,
/// keeps it out, and brings it back during the last third.
pub fn inject_out_of_frame(
    clip: &VideoClip,
    spec: &AnomalySpec,
    scene: Option<&SceneConfig>,
    ground_truth: Option<&Trajectory>,
) -> Result<VideoClip, AnomalyError> {
    let (scene, truth) = match (scene, ground_truth) {
        (Some(s), Some(t)) => (s, t),
        _ => return Err(AnomalyError::MissingRenderer),
    };
    if truth.len() != clip.len() {
        return Err(AnomalyError::LengthMismatch {
            traj: truth.len(),
            clip: clip.len(),
        });
    }
    let (cx, _) = scene.marker_center();
    let out_dist = cx + scene.disk_radius_px() + spec.intensity.slide_margin;
    replace_window(clip, spec.window, |i, _| {
        let u = spec.window.phase(i);
        let frac = (3.0 * u).min(3.0 * (1.0 - u)).min(1.0);
        let mut shifted = scene.clone();
        shifted.center_shift[0] -= out_dist * frac;
        Ok(render_frame(&shifted, truth.angles()[i])?)
    })
}

/// Dispatches on `spec.kind`.
pub fn inject(
    clip: &VideoClip,
    spec: &AnomalySpec,
    scene: Option<&SceneConfig>,
    ground_truth: Option<&Trajectory>,
) -> Result<VideoClip, AnomalyError> {
    match spec.kind {
        AnomalyKind::Occlusion => inject_occlusion(clip, spec),
        AnomalyKind::LightingChange => inject_lighting(clip, spec),
        AnomalyKind::SignalNoise => inject_noise(clip, spec),
        AnomalyKind::OutOfFrame => inject_out_of_frame(clip, spec, scene, ground_truth),
    }
}
