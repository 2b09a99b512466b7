//! Marker (ROI) detection and in-plane rotation estimation.
//!
//! The marker is a bright disk carrying a darker front dot. A frame shows
//! the marker when its largest bright blob is big enough, has the expected
//! plateau brightness, is free of holes and is the only bright thing in
//! view. The rotation is the direction of the luma-deficit moment about
//! the disk centroid, which the dot dominates; anything rotationally
//! symmetric about the centroid (anti-aliased rims, blur) cancels out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{SceneConfig, SceneError, Trajectory, TrajectoryLabel};
use crate::video::{luma, to_grayscale, Frame, VideoClip};

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("no pose: marker not present")]
    NoPose,
    #[error("no frame in the clip shows the marker")]
    NothingMeasured,
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarkerThresholds {
    /// Luma at or above which a pixel belongs to the bright marker mask.
    pub tau_disk: u8,
    /// Minimum blob area as a fraction of the frame area.
    pub min_area_frac: f64,
    /// Expected luma of the disk plateau and of the dot.
    pub disk_luma: f64,
    pub dot_luma: f64,
    /// Allowed deviation of the blob's median luma from `disk_luma`.
    pub plateau_tol: f64,
    /// Interior ring excluded from the hole check, as a fraction of width.
    pub interior_margin_frac: f64,
    pub max_hole_frac: f64,
    /// Bright pixels outside the blob, relative to the blob area.
    pub max_stray_frac: f64,
}

impl Default for MarkerThresholds {
    fn default() -> Self {
        Self::for_scene(&SceneConfig::default())
    }
}

impl MarkerThresholds {
    pub fn for_scene(cfg: &SceneConfig) -> Self {
        Self {
            tau_disk: 128,
            min_area_frac: 0.02,
            disk_luma: f64::from(luma(cfg.disk_color)),
            dot_luma: f64::from(luma(cfg.dot_color)),
            plateau_tol: 16.0,
            interior_margin_frac: 0.02,
            max_hole_frac: 0.01,
            max_stray_frac: 0.01,
        }
    }
}

/// Why a frame was judged not to show the marker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Absence {
    NoBlob,
    TooSmall,
    WrongBrightness,
    Holes,
    StrayBright,
    NoDot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkerObservation {
    pub present: bool,
    pub disk_centroid: (f64, f64),
    pub dot_centroid: (f64, f64),
    /// Degrees in (-180, 180]; meaningless when absent.
    pub angle: f64,
    pub absence: Option<Absence>,
}

impl MarkerObservation {
    fn absent(reason: Absence) -> Self {
        Self {
            present: false,
            disk_centroid: (0.0, 0.0),
            dot_centroid: (0.0, 0.0),
            angle: 0.0,
            absence: Some(reason),
        }
    }
}

/// Pixel indices of the largest 4-connected component of `mask`, plus the
/// total number of set pixels.
fn largest_component(mask: &[bool], w: usize, h: usize) -> (Vec<usize>, usize) {
    let mut seen = vec![false; mask.len()];
    let mut best: Vec<usize> = Vec::new();
    let mut total = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        total += comp.len();
        if comp.len() > best.len() {
            best = comp;
        }
    }
    (best, total)
}

fn median_luma(values: &[u8], idx: &[usize]) -> f64 {
    let mut hist = [0usize; 256];
    for &i in idx {
        hist[usize::from(values[i])] += 1;
    }
    let half = idx.len().div_ceil(2);
    let mut acc = 0;
    for (v, n) in hist.iter().enumerate() {
        acc += n;
        if acc >= half {
            return v as f64;
        }
    }
    255.0
}

pub fn detect_marker(f: &Frame, th: &MarkerThresholds) -> MarkerObservation {
    let (w, h) = (f.width(), f.height());
    let g = to_grayscale(f);
    let lum = g.values();
    let mask: Vec<bool> = lum.iter().map(|v| *v >= th.tau_disk).collect();
    let (comp, bright_total) = largest_component(&mask, w, h);
    if comp.is_empty() {
        return MarkerObservation::absent(Absence::NoBlob);
    }
    let area = comp.len() as f64;
    if area < th.min_area_frac * (w * h) as f64 {
        return MarkerObservation::absent(Absence::TooSmall);
    }
    if (median_luma(lum, &comp) - th.disk_luma).abs() > th.plateau_tol {
        return MarkerObservation::absent(Absence::WrongBrightness);
    }
    if (bright_total - comp.len()) as f64 > th.max_stray_frac * area {
        return MarkerObservation::absent(Absence::StrayBright);
    }

    let center = |i: usize| ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
    let (mut cx, mut cy) = (0.0, 0.0);
    for &i in &comp {
        let (x, y) = center(i);
        cx += x;
        cy += y;
    }
    cx /= area;
    cy /= area;

    let r_in = (area / std::f64::consts::PI).sqrt() - th.interior_margin_frac * w as f64;
    if r_in > 0.0 {
        let r2 = r_in * r_in;
        let x0 = (cx - r_in).floor().max(0.0) as usize;
        let x1 = ((cx + r_in).ceil() as usize).min(w);
        let y0 = (cy - r_in).floor().max(0.0) as usize;
        let y1 = ((cy + r_in).ceil() as usize).min(h);
        let (mut inside, mut holes) = (0usize, 0usize);
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if (px - cx).powi(2) + (py - cy).powi(2) <= r2 {
                    inside += 1;
                    if !mask[y * w + x] {
                        holes += 1;
                    }
                }
            }
        }
        if inside > 0 && holes as f64 > th.max_hole_frac * inside as f64 {
            return MarkerObservation::absent(Absence::Holes);
        }
    }

    let span = th.disk_luma - th.dot_luma;
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &i in &comp {
        let wgt = ((th.disk_luma - f64::from(lum[i])) / span).clamp(0.0, 1.0);
        if wgt > 0.0 {
            let (x, y) = center(i);
            sw += wgt;
            sx += wgt * x;
            sy += wgt * y;
        }
    }
    if sw <= 0.0 {
        return MarkerObservation::absent(Absence::NoDot);
    }
    let dot = (sx / sw, sy / sw);
    let mut obs = MarkerObservation {
        present: true,
        disk_centroid: (cx, cy),
        dot_centroid: dot,
        angle: 0.0,
        absence: None,
    };
    match estimate_angle(&obs) {
        Ok(a) => obs.angle = a,
        Err(_) => return MarkerObservation::absent(Absence::NoDot),
    }
    obs
}

/// Direction from disk centroid to dot centroid, y up, in (-180, 180].
pub fn estimate_angle(obs: &MarkerObservation) -> Result<f64, PoseError> {
    if !obs.present {
        return Err(PoseError::NoPose);
    }
    let dx = obs.dot_centroid.0 - obs.disk_centroid.0;
    let dy = obs.disk_centroid.1 - obs.dot_centroid.1;
    if dx == 0.0 && dy == 0.0 {
        return Err(PoseError::NoPose);
    }
    let a = dy.atan2(dx).to_degrees();
    Ok(if a <= -180.0 { a + 360.0 } else { a })
}

/// Configured marker detector; shareable across threads.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarkerDetector {
    pub thresholds: MarkerThresholds,
}

impl MarkerDetector {
    pub fn new(thresholds: MarkerThresholds) -> Self {
        Self { thresholds }
    }

    pub fn for_scene(cfg: &SceneConfig) -> Self {
        Self::new(MarkerThresholds::for_scene(cfg))
    }

    pub fn observe(&self, f: &Frame) -> MarkerObservation {
        detect_marker(f, &self.thresholds)
    }
}

/// Per-frame angles with gaps where the marker was not seen.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasuredTrajectory {
    samples: Vec<Option<f64>>,
    fps: f64,
}

impl MeasuredTrajectory {
    pub fn new(samples: Vec<Option<f64>>, fps: f64) -> Self {
        Self { samples, fps }
    }

    pub fn samples(&self) -> &[Option<f64>] {
        &self.samples
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn present(&self) -> Vec<bool> {
        self.samples.iter().map(Option::is_some).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_none()).count()
    }

    /// Bridges missing samples linearly between their nearest measured
    /// neighbours, holding the edge value past either end.
    pub fn filled_linear(&self) -> Result<Trajectory, PoseError> {
        let known: Vec<(usize, f64)> = self
            .samples
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|a| (i, a)))
            .collect();
        if known.is_empty() {
            return Err(PoseError::NothingMeasured);
        }
        let mut out = Vec::with_capacity(self.samples.len());
        let mut k = 0;
        for i in 0..self.samples.len() {
            while k + 1 < known.len() && known[k + 1].0 <= i {
                k += 1;
            }
            let (i0, a0) = known[k];
            let v = if i <= i0 || k + 1 == known.len() {
                a0
            } else {
                let (i1, a1) = known[k + 1];
                a0 + (a1 - a0) * (i - i0) as f64 / (i1 - i0) as f64
            };
            out.push(v);
        }
        Ok(Trajectory::new(out, self.fps, TrajectoryLabel::Measured)?)
    }

    /// Trajectory CSV; frames without a measurement have an empty angle.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,angle_deg,label\n");
        for (i, s) in self.samples.iter().enumerate() {
            match s {
                Some(a) => out.push_str(&format!("{i},{a:.6},Measured\n")),
                None => out.push_str(&format!("{i},,Measured\n")),
            }
        }
        out
    }

    pub fn from_csv(text: &str, fps: f64) -> Result<Self, SceneError> {
        let rows = crate::scene::parse_trajectory_rows(text)?;
        Ok(Self::new(
            rows.into_iter().map(|(_, (_, a, _))| a).collect(),
            fps,
        ))
    }
}

pub fn extract_trajectory(clip: &VideoClip, detector: &MarkerDetector) -> MeasuredTrajectory {
    let samples = clip
        .frames()
        .iter()
        .map(|f| {
            let obs = detector.observe(f);
            obs.present.then_some(obs.angle)
        })
        .collect();
    MeasuredTrajectory::new(samples, clip.fps())
}
