//! Frame-difference intrusion detection and clip segmentation.
//!
//! Every frame is blurred to grayscale and compared with the first frame
//! over a border band. A frame is flagged when too many border pixels
//! changed, or when the region of interest has been missing for `roi_loss`
//! consecutive frames.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::MarkerDetector;
use crate::video::{
    abs_diff_count, gaussian_blur, make_edge_mask, to_grayscale, Frame, GrayFrame, VideoClip,
    VideoError,
};

/// Reference resolution the default thresholds were tuned for.
pub const REFERENCE_SIDE: usize = 720;

#[derive(Debug, Error)]
pub enum FddError {
    #[error("clip has {0} frames; detection needs at least 2")]
    ClipTooShort(usize),
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
    #[error("interval ({start},{end}) invalid for a clip of {len} frames")]
    InvalidInterval { start: usize, end: usize, len: usize },
    #[error("no clean context on one side of ({start},{end})")]
    NoCleanContext { start: usize, end: usize },
    #[error(transparent)]
    Video(#[from] VideoError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FddParams {
    /// Border band width in pixels.
    pub border: usize,
    /// Per-pixel intensity change that counts as a difference.
    pub diff_threshold: u8,
    /// A frame is an intrusion when more than this many border pixels change.
    pub pixel_count_threshold: usize,
    /// Consecutive ROI misses that count as an anomaly.
    pub roi_loss: usize,
    pub blur_kernel: usize,
    pub blur_sigma: f64,
}

impl Default for FddParams {
    /// Thresholds at the 720x720 reference resolution.
    fn default() -> Self {
        Self {
            border: 50,
            diff_threshold: 100,
            pixel_count_threshold: 1000,
            roi_loss: 3,
            blur_kernel: 5,
            blur_sigma: 1.0,
        }
    }
}

impl FddParams {
    /// Reference thresholds rescaled so the band and the count threshold
    /// keep the same proportion of the frame.
    pub fn for_resolution(width: usize, height: usize) -> Self {
        let base = Self::default();
        let r = REFERENCE_SIDE as f64;
        Self {
            border: ((base.border as f64 * width as f64 / r).round() as usize).max(1),
            pixel_count_threshold: ((base.pixel_count_threshold as f64 * (width * height) as f64
                / (r * r))
                .round() as usize)
                .max(1),
            ..base
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), FddError> {
        let bad = |m: String| Err(FddError::InvalidParams(m));
        if self.border == 0 || 2 * self.border >= width.min(height) {
            return bad(format!("border {} for {width}x{height}", self.border));
        }
        if self.diff_threshold == 0 || self.pixel_count_threshold == 0 || self.roi_loss == 0 {
            return bad("thresholds must be positive".into());
        }
        if self.blur_kernel == 0 || self.blur_kernel % 2 == 0 {
            return bad(format!("blur kernel {} must be odd", self.blur_kernel));
        }
        if !(self.blur_sigma > 0.0 && self.blur_sigma.is_finite()) {
            return bad(format!("blur sigma {}", self.blur_sigma));
        }
        Ok(())
    }
}

/// Anything that can tell whether the tracked region is visible in a frame.
pub trait RoiDetector: Sync {
    fn roi_present(&self, frame: &Frame) -> bool;
}

impl RoiDetector for MarkerDetector {
    fn roi_present(&self, frame: &Frame) -> bool {
        self.observe(frame).present
    }
}

impl<F: Fn(&Frame) -> bool + Sync> RoiDetector for F {
    fn roi_present(&self, frame: &Frame) -> bool {
        self(frame)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub edge_diff_count: usize,
    pub roi_present: bool,
    pub edge_flag: bool,
    pub roi_flag: bool,
}

impl FrameDiagnostics {
    pub fn flagged(&self) -> bool {
        self.edge_flag || self.roi_flag
    }
}

/// Per-frame detector output for a whole clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub frames: Vec<FrameDiagnostics>,
}

impl Diagnostics {
    pub fn flags(&self) -> Vec<bool> {
        self.frames.iter().map(FrameDiagnostics::flagged).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,edge_diff_count,roi_present,flagged\n");
        for (i, d) in self.frames.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{},{},{}",
                d.edge_diff_count,
                u8::from(d.roi_present),
                u8::from(d.flagged())
            );
        }
        s
    }

    pub fn interval(&self) -> Option<AnomalyInterval> {
        let flags = self.flags();
        let start = flags.iter().position(|f| *f)?;
        let end = flags.iter().rposition(|f| *f)?;
        Some(AnomalyInterval {
            start,
            end,
            flags,
            diagnostics: self.frames.clone(),
        })
    }
}

/// Detected anomaly: first and last flagged frame plus the per-frame record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyInterval {
    pub start: usize,
    pub end: usize,
    pub flags: Vec<bool>,
    pub diagnostics: Vec<FrameDiagnostics>,
}

impl AnomalyInterval {
    /// An interval with no diagnostics attached, e.g. from a known window.
    pub fn from_bounds(start: usize, end: usize, len: usize) -> Result<Self, FddError> {
        if start > end || end >= len {
            return Err(FddError::InvalidInterval { start, end, len });
        }
        Ok(Self {
            start,
            end,
            flags: (0..len).map(|i| (start..=end).contains(&i)).collect(),
            diagnostics: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_csv(&self) -> String {
        Diagnostics {
            frames: self.diagnostics.clone(),
        }
        .to_csv()
    }
}

fn blurred(f: &Frame, p: &FddParams) -> Result<GrayFrame, VideoError> {
    gaussian_blur(&to_grayscale(f), p.blur_kernel, p.blur_sigma)
}

/// Runs the detector over every frame and returns the raw diagnostics,
/// whether or not anything was flagged.
pub fn diagnose(
    clip: &VideoClip,
    params: &FddParams,
    roi: &dyn RoiDetector,
) -> Result<Diagnostics, FddError> {
    if clip.len() < 2 {
        return Err(FddError::ClipTooShort(clip.len()));
    }
    params.validate(clip.width(), clip.height())?;
    let mask = make_edge_mask(clip.width(), clip.height(), params.border)?;
    let baseline = blurred(&clip.frames()[0], params)?;

    let raw = clip
        .frames()
        .par_iter()
        .map(|f| -> Result<(usize, bool), FddError> {
            let g = blurred(f, params)?;
            let d = abs_diff_count(&g, &baseline, &mask, params.diff_threshold)?;
            Ok((d, roi.roi_present(f)))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut frames: Vec<FrameDiagnostics> = raw
        .iter()
        .map(|&(d, present)| FrameDiagnostics {
            edge_diff_count: d,
            roi_present: present,
            edge_flag: d > params.pixel_count_threshold,
            roi_flag: false,
        })
        .collect();

    // ROI loss: once `k` consecutive misses are seen, mark the whole run.
    let k = params.roi_loss;
    let mut run = 0usize;
    for i in 0..frames.len() {
        if frames[i].roi_present {
            run = 0;
            continue;
        }
        run += 1;
        if run == k {
            for f in &mut frames[i + 1 - k..=i] {
                f.roi_flag = true;
            }
        } else if run > k {
            frames[i].roi_flag = true;
        }
    }
    Ok(Diagnostics { frames })
}

/// Returns the span from the first to the last flagged frame, or `None` for
/// a clean clip.
pub fn detect(
    clip: &VideoClip,
    params: &FddParams,
    roi: &dyn RoiDetector,
) -> Result<Option<AnomalyInterval>, FddError> {
    Ok(diagnose(clip, params, roi)?.interval())
}

/// Splits the clip around the interval, dropping `[start, end]`.
pub fn segment(
    clip: &VideoClip,
    interval: &AnomalyInterval,
) -> Result<(VideoClip, VideoClip), FddError> {
    let (start, end, len) = (interval.start, interval.end, clip.len());
    if start > end || end >= len {
        return Err(FddError::InvalidInterval { start, end, len });
    }
    if start == 0 || end == len - 1 {
        return Err(FddError::NoCleanContext { start, end });
    }
    let before = VideoClip::new(clip.frames()[..start].to_vec(), clip.fps())?;
    let after = VideoClip::new(clip.frames()[end + 1..].to_vec(), clip.fps())?;
    Ok((before, after))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::{inject, AnomalyKind, AnomalySpec, Window};
    use crate::scene::{gen_sinusoid, synth_video, SceneConfig};
    use proptest::prelude::*;

    fn setup() -> (SceneConfig, crate::scene::Trajectory, VideoClip, FddParams, MarkerDetector) {
        let cfg = SceneConfig::default();
        let t = gen_sinusoid(150, 20.0, 0.01).unwrap();
        let clip = synth_video(&cfg, &t).unwrap();
        let p = FddParams::for_resolution(cfg.width, cfg.height);
        (cfg.clone(), t, clip, p, MarkerDetector::for_scene(&cfg))
    }

    #[test]
    fn rescaled_params_at_desk_size() {
        let p = FddParams::for_resolution(128, 128);
        assert_eq!(p.border, 9);
        assert_eq!(p.pixel_count_threshold, 32);
        assert_eq!(p.diff_threshold, 100);
        assert_eq!(p.roi_loss, 3);
        assert_eq!(FddParams::for_resolution(720, 720), FddParams::default());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = FddParams::for_resolution(128, 128);
        p.border = 64;
        assert!(p.validate(128, 128).is_err());
        let mut p = FddParams::for_resolution(128, 128);
        p.blur_kernel = 4;
        assert!(p.validate(128, 128).is_err());
    }

    #[test]
    fn short_clip_is_an_error() {
        let (_, _, clip, p, det) = setup();
        let one = VideoClip::new(vec![clip.frames()[0].clone()], 30.0).unwrap();
        assert!(matches!(detect(&one, &p, &det), Err(FddError::ClipTooShort(1))));
    }

    #[test]
    fn clean_clip_has_no_interval() {
        let (_, _, clip, p, det) = setup();
        assert!(detect(&clip, &p, &det).unwrap().is_none());
    }

    #[test]
    fn roi_loss_marks_whole_run_retroactively() {
        let (_, _, clip, p, _) = setup();
        let roi = |f: &Frame| f.pixel(0, 0) != [1, 2, 3];
        let mut frames = clip.frames().to_vec();
        for f in &mut frames[40..45] {
            f.set_pixel(0, 0, [1, 2, 3]);
        }
        // a two-frame dropout is below k and must not flag anything
        for f in &mut frames[100..102] {
            f.set_pixel(0, 0, [1, 2, 3]);
        }
        let c = VideoClip::new(frames, 30.0).unwrap();
        let iv = detect(&c, &p, &roi).unwrap().unwrap();
        assert_eq!((iv.start, iv.end), (40, 44));
        assert!(iv.diagnostics.iter().all(|d| !d.edge_flag));
    }

    #[test]
    fn occlusion_found_by_edges() {
        let (cfg, t, clip, p, det) = setup();
        let spec = AnomalySpec::new(AnomalyKind::Occlusion, Window::new(60, 90), 0);
        let bad = inject(&clip, &spec, Some(&cfg), Some(&t)).unwrap();
        let iv = detect(&bad, &p, &det).unwrap().unwrap();
        assert!((57..=63).contains(&iv.start), "{}", iv.start);
        assert!((87..=93).contains(&iv.end), "{}", iv.end);
        assert!(iv.diagnostics.iter().any(|d| d.edge_flag));
    }

    #[test]
    fn lighting_found_by_roi_loss_only() {
        let (cfg, t, clip, p, det) = setup();
        let spec = AnomalySpec::new(AnomalyKind::LightingChange, Window::new(60, 90), 0);
        let bad = inject(&clip, &spec, Some(&cfg), Some(&t)).unwrap();
        let iv = detect(&bad, &p, &det).unwrap().unwrap();
        assert!(iv
            .diagnostics
            .iter()
            .all(|d| d.edge_diff_count <= p.pixel_count_threshold));
        assert!((57..=63).contains(&iv.start) && (87..=93).contains(&iv.end));
    }

    #[test]
    fn diagnostics_csv_shape() {
        let (_, _, clip, p, det) = setup();
        let d = diagnose(&clip, &p, &det).unwrap();
        let csv = d.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "frame,edge_diff_count,roi_present,flagged");
        assert_eq!(lines.len(), 151);
        assert_eq!(lines[1], "0,0,1,0");
    }

    #[test]
    fn segment_sizes() {
        let (_, _, clip, _, _) = setup();
        for (s, e, a, b) in [(60, 90, 60, 59), (68, 83, 68, 66)] {
            let iv = AnomalyInterval::from_bounds(s, e, 150).unwrap();
            let (ca, cb) = segment(&clip, &iv).unwrap();
            assert_eq!((ca.len(), cb.len()), (a, b));
            let mut joined = ca.frames().to_vec();
            joined.extend_from_slice(&clip.frames()[s..=e]);
            joined.extend_from_slice(cb.frames());
            assert_eq!(joined, clip.frames());
        }
        for (s, e) in [(0, 10), (140, 149)] {
            let iv = AnomalyInterval::from_bounds(s, e, 150).unwrap();
            assert!(matches!(
                segment(&clip, &iv),
                Err(FddError::NoCleanContext { .. })
            ));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn raising_count_threshold_never_adds_edge_flags(
            start in 20usize..100, len in 8usize..40, bump in 1usize..500,
        ) {
            let (cfg, t, clip, p, det) = setup();
            let w = Window::new(start, (start + len).min(148));
            let bad = inject(&clip, &AnomalySpec::new(AnomalyKind::Occlusion, w, 0), Some(&cfg), Some(&t)).unwrap();
            let lo = diagnose(&bad, &p, &det).unwrap();
            let mut p2 = p.clone();
            p2.pixel_count_threshold += bump;
            let hi = diagnose(&bad, &p2, &det).unwrap();
            for (a, b) in lo.frames.iter().zip(&hi.frames) {
                prop_assert!(!b.edge_flag || a.edge_flag);
            }
        }
    }
}
