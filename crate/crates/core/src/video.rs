//! Raster primitives shared by the renderer, the anomaly injectors and the
//! frame-difference detector.

pub mod container;

use thiserror::Error;

/// Smallest frame edge accepted by [`Frame`].
pub const MIN_FRAME_DIM: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum VideoError {
    #[error("frame must be at least {MIN_FRAME_DIM}x{MIN_FRAME_DIM}, got {width}x{height}")]
    FrameTooSmall { width: usize, height: usize },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("clip must contain at least one frame")]
    EmptyClip,
    #[error("fps must be finite and positive, got {0}")]
    InvalidFps(f64),
}

/// Row-major RGB24 image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, VideoError> {
        if width < MIN_FRAME_DIM || height < MIN_FRAME_DIM {
            return Err(VideoError::FrameTooSmall { width, height });
        }
        let expected = width * height * 3;
        if pixels.len() != expected {
            return Err(VideoError::BufferLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, VideoError> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Binary PPM (P6), mostly for eyeballing intermediate frames.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Row-major 8-bit luma image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self, VideoError> {
        if values.len() != width * height {
            return Err(VideoError::BufferLength {
                expected: width * height,
                actual: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.values[y * self.width + x] = v;
    }
}

/// Per-pixel boolean selection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, VideoError> {
        if bits.len() != width * height {
            return Err(VideoError::BufferLength {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Ordered frames sharing one size, plus a frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
    fps: f64,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self, VideoError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(VideoError::InvalidFps(fps));
        }
        // stored at container precision so clips survive a .detv round trip
        let fps = f64::from(fps as f32);
        let first = frames.first().ok_or(VideoError::EmptyClip)?;
        let (w, h) = (first.width(), first.height());
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.width() != w || f.height() != h)
        {
            return Err(VideoError::DimensionMismatch(format!(
                "frame {i} is {}x{}, clip is {w}x{h}",
                f.width(),
                f.height()
            )));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false for a constructed clip; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }
}

/// Broadcast luma: round(0.299 R + 0.587 G + 0.114 B).
pub fn luma(rgb: [u8; 3]) -> u8 {
    let y = 0.299 * f64::from(rgb[0]) + 0.587 * f64::from(rgb[1]) + 0.114 * f64::from(rgb[2]);
    y.round().clamp(0.0, 255.0) as u8
}

pub fn to_grayscale(f: &Frame) -> GrayFrame {
    let values = f
        .pixels()
        .chunks_exact(3)
        .map(|p| luma([p[0], p[1], p[2]]))
        .collect();
    GrayFrame {
        width: f.width(),
        height: f.height(),
        values,
    }
}

/// Normalized 1-D Gaussian taps for an odd `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>, VideoError> {
    if size == 0 || size % 2 == 0 {
        return Err(VideoError::InvalidParameter(format!(
            "blur kernel size must be odd and >= 1, got {size}"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(VideoError::InvalidParameter(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let half = (size / 2) as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// Separable Gaussian blur with edge clamping. Intermediate sums stay in
/// floating point; the output is rounded once.
pub fn gaussian_blur(g: &GrayFrame, kernel: usize, sigma: f64) -> Result<GrayFrame, VideoError> {
    let taps = gaussian_kernel(kernel, sigma)?;
    if kernel == 1 {
        return Ok(g.clone());
    }
    let (w, h) = (g.width, g.height);
    let half = (kernel / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut horiz = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &g.values[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sx = clamp(x as isize + k as isize - half, w);
                acc += t * f64::from(row[sx]);
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut values = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sy = clamp(y as isize + k as isize - half, h);
                acc += t * horiz[sy * w + x];
            }
            values[y * w + x] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(GrayFrame {
        width: w,
        height: h,
        values,
    })
}

/// Number of masked pixels whose absolute difference exceeds `threshold`.
pub fn abs_diff_count(
    a: &GrayFrame,
    b: &GrayFrame,
    m: &Mask,
    threshold: u8,
) -> Result<usize, VideoError> {
    if a.width != b.width || a.height != b.height || a.width != m.width || a.height != m.height {
        return Err(VideoError::DimensionMismatch(format!(
            "a={}x{} b={}x{} mask={}x{}",
            a.width, a.height, b.width, b.height, m.width, m.height
        )));
    }
    Ok(a
        .values
        .iter()
        .zip(&b.values)
        .zip(&m.bits)
        .filter(|((pa, pb), on)| **on && pa.abs_diff(**pb) > threshold)
        .count())
}

/// Ring of pixels within `border` of any frame edge.
pub fn make_edge_mask(width: usize, height: usize, border: usize) -> Result<Mask, VideoError> {
    if 2 * border >= width.min(height) {
        return Err(VideoError::InvalidParameter(format!(
            "border {border} leaves no interior in a {width}x{height} frame"
        )));
    }
    let bits = (0..height)
        .flat_map(|y| {
            (0..width).map(move |x| {
                x < border || y < border || x >= width - border || y >= height - border
            })
        })
        .collect();
    Ok(Mask {
        width,
        height,
        bits,
    })
}
