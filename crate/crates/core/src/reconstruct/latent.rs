//! Pooled grayscale latent codec.
//!
//! A frame is reduced to a `side x side` grid of block means of its luma,
//! mapped affinely from `[0, 255]` onto `[-1, 1]`. Decoding inverts the map
//! and upsamples bilinearly between block centres.

use std::ops::{Index, IndexMut};

use super::ReconstructError;
use crate::video::{to_grayscale, Frame};

pub const LATENT_SIDE: usize = 16;

/// One frame's latent, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    side: usize,
    values: Vec<f64>,
}

impl Latent {
    pub fn new(side: usize, values: Vec<f64>) -> Result<Self, ReconstructError> {
        if side == 0 || values.len() != side * side {
            return Err(ReconstructError::Dimension(format!(
                "latent of side {side} needs {} values, got {}",
                side * side,
                values.len()
            )));
        }
        Ok(Self { side, values })
    }

    pub fn filled(side: usize, v: f64) -> Self {
        Self {
            side,
            values: vec![v; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl Index<(usize, usize)> for Latent {
    type Output = f64;
    fn index(&self, (x, y): (usize, usize)) -> &f64 {
        &self.values[y * self.side + x]
    }
}

impl IndexMut<(usize, usize)> for Latent {
    fn index_mut(&mut self, (x, y): (usize, usize)) -> &mut f64 {
        &mut self.values[y * self.side + x]
    }
}

/// Per-frame latents of a clip segment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatentSeq {
    pub latents: Vec<Latent>,
}

impl LatentSeq {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentCodec {
    pub side: usize,
    pub width: usize,
    pub height: usize,
}

fn to_unit(v: f64) -> f64 {
    v * 2.0 / 255.0 - 1.0
}

fn from_unit(z: f64) -> f64 {
    (z + 1.0) * 255.0 / 2.0
}

impl LatentCodec {
    pub fn new(side: usize, width: usize, height: usize) -> Result<Self, ReconstructError> {
        if side == 0 || width % side != 0 || height % side != 0 {
            return Err(ReconstructError::Dimension(format!(
                "{width}x{height} frame is not divisible into a {side}x{side} grid"
            )));
        }
        Ok(Self {
            side,
            width,
            height,
        })
    }

    pub fn for_frame(width: usize, height: usize) -> Result<Self, ReconstructError> {
        Self::new(LATENT_SIDE, width, height)
    }

    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn encode(&self, f: &Frame) -> Result<Latent, ReconstructError> {
        if f.width() != self.width || f.height() != self.height {
            return Err(ReconstructError::Dimension(format!(
                "codec for {}x{} given a {}x{} frame",
                self.width,
                self.height,
                f.width(),
                f.height()
            )));
        }
        let g = to_grayscale(f);
        let (bw, bh) = (self.width / self.side, self.height / self.side);
        let mut sums = vec![0u32; self.dim()];
        for y in 0..self.height {
            for x in 0..self.width {
                sums[(y / bh) * self.side + x / bw] += u32::from(g.get(x, y));
            }
        }
        let n = (bw * bh) as f64;
        Latent::new(
            self.side,
            sums.into_iter().map(|s| to_unit(f64::from(s) / n)).collect(),
        )
    }

    pub fn encode_seq(&self, frames: &[Frame]) -> Result<LatentSeq, ReconstructError> {
        Ok(LatentSeq {
            latents: frames.iter().map(|f| self.encode(f)).collect::<Result<_, _>>()?,
        })
    }

    /// Bilinear upsample to intensities in `[0, 255]`, without rounding.
    pub fn decode_intensity(&self, z: &Latent) -> Result<Vec<f64>, ReconstructError> {
        if z.side() != self.side {
            return Err(ReconstructError::Dimension(format!(
                "latent side {} does not match codec side {}",
                z.side(),
                self.side
            )));
        }
        let axis = |n: usize, block: usize| -> Vec<(usize, usize, f64)> {
            (0..n)
                .map(|p| {
                    let c = ((p as f64 + 0.5) / block as f64 - 0.5).clamp(0.0, (self.side - 1) as f64);
                    let i0 = c.floor() as usize;
                    let i1 = (i0 + 1).min(self.side - 1);
                    (i0, i1, c - i0 as f64)
                })
                .collect()
        };
        let xs = axis(self.width, self.width / self.side);
        let ys = axis(self.height, self.height / self.side);
        let mut out = Vec::with_capacity(self.width * self.height);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = z[(x0, y0)] * (1.0 - fx) + z[(x1, y0)] * fx;
                let bot = z[(x0, y1)] * (1.0 - fx) + z[(x1, y1)] * fx;
                out.push(from_unit(top * (1.0 - fy) + bot * fy).clamp(0.0, 255.0));
            }
        }
        Ok(out)
    }

    pub fn decode(&self, z: &Latent) -> Result<Frame, ReconstructError> {
        let px = self.decode_intensity(z)?;
        let mut rgb = Vec::with_capacity(px.len() * 3);
        for v in px {
            let b = v.round() as u8;
            rgb.extend_from_slice(&[b, b, b]);
        }
        Ok(Frame::new(self.width, self.height, rgb)?)
    }

    /// Block means of an unrounded intensity image, mapped to latent units.
    pub fn pool_intensity(&self, px: &[f64]) -> Result<Latent, ReconstructError> {
        if px.len() != self.width * self.height {
            return Err(ReconstructError::Dimension(format!(
                "intensity buffer of {} for {}x{}",
                px.len(),
                self.width,
                self.height
            )));
        }
        let (bw, bh) = (self.width / self.side, self.height / self.side);
        let mut sums = vec![0.0; self.dim()];
        for y in 0..self.height {
            for x in 0..self.width {
                sums[(y / bh) * self.side + x / bw] += px[y * self.width + x];
            }
        }
        let n = (bw * bh) as f64;
        Latent::new(self.side, sums.into_iter().map(|s| to_unit(s / n)).collect())
    }
}
