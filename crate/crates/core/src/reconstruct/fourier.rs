//! Low-pass Fourier gap fill.
//!
//! The known samples on both sides of the gap are concatenated into one
//! sequence of length `n`, transformed, and truncated to the `keep` lowest
//! frequencies. The truncated series is then stretched over the full clip
//! (index `t` of `total` maps to `t * n / total`) and read off at the gap.

use rustfft::{num_complex::Complex, FftPlanner};

use super::{GapProblem, ReconstructError};
use crate::scene::{Trajectory, TrajectoryLabel};

pub const DEFAULT_KEEP: usize = 8;

/// Truncated real Fourier series of a sampled sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LowPassSeries {
    len: usize,
    /// Bins `0..keep` of the forward DFT.
    bins: Vec<Complex<f64>>,
}

impl LowPassSeries {
    pub fn fit(samples: &[f64], keep: usize) -> Result<Self, ReconstructError> {
        if keep == 0 {
            return Err(ReconstructError::InvalidProblem("keep must be >= 1".into()));
        }
        if samples.len() < 2 * keep {
            return Err(ReconstructError::InvalidProblem(format!(
                "{} known samples cannot support {keep} frequencies",
                samples.len()
            )));
        }
        let mut buf: Vec<Complex<f64>> = samples.iter().map(|v| Complex::new(*v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        buf.truncate(keep);
        Ok(Self {
            len: samples.len(),
            bins: buf,
        })
    }

    /// Series value at (fractional) sample position `s`.
    pub fn eval(&self, s: f64) -> f64 {
        let n = self.len as f64;
        let mut acc = self.bins[0].re;
        for (k, f) in self.bins.iter().enumerate().skip(1) {
            let phase = std::f64::consts::TAU * k as f64 * s / n;
            acc += 2.0 * (f * Complex::from_polar(1.0, phase)).re;
        }
        acc / n
    }
}

pub fn fft_fill(p: &GapProblem, keep: usize) -> Result<Trajectory, ReconstructError> {
    let Some((start, end)) = p.gap() else {
        return p.passthrough();
    };
    let known: Vec<f64> = p.known().map(|(_, v)| v).collect();
    let series = LowPassSeries::fit(&known, keep)?;
    let scale = known.len() as f64 / p.series().len() as f64;
    let mut out = p.series().to_vec();
    for (t, v) in out.iter_mut().enumerate().take(end + 1).skip(start) {
        *v = series.eval(t as f64 * scale);
    }
    Ok(Trajectory::new(out, p.fps(), TrajectoryLabel::Reconstructed)?)
}
