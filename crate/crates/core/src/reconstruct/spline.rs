//! Natural cubic spline through irregularly spaced knots.

use super::{GapProblem, ReconstructError};
use crate::scene::{Trajectory, TrajectoryLabel};

#[derive(Clone, Debug, PartialEq)]
pub struct NaturalSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivative at each knot; zero at both ends.
    m: Vec<f64>,
}

impl NaturalSpline {
    /// Fits through `(xs[i], ys[i])`. `xs` must be strictly increasing and
    /// hold at least two knots.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Result<Self, ReconstructError> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(ReconstructError::InvalidProblem(format!(
                "spline needs >= 2 matching knots, got {} x and {} y",
                xs.len(),
                ys.len()
            )));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ReconstructError::InvalidProblem(
                "spline knots must be strictly increasing".into(),
            ));
        }
        let n = xs.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
            // Thomas algorithm on the interior unknowns m[1..n-1]
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for j in 0..k {
                let i = j + 1;
                diag[j] = 2.0 * (h[i - 1] + h[i]);
                upper[j] = h[i];
                rhs[j] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
            }
            for j in 1..k {
                let lower = h[j];
                let w = lower / diag[j - 1];
                diag[j] -= w * upper[j - 1];
                rhs[j] -= w * rhs[j - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for j in (0..k - 1).rev() {
                m[j + 1] = (rhs[j] - upper[j] * m[j + 2]) / diag[j];
            }
        }
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    pub fn second_derivatives(&self) -> &[f64] {
        &self.m
    }

    fn segment_of(&self, x: f64) -> usize {
        let i = self.xs.partition_point(|k| *k <= x);
        i.saturating_sub(1).min(self.xs.len() - 2)
    }

    /// Value, slope and curvature of segment `seg` (between knots `seg` and
    /// `seg + 1`) evaluated at `x`, possibly outside the segment.
    pub fn eval_segment(&self, seg: usize, x: f64) -> [f64; 3] {
        let (x0, x1) = (self.xs[seg], self.xs[seg + 1]);
        let (y0, y1) = (self.ys[seg], self.ys[seg + 1]);
        let (m0, m1) = (self.m[seg], self.m[seg + 1]);
        let h = x1 - x0;
        let (a, b) = (x1 - x, x - x0);
        let v = m0 * a.powi(3) / (6.0 * h)
            + m1 * b.powi(3) / (6.0 * h)
            + (y0 / h - m0 * h / 6.0) * a
            + (y1 / h - m1 * h / 6.0) * b;
        let d = -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - (y0 / h - m0 * h / 6.0)
            + (y1 / h - m1 * h / 6.0);
        let dd = (m0 * a + m1 * b) / h;
        [v, d, dd]
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_segment(self.segment_of(x), x)[0]
    }
}

/// Result of a spline fill. `linear_fallback` is set when too few knots
/// were available for a cubic and the gap was bridged linearly.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineFill {
    pub trajectory: Trajectory,
    pub linear_fallback: bool,
}

pub fn spline_fill(p: &GapProblem) -> Result<SplineFill, ReconstructError> {
    let Some((start, end)) = p.gap() else {
        return Ok(SplineFill {
            trajectory: p.passthrough()?,
            linear_fallback: false,
        });
    };
    let (xs, ys): (Vec<f64>, Vec<f64>) = p.known().map(|(t, v)| (t as f64, v)).unzip();
    let linear_fallback = xs.len() < 4;
    let mut out = p.series().to_vec();
    if linear_fallback {
        let (x0, y0) = (start as f64 - 1.0, p.series()[start - 1]);
        let (x1, y1) = (end as f64 + 1.0, p.series()[end + 1]);
        for (t, v) in out.iter_mut().enumerate().take(end + 1).skip(start) {
            *v = y0 + (y1 - y0) * (t as f64 - x0) / (x1 - x0);
        }
    } else {
        let s = NaturalSpline::fit(&xs, &ys)?;
        for (t, v) in out.iter_mut().enumerate().take(end + 1).skip(start) {
            *v = s.eval(t as f64);
        }
    }
    Ok(SplineFill {
        trajectory: Trajectory::new(out, p.fps(), TrajectoryLabel::Reconstructed)?,
        linear_fallback,
    })
}
