//! Trajectory scores: whole-clip and gap RMSE, spectral shape
//! dissimilarity and junction smoothness.

use std::f64::consts::PI;
use std::fmt;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::Trajectory;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: truth has {truth} samples, test has {test}")]
    LengthMismatch { truth: usize, test: usize },
    #[error("window {start}..={end} outside a sequence of {len}")]
    WindowOutOfRange { start: usize, end: usize, len: usize },
    #[error("need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("gap {start}..={end} is not strictly inside a sequence of {len}")]
    GapNotInterior { start: usize, end: usize, len: usize },
}

fn same_len(truth: &[f64], test: &[f64]) -> Result<(), MetricsError> {
    if truth.len() != test.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            test: test.len(),
        });
    }
    Ok(())
}

/// Root-mean-square difference over the inclusive `window`, or over the
/// whole sequence.
pub fn rmse(truth: &[f64], test: &[f64], window: Option<(usize, usize)>) -> Result<f64, MetricsError> {
    same_len(truth, test)?;
    if truth.is_empty() {
        return Err(MetricsError::TooShort { need: 1, got: 0 });
    }
    let (start, end) = window.unwrap_or((0, truth.len() - 1));
    if start > end || end >= truth.len() {
        return Err(MetricsError::WindowOutOfRange {
            start,
            end,
            len: truth.len(),
        });
    }
    let sum: f64 = truth[start..=end]
        .iter()
        .zip(&test[start..=end])
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((sum / (end - start + 1) as f64).sqrt())
}

fn magnitude_spectrum(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// Spectral shape dissimilarity: `(1 - cos) * 100` between the DFT
/// magnitude spectra. Zero means the same shape up to scale.
pub fn ssi(truth: &[f64], test: &[f64]) -> Result<f64, MetricsError> {
    same_len(truth, test)?;
    if truth.len() < 2 {
        return Err(MetricsError::TooShort {
            need: 2,
            got: truth.len(),
        });
    }
    let (f, g) = (magnitude_spectrum(truth), magnitude_spectrum(test));
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (nf, ng) = (norm(&f), norm(&g));
    match (nf == 0.0, ng == 0.0) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(100.0),
        _ => {}
    }
    let dot: f64 = f.iter().zip(&g).map(|(a, b)| a * b).sum();
    let cos = (dot / (nf * ng)).clamp(-1.0, 1.0);
    Ok((1.0 - cos) * 100.0)
}

/// Three consecutive plot-space points `(frame, degrees)` around a gap
/// endpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Junction {
    pub points: [(f64, f64); 3],
}

impl Junction {
    fn at(series: &[f64], mid: usize) -> Self {
        let p = |i: usize| (i as f64, series[i]);
        Self {
            points: [p(mid - 1), p(mid), p(mid + 1)],
        }
    }

    /// Angle at the middle point, in `[0, π]`. A degenerate edge counts as
    /// straight.
    pub fn interior_angle(&self) -> f64 {
        let [a, b, c] = self.points;
        let u = (a.0 - b.0, a.1 - b.1);
        let v = (c.0 - b.0, c.1 - b.1);
        if (u.0 == 0.0 && u.1 == 0.0) || (v.0 == 0.0 && v.1 == 0.0) {
            return PI;
        }
        let cross = u.0 * v.1 - u.1 * v.0;
        let dot = u.0 * v.0 + u.1 * v.1;
        cross.abs().atan2(dot)
    }
}

/// The junctions at the first and last gap frame of `series`.
pub fn junctions(series: &[f64], gap: (usize, usize)) -> Result<[Junction; 2], MetricsError> {
    let (start, end) = gap;
    if start == 0 || start > end || end + 1 >= series.len() {
        return Err(MetricsError::GapNotInterior {
            start,
            end,
            len: series.len(),
        });
    }
    Ok([Junction::at(series, start), Junction::at(series, end)])
}

/// Endpoint smoothness: `(1 - (α_S + α_E) / 2π) * 100`, zero when both
/// junctions are straight.
pub fn esi(series: &[f64], gap: (usize, usize)) -> Result<f64, MetricsError> {
    let [s, e] = junctions(series, gap)?;
    Ok((1.0 - (s.interior_angle() + e.interior_angle()) / (2.0 * PI)) * 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Entity {
    Human,
    Robot,
    #[serde(rename = "GT-Robot")]
    GtRobot,
}

impl Entity {
    pub const ALL: [Entity; 3] = [Entity::Human, Entity::Robot, Entity::GtRobot];

    pub fn name(self) -> &'static str {
        match self {
            Self::Human => "Human",
            Self::Robot => "Robot",
            Self::GtRobot => "GT-Robot",
        }
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub entity: Entity,
    pub method: String,
    pub rmse: f64,
    pub ssi: f64,
    pub esi: f64,
    pub rmse_gap: f64,
}

pub const REPORT_CSV_HEADER: &str = "scenario,entity,method,rmse_deg,ssi,esi,rmse_gap_deg";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.scenario, self.entity, self.method, self.rmse, self.ssi, self.esi, self.rmse_gap
        )
    }
}

pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let mut out = format!("{REPORT_CSV_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Trajectories scored against the ground truth of one run.
#[derive(Clone, Copy, Debug)]
pub struct RunTrajectories<'a> {
    pub truth: &'a Trajectory,
    /// Reconstructed operator trajectory.
    pub human: &'a Trajectory,
    /// Follower driven by the reconstruction.
    pub robot: &'a Trajectory,
    /// Follower driven by the ground truth.
    pub gt_robot: &'a Trajectory,
}

/// Scores every entity on the whole clip and on `gap`.
pub fn evaluate_run(
    run: RunTrajectories<'_>,
    gap: (usize, usize),
    scenario: &str,
    method: &str,
) -> Result<Vec<MetricsReport>, MetricsError> {
    let truth = run.truth.angles();
    [
        (Entity::Human, run.human),
        (Entity::Robot, run.robot),
        (Entity::GtRobot, run.gt_robot),
    ]
    .into_iter()
    .map(|(entity, t)| {
        let x = t.angles();
        Ok(MetricsReport {
            scenario: scenario.to_owned(),
            entity,
            method: method.to_owned(),
            rmse: rmse(truth, x, None)?,
            ssi: ssi(truth, x)?,
            esi: esi(x, gap)?,
            rmse_gap: rmse(truth, x, Some(gap))?,
        })
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::TrajectoryLabel;
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        let a = [1.0, -2.0, 5.0, 0.5];
        assert_eq!(rmse(&a, &a, None).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|v| v + 3.0).collect();
        assert!((rmse(&a, &shifted, None).unwrap() - 3.0).abs() < 1e-12);
        assert!((rmse(&a, &shifted, Some((1, 2))).unwrap() - 3.0).abs() < 1e-12);
        let r = rmse(&[0.0; 4], &[0.0, 2.0, 0.0, -2.0], None).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rmse_errors() {
        assert!(matches!(
            rmse(&[0.0; 3], &[0.0; 4], None),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(rmse(&[0.0; 3], &[0.0; 3], Some((1, 3))).is_err());
        assert!(rmse(&[0.0; 3], &[0.0; 3], Some((2, 1))).is_err());
        assert!(rmse(&[], &[], None).is_err());
    }

    fn wave(n: usize, k: f64, f: fn(f64) -> f64) -> Vec<f64> {
        (0..n).map(|t| f(2.0 * PI * k * t as f64 / n as f64)).collect()
    }

    #[test]
    fn ssi_examples() {
        let s = wave(64, 3.0, f64::sin);
        assert!(ssi(&s, &s).unwrap().abs() < 1e-9);
        let scaled: Vec<f64> = s.iter().map(|v| 2.5 * v).collect();
        assert!(ssi(&s, &scaled).unwrap().abs() < 1e-9);
        let c = wave(64, 5.0, f64::cos);
        assert!((ssi(&s, &c).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn ssi_zero_spectra() {
        assert_eq!(ssi(&[0.0; 8], &[0.0; 8]).unwrap(), 0.0);
        assert_eq!(ssi(&[0.0; 8], &[1.0; 8]).unwrap(), 100.0);
        assert_eq!(ssi(&[1.0; 8], &[0.0; 8]).unwrap(), 100.0);
        assert!(ssi(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn esi_straight_line_is_zero() {
        let line: Vec<f64> = (0..20).map(|t| 0.7 * t as f64 - 3.0).collect();
        assert!(esi(&line, (5, 12)).unwrap().abs() < 1e-9);
    }

    #[test]
    fn esi_right_angles_give_fifty() {
        // flat into the gap, then a unit-slope ramp; the end mirrors it
        let x = [0.0, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0, 0.0, 0.0];
        let [s, e] = junctions(&x, (2, 6)).unwrap();
        assert!((s.interior_angle() - 3.0 * PI / 4.0).abs() < 1e-12);
        // (1,1),(2,0),(3,1) meet at a right angle
        let y = [1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
        let r = esi(&y, (1, 5)).unwrap();
        assert!((r - 50.0).abs() < 1e-9, "{r}");
        assert!((e.interior_angle() - 3.0 * PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn esi_reversal_tends_to_hundred() {
        let spike = |h: f64| vec![0.0, h, 0.0, 0.0, 0.0, h, 0.0];
        let small = esi(&spike(1e6), (1, 5)).unwrap();
        assert!(small > 99.99 && small <= 100.0);
        assert!(esi(&spike(10.0), (1, 5)).unwrap() < small);
    }

    #[test]
    fn esi_coincident_points_are_straight() {
        let j = Junction {
            points: [(1.0, 2.0), (1.0, 2.0), (3.0, 0.0)],
        };
        assert_eq!(j.interior_angle(), PI);
    }

    #[test]
    fn esi_gap_must_be_interior() {
        let x = [0.0; 6];
        assert!(esi(&x, (0, 2)).is_err());
        assert!(esi(&x, (2, 5)).is_err());
        assert!(esi(&x, (3, 2)).is_err());
        assert!(esi(&x, (1, 4)).is_ok());
    }

    fn traj(v: Vec<f64>) -> Trajectory {
        Trajectory::new(v, 30.0, TrajectoryLabel::Reconstructed).unwrap()
    }

    #[test]
    fn evaluate_run_shape_and_identity() {
        let truth = traj((0..30).map(|t| (t as f64 * 0.3).sin() * 10.0).collect());
        let off = traj(truth.angles().iter().map(|v| v + 1.0).collect());
        let run = RunTrajectories {
            truth: &truth,
            human: &truth,
            robot: &off,
            gt_robot: &truth,
        };
        let rows = evaluate_run(run, (10, 19), "s", "Spline").unwrap();
        assert_eq!(rows.len(), 3);
        let human = &rows[0];
        assert_eq!(human.entity, Entity::Human);
        assert_eq!((human.rmse, human.ssi, human.rmse_gap), (0.0, 0.0, 0.0));
        assert!((rows[1].rmse - 1.0).abs() < 1e-12);
        let csv = reports_to_csv(&rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with(REPORT_CSV_HEADER));
        assert!(csv.contains(",GT-Robot,Spline,"));
    }

    proptest! {
        #[test]
        fn rmse_is_a_metric(
            v in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 1..40)
        ) {
            let a: Vec<f64> = v.iter().map(|t| t.0).collect();
            let b: Vec<f64> = v.iter().map(|t| t.1).collect();
            let c: Vec<f64> = v.iter().map(|t| t.2).collect();
            let ab = rmse(&a, &b, None).unwrap();
            prop_assert!((ab - rmse(&b, &a, None).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= rmse(&a, &c, None).unwrap() + rmse(&c, &b, None).unwrap() + 1e-9);
            prop_assert_eq!(rmse(&a, &a, None).unwrap(), 0.0);
            if a != b {
                prop_assert!(ab > 0.0);
            }
        }

        #[test]
        fn ssi_scale_and_shift_invariant(
            v in prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 2..48),
            scale in 0.1f64..10.0,
            shift in 0usize..48,
        ) {
            let a: Vec<f64> = v.iter().map(|t| t.0).collect();
            let b: Vec<f64> = v.iter().map(|t| t.1).collect();
            let base = ssi(&a, &b).unwrap();
            let scaled: Vec<f64> = b.iter().map(|x| x * scale).collect();
            prop_assert!((ssi(&a, &scaled).unwrap() - base).abs() < 1e-7);
            let n = a.len();
            let rot = |x: &[f64]| (0..n).map(|i| x[(i + shift) % n]).collect::<Vec<_>>();
            prop_assert!((ssi(&rot(&a), &rot(&b)).unwrap() - base).abs() < 1e-7);
            prop_assert!((0.0..=200.0).contains(&base));
        }

        #[test]
        fn esi_offset_and_translation_invariant(
            v in prop::collection::vec(-30.0f64..30.0, 12..40),
            offset in -50.0f64..50.0,
            pad in 0usize..5,
        ) {
            let gap = (3, v.len() - 4);
            let base = esi(&v, gap).unwrap();
            prop_assert!((0.0..=100.0).contains(&base));
            let up: Vec<f64> = v.iter().map(|x| x + offset).collect();
            prop_assert!((esi(&up, gap).unwrap() - base).abs() < 1e-9);
            let mut moved = vec![0.0; pad];
            moved.extend_from_slice(&v);
            prop_assert!((esi(&moved, (gap.0 + pad, gap.1 + pad)).unwrap() - base).abs() < 1e-9);
        }
    }
}
