//! Variance schedule of the forward noising process.

use serde::{Deserialize, Serialize};

use super::ReconstructError;

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-3;
pub const DEFAULT_BETA_END: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_cumprod: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, ReconstructError> {
        if betas.is_empty() {
            return Err(ReconstructError::InvalidSchedule("no steps".into()));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(ReconstructError::InvalidSchedule(
                "every beta must lie in (0, 1)".into(),
            ));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(ReconstructError::InvalidSchedule(
                "betas must be non-decreasing".into(),
            ));
        }
        let mut acc = 1.0;
        let alphas_cumprod = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self {
            betas,
            alphas_cumprod,
        })
    }

    /// `steps` betas spaced evenly from `start` to `end` inclusive.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self, ReconstructError> {
        if steps == 0 {
            return Err(ReconstructError::InvalidSchedule("no steps".into()));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    fn check(&self, l: usize) -> Result<usize, ReconstructError> {
        if l == 0 || l > self.steps() {
            return Err(ReconstructError::StepOutOfRange {
                step: l,
                steps: self.steps(),
            });
        }
        Ok(l - 1)
    }

    /// Noise variance added at step `l` (1-based).
    pub fn beta(&self, l: usize) -> Result<f64, ReconstructError> {
        Ok(self.betas[self.check(l)?])
    }

    pub fn alpha(&self, l: usize) -> Result<f64, ReconstructError> {
        Ok(1.0 - self.beta(l)?)
    }

    /// Cumulative signal fraction after `l` steps; `alpha_bar(0)` is 1.
    pub fn alpha_bar(&self, l: usize) -> Result<f64, ReconstructError> {
        if l == 0 {
            return Ok(1.0);
        }
        Ok(self.alphas_cumprod[self.check(l)?])
    }
}

/// Samples the marginal of `l` forward steps in closed form.
pub fn forward_diffuse(
    z0: &[f64],
    l: usize,
    schedule: &NoiseSchedule,
    noise: &[f64],
) -> Result<Vec<f64>, ReconstructError> {
    if z0.len() != noise.len() {
        return Err(ReconstructError::Dimension(format!(
            "latent of {} with noise of {}",
            z0.len(),
            noise.len()
        )));
    }
    schedule.check(l)?;
    let ab = schedule.alpha_bar(l)?;
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0.iter().zip(noise).map(|(z, e)| s * z + n * e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn default_schedule_ends_near_pure_noise() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 100);
        assert!(s.alpha_bar(100).unwrap() < 1e-3);
        assert!(s.alpha_bar(100).unwrap() < s.alpha_bar(1).unwrap());
        assert!((s.beta(1).unwrap() - 1e-3).abs() < 1e-15);
        assert!((s.beta(100).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn schedule_validation() {
        assert!(NoiseSchedule::from_betas(vec![]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.1, 0.05]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0]).is_err());
        assert!(NoiseSchedule::from_betas(vec![1.0]).is_err());
        let s = NoiseSchedule::default();
        assert!(s.beta(0).is_err() && s.beta(101).is_err());
        assert!(forward_diffuse(&[0.0], 0, &s, &[0.0]).is_err());
        assert!(forward_diffuse(&[0.0], 101, &s, &[0.0]).is_err());
    }

    #[test]
    fn first_step_is_near_identity() {
        let s = NoiseSchedule::default();
        let z0 = [0.3, -0.9, 1.0];
        let e = [1.5, -0.2, 0.7];
        let out = forward_diffuse(&z0, 1, &s, &e).unwrap();
        let b = s.beta(1).unwrap();
        for i in 0..3 {
            let slack = (1.0 - (1.0 - b).sqrt()) * z0[i].abs();
            assert!((out[i] - z0[i]).abs() <= b.sqrt() * e[i].abs() + slack + 1e-15);
        }
    }

    #[test]
    fn forward_moments_match_closed_form() {
        let s = NoiseSchedule::default();
        let z0 = [0.5, -0.25];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        for l in [1, 50, 100] {
            let ab = s.alpha_bar(l).unwrap();
            for (d, z) in z0.iter().enumerate() {
                let xs: Vec<f64> = (0..draws)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        let mut noise = [0.0; 2];
                        noise[d] = e;
                        forward_diffuse(&z0, l, &s, &noise).unwrap()[d]
                    })
                    .collect();
                let n = draws as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let (mu, sig2) = (ab.sqrt() * z, 1.0 - ab);
                assert!((mean - mu).abs() <= 3.0 * (sig2 / n).sqrt(), "l={l} mean");
                // variance of a sample variance of a normal: 2 sigma^4 / (n-1)
                assert!((var - sig2).abs() <= 3.0 * (2.0 * sig2 * sig2 / (n - 1.0)).sqrt(), "l={l} var");
            }
        }
    }
}
