//! Cosine noise schedule, the closed-form forward process, and deterministic
//! DDIM updates for an x0-predicting denoiser.

use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("diffusion step {step} outside [1, {max}]")]
    StepOutOfRange { step: usize, max: usize },
    #[error("shape mismatch: {left} vs {right} values")]
    ShapeMismatch { left: usize, right: usize },
    #[error("requested {requested} sampling steps but the schedule has {available}")]
    TooManySteps { requested: usize, available: usize },
}

/// `ᾱ_n` for `n = 0..=N`, with `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Squared-cosine schedule with per-step betas capped at 0.999.
    pub fn cosine(steps: usize) -> Self {
        assert!(steps >= 1, "schedule needs at least one step");
        let f = |n: usize| {
            let x = (n as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0);
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut prev_raw = 1.0;
        for n in 1..=steps {
            let raw = f(n) / f0;
            let beta = (1.0 - raw / prev_raw).min(MAX_BETA);
            prev_raw = raw;
            let last = *alpha_bar.last().unwrap();
            alpha_bar.push(last * (1.0 - beta));
        }
        Self { alpha_bar }
    }

    /// Number of diffusion steps `N`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, step: usize) -> f64 {
        self.alpha_bar[step]
    }

    fn check_step(&self, step: usize) -> Result<(), ScheduleError> {
        if (1..=self.steps()).contains(&step) {
            Ok(())
        } else {
            Err(ScheduleError::StepOutOfRange {
                step,
                max: self.steps(),
            })
        }
    }

    /// `X^n = √ᾱ_n X^0 + √(1-ᾱ_n) ε`.
    pub fn forward_noise(&self, x0: &[f64], step: usize, noise: &[f64]) -> Result<Vec<f64>, ScheduleError> {
        self.check_step(step)?;
        if x0.len() != noise.len() {
            return Err(ScheduleError::ShapeMismatch {
                left: x0.len(),
                right: noise.len(),
            });
        }
        let a = self.alpha_bar(step);
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        Ok(x0.iter().zip(noise).map(|(x, e)| sa * x + sn * e).collect())
    }

    /// `k` uniformly strided steps in descending order, always ending the
    /// trajectory at `N`. `k = N` visits every step.
    pub fn ddim_timesteps(&self, k: usize) -> Result<Vec<usize>, ScheduleError> {
        let n = self.steps();
        if k == 0 || k > n {
            return Err(ScheduleError::TooManySteps {
                requested: k,
                available: n,
            });
        }
        Ok((1..=k).rev().map(|i| i * n / k).collect())
    }

    /// One η = 0 DDIM update from step `n` to `prev` (`prev = 0` returns the
    /// clean estimate).
    pub fn ddim_step(&self, xn: &[f64], x0: &[f64], step: usize, prev: usize) -> Vec<f64> {
        let a = self.alpha_bar(step);
        let ap = self.alpha_bar(prev);
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt().max(1e-12));
        let (spa, spn) = (ap.sqrt(), (1.0 - ap).sqrt());
        xn.iter()
            .zip(x0)
            .map(|(x, x0)| {
                let eps = (x - sa * x0) / sn;
                spa * x0 + spn * eps
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn cosine_schedule_invariants() {
        let s = NoiseSchedule::cosine(1000);
        assert_eq!(s.steps(), 1000);
        assert!(s.alpha_bar(0) >= 0.999);
        assert!(s.alpha_bar(1000) <= 1e-3);
        for n in 1..=1000 {
            assert!(s.alpha_bar(n) < s.alpha_bar(n - 1), "step {n}");
        }
        assert!(s.alpha_bar(1) > 0.999);
    }

    #[test]
    fn forward_noise_examples() {
        let s = NoiseSchedule::cosine(1000);
        let x0: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let zero = vec![0.0; 64];
        let xn = s.forward_noise(&x0, 500, &zero).unwrap();
        let sa = s.alpha_bar(500).sqrt();
        for (a, b) in xn.iter().zip(&x0) {
            assert_eq!(*a, sa * b);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise: Vec<f64> = (0..64).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x1 = s.forward_noise(&x0, 1, &noise).unwrap();
        let rms = (x1.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 64.0).sqrt();
        assert!(rms < 0.05);

        assert_eq!(
            s.forward_noise(&x0, 0, &noise),
            Err(ScheduleError::StepOutOfRange { step: 0, max: 1000 })
        );
        assert!(s.forward_noise(&x0, 1001, &noise).is_err());
        assert!(matches!(
            s.forward_noise(&x0, 5, &noise[..10]),
            Err(ScheduleError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn forward_noise_variance_matches_schedule() {
        let s = NoiseSchedule::cosine(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for step in [50, 400, 900] {
            let draws: Vec<f64> = (0..10_000)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    s.forward_noise(&[0.7], step, &[e]).unwrap()[0]
                })
                .collect();
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
            let expected = 1.0 - s.alpha_bar(step);
            assert!((var / expected - 1.0).abs() < 0.05, "step {step}: {var} vs {expected}");
        }
    }

    #[test]
    fn perfect_denoiser_recovers_clean_signal() {
        let s = NoiseSchedule::cosine(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0: Vec<f64> = (0..32).map(|_| StandardNormal.sample(&mut rng)).collect();
        let noise: Vec<f64> = (0..32).map(|_| StandardNormal.sample(&mut rng)).collect();
        let steps = s.ddim_timesteps(20).unwrap();
        let mut x = s.forward_noise(&x0, steps[0], &noise).unwrap();
        for (i, &n) in steps.iter().enumerate() {
            let prev = steps.get(i + 1).copied().unwrap_or(0);
            x = s.ddim_step(&x, &x0, n, prev);
        }
        for (a, b) in x.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn timestep_subsets() {
        let s = NoiseSchedule::cosine(1000);
        let full = s.ddim_timesteps(1000).unwrap();
        assert_eq!(full, (1..=1000).rev().collect::<Vec<_>>());
        let sub = s.ddim_timesteps(50).unwrap();
        assert_eq!(sub.len(), 50);
        assert_eq!(sub[0], 1000);
        assert_eq!(*sub.last().unwrap(), 20);
        assert!(s.ddim_timesteps(1001).is_err());
        assert!(s.ddim_timesteps(0).is_err());
    }
}
