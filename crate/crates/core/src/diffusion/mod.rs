//! Conditional diffusion over flat two-hand state vectors.
//!
//! The network regresses the clean sample directly; sampling is
//! deterministic DDIM (η = 0) over a strided subsequence of the schedule,
//! optionally nudging each clean-sample estimate down the collision loss.

mod guidance;
mod model;
mod train;

pub use guidance::{
    guided_sample, initial_noise, sample, unguided_sample, GuidanceConfig, GuidanceObjective, SampleOutput,
    SamplerContext, StepLog, DEFAULT_LAMBDA,
};
pub use model::{DenoiserConfig, TransformerDenoiser, STATE_TOKENS, TOKENS};
pub use train::{fit_normalizer, train_diffusion, train_step, TrainBatch, TrainConfig, STD_FLOOR};

use crate::error::{CoreError, Result};
use crate::state::StateVector;

/// Offset `s` of the cosine profile.
pub const COSINE_OFFSET: f64 = 0.008;
/// Per-step noise variance cap; keeps the last step finite.
pub const MAX_BETA: f64 = 0.999;

/// Cumulative signal coefficients `ᾱ_0 = 1, …, ᾱ_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule. Per-step betas `1 − f(t)/f(t−1)` are clipped at
    /// [`MAX_BETA`] and the cumulative product is rebuilt from them.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(CoreError::InvalidParams(format!("schedule needs T >= 2, got {steps}")));
        }
        let f = |t: usize| {
            let u = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
            (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut prev = f(0);
        let mut acc = 1.0;
        for t in 1..=steps {
            let cur = f(t);
            let beta = (1.0 - cur / prev).min(MAX_BETA);
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
            prev = cur;
        }
        Ok(Self { alpha_bar })
    }

    /// `T`, the number of noising steps.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(CoreError::InvalidParams(format!(
                "timestep {t} outside [0, {}]",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·noise`. `t = 0` is accepted and returns `x0`.
pub fn q_sample(x0: &[f64], t: usize, noise: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check(t)?;
    if x0.len() != noise.len() {
        return Err(CoreError::Shape(format!("x0 has {} values, noise {}", x0.len(), noise.len())));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(x, n)| a * x + b * n).collect())
}

/// Descending DDIM timesteps `T, T − k, …` with stride `k = T / steps`.
/// The transition after the last entry goes to `t = 0`.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(CoreError::InvalidParams(format!(
            "ddim steps must be in [1, {total}], got {steps}"
        )));
    }
    let stride = total / steps;
    Ok((0..steps).map(|i| total - i * stride).collect())
}

/// Deterministic DDIM transition from `t` to `t_prev < t` given the clean
/// estimate.
pub fn ddim_step(x_t: &[f64], x0_hat: &[f64], t: usize, t_prev: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (pa, pn) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    x_t.iter()
        .zip(x0_hat)
        .map(|(&x, &x0)| {
            let eps = (x - sa * x0) / sn;
            pa * x0 + pn * eps
        })
        .collect()
}

/// Clean-sample predictor in normalized state coordinates.
pub trait Denoiser: Sync {
    fn predict(&self, x_t: &StateVector, t: usize, cond: &StateVector) -> Result<StateVector>;
}

/// Returns a fixed clean sample; the DDIM fixed point.
pub struct OracleDenoiser(pub StateVector);

impl Denoiser for OracleDenoiser {
    fn predict(&self, _x_t: &StateVector, _t: usize, _cond: &StateVector) -> Result<StateVector> {
        Ok(self.0)
    }
}

/// Returns its conditioning input.
pub struct CopyCondition;

impl Denoiser for CopyCondition {
    fn predict(&self, _x_t: &StateVector, _t: usize, cond: &StateVector) -> Result<StateVector> {
        Ok(*cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_rejects_short_horizon() {
        assert!(NoiseSchedule::cosine(1).is_err());
        assert!(NoiseSchedule::cosine(2).is_ok());
    }

    #[test]
    fn timesteps_are_strided() {
        let ts = ddim_timesteps(1000, 50).unwrap();
        assert_eq!(ts.len(), 50);
        assert_eq!(ts[0], 1000);
        assert_eq!(ts[1], 980);
        assert_eq!(*ts.last().unwrap(), 20);
        assert!(ddim_timesteps(10, 11).is_err());
    }

    #[test]
    fn q_sample_checks_range_and_shape() {
        let s = NoiseSchedule::cosine(10).unwrap();
        assert!(q_sample(&[1.0], 11, &[0.0], &s).is_err());
        assert!(q_sample(&[1.0], 3, &[0.0, 1.0], &s).is_err());
        assert_eq!(q_sample(&[1.5], 0, &[7.0], &s).unwrap(), vec![1.5]);
    }

    #[test]
    fn ddim_step_to_zero_returns_estimate() {
        let s = NoiseSchedule::cosine(100).unwrap();
        let out = ddim_step(&[0.3, -2.0], &[1.25, 0.5], 40, 0, &s);
        assert_eq!(out, vec![1.25, 0.5]);
    }
}
