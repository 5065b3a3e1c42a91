//! Discrete variance-preserving noise schedules.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{DasError, Result};

/// Length of the reference schedule that linear beta ranges are defined on.
/// Shorter sampling schedules take every k-th point of it.
pub const REFERENCE_STEPS: usize = 1000;

/// Configuration keys of a linear schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 100, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// DDPM schedule indexed by diffusion time `t = 0..=T`.
///
/// `beta(t)`, `sigma(t)` are defined for `1 ≤ t ≤ T`; `alpha_bar(0) = 1`.
/// The reverse-kernel variance is the DDPM posterior variance
/// `β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`, which vanishes at `t = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_start` to `beta_end` over a reference schedule of
    /// `max(REFERENCE_STEPS, steps)` points, subsampled to `steps` sampling steps.
    /// With `steps == REFERENCE_STEPS` this is the plain linear schedule.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(DasError::Input("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(DasError::Input(format!(
                "linear schedule needs 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let reference = REFERENCE_STEPS.max(steps);
        let mut cumulative = Vec::with_capacity(reference + 1);
        cumulative.push(1.0);
        let mut ab = 1.0;
        for i in 0..reference {
            let frac = if reference == 1 { 0.0 } else { i as f64 / (reference - 1) as f64 };
            ab *= 1.0 - (beta_start + (beta_end - beta_start) * frac);
            cumulative.push(ab);
        }
        let alpha_bars: Vec<f64> = (0..=steps)
            .map(|t| {
                let idx = ((t * reference) as f64 / steps as f64).round() as usize;
                cumulative[idx]
            })
            .collect();
        Self::from_alpha_bars(alpha_bars)
    }

    /// Schedule with the given per-step betas (`betas[t-1] = β_t`).
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut ab = 1.0;
        for &b in betas {
            if !(b > 0.0 && b < 1.0) {
                return Err(DasError::Input(format!("beta must lie in (0, 1), got {b}")));
            }
            ab *= 1.0 - b;
            alpha_bars.push(ab);
        }
        let mut s = Self::from_alpha_bars(alpha_bars)?;
        // keep the exact betas rather than the ratio-recovered ones
        s.betas = betas.to_vec();
        s.sigmas = Self::posterior_sigmas(&s.betas, &s.alpha_bars);
        Ok(s)
    }

    fn from_alpha_bars(alpha_bars: Vec<f64>) -> Result<Self> {
        if alpha_bars.len() < 2 || alpha_bars[0] != 1.0 {
            return Err(DasError::Input("alpha_bar sequence must start at 1".into()));
        }
        let betas: Vec<f64> = alpha_bars.windows(2).map(|w| 1.0 - w[1] / w[0]).collect();
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(DasError::Input(format!("alpha_bar must be strictly decreasing (beta = {b})")));
        }
        let sigmas = Self::posterior_sigmas(&betas, &alpha_bars);
        Ok(Self { betas, alpha_bars, sigmas })
    }

    fn posterior_sigmas(betas: &[f64], alpha_bars: &[f64]) -> Vec<f64> {
        betas
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let t = i + 1;
                (b * (1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t])).sqrt()
            })
            .collect()
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Reverse-kernel standard deviation σ_t.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn check_time(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(DasError::TimeRange { t, max: self.steps() });
        }
        Ok(())
    }

    pub(crate) fn check_reverse_time(&self, t: usize) -> Result<()> {
        if t == 0 {
            return Err(DasError::Input("no reverse step from t = 0".into()));
        }
        self.check_time(t)
    }

    /// Debug dump: `t,beta,alpha_bar,sigma`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,beta,alpha_bar,sigma\n");
        for t in 1..=self.steps() {
            let _ = writeln!(out, "{t},{},{},{}", self.beta(t), self.alpha_bar(t), self.sigma(t));
        }
        out
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        ScheduleConfig::default().build().expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_invariants() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 100);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bar(100) < 1e-3);
        let mut prod = 1.0;
        for t in 1..=100 {
            let b = s.beta(t);
            assert!(b > 0.0 && b < 1.0);
            prod *= 1.0 - b;
            assert!((prod - s.alpha_bar(t)).abs() < 1e-12);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            let tilde = b * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
            assert!((s.sigma(t).powi(2) - tilde).abs() < 1e-15);
        }
        assert_eq!(s.sigma(1), 0.0);
    }

    #[test]
    fn full_length_schedule_is_plain_linear() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        assert!((s.beta(1) - 1e-4).abs() < 1e-12);
        assert!((s.beta(1000) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn strided_schedule_matches_reference_points() {
        let full = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let short = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        for t in 0..=100 {
            assert!((short.alpha_bar(t) - full.alpha_bar(10 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_betas() {
        assert!(NoiseSchedule::from_betas(&[0.1, 1.0]).is_err());
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 0.01).is_err());
    }

    #[test]
    fn csv_dump_has_one_row_per_step() {
        let s = NoiseSchedule::linear(5, 1e-4, 0.02).unwrap();
        assert_eq!(s.to_csv().lines().count(), 6);
    }
}
