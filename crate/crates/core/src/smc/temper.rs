use serde::{Deserialize, Serialize};

use crate::error::{DasError, Result};

/// Inverse temperatures `λ_t` indexed by diffusion time `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperSchedule {
    lambda: Vec<f64>,
    gamma: Option<f64>,
}

impl TemperSchedule {
    /// `λ = min((1 + γ)^k − 1, 1)` after `k = T − t` completed steps, with `λ_0 = 1`.
    pub fn geometric(gamma: f64, steps: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(DasError::Input(format!("gamma must be positive, got {gamma}")));
        }
        let mut lambda: Vec<f64> = (0..=steps)
            .map(|t| {
                let k = (steps - t) as f64;
                ((1.0 + gamma).powf(k) - 1.0).min(1.0)
            })
            .collect();
        lambda[0] = 1.0;
        Ok(Self { lambda, gamma: Some(gamma) })
    }

    /// `λ_t ≡ 1`: the reward enters in full from the first step.
    /// Unlike the tempered schedules this does not start from `λ_T = 0`.
    pub fn untempered(steps: usize) -> Self {
        Self { lambda: vec![1.0; steps + 1], gamma: None }
    }

    /// Wraps a trajectory recorded by adaptive tempering.
    pub fn from_values(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() || lambda.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(DasError::Input("temperatures must lie in [0, 1]".into()));
        }
        Ok(Self { lambda, gamma: None })
    }

    pub fn steps(&self) -> usize {
        self.lambda.len() - 1
    }

    pub fn lambda(&self, t: usize) -> f64 {
        self.lambda[t]
    }

    pub fn values(&self) -> &[f64] {
        &self.lambda
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    /// Number of completed steps after which `λ` first equals 1.
    pub fn steps_to_one(&self) -> usize {
        let t_max = self.steps();
        (0..=t_max).find(|&k| self.lambda[t_max - k] >= 1.0).expect("λ_0 = 1")
    }

    /// `λ_T = 0`, `λ_0 = 1`, values in `[0, 1]`, non-decreasing as `t` descends.
    pub fn is_bridge(&self) -> bool {
        let t_max = self.steps();
        self.lambda[t_max] == 0.0
            && self.lambda[0] == 1.0
            && self.lambda.iter().all(|l| (0.0..=1.0).contains(l))
            && self.lambda.windows(2).all(|w| w[0] >= w[1])
    }
}
