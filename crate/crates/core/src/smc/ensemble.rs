use ndarray::Array2;

use crate::error::{DasError, Result};
use crate::linalg::log_sum_exp;

/// Weighted particle population at one diffusion time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub t: usize,
    pub positions: Array2<f64>,
    pub log_weights: Vec<f64>,
    /// Ancestor of each particle at the last resampling (identity if none).
    pub ancestors: Vec<usize>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalized_weights(&self.log_weights)
    }

    pub fn ess(&self) -> Result<f64> {
        ess(&self.log_weights)
    }

    /// Self-normalized estimate `Σ W_n f(x_n)`.
    pub fn weighted_mean(&self, f: impl Fn(&[f64]) -> f64) -> Result<f64> {
        let w = self.normalized_weights()?;
        Ok(self
            .positions
            .rows()
            .into_iter()
            .zip(&w)
            .map(|(row, wi)| if *wi == 0.0 { 0.0 } else { wi * f(row.as_slice().expect("standard layout")) })
            .sum())
    }
}

/// Softmax of log weights. Fails only when every entry is `−∞` (or any is NaN/`+∞`).
pub fn normalized_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.is_empty() {
        return Err(DasError::Input("empty weight vector".into()));
    }
    if log_weights.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(DasError::DegenerateEnsemble);
    }
    let lse = log_sum_exp(log_weights);
    if lse == f64::NEG_INFINITY {
        return Err(DasError::DegenerateEnsemble);
    }
    Ok(log_weights.iter().map(|v| (v - lse).exp()).collect())
}

/// Effective sample size `1 / Σ W_n²`, clamped into `[1, N]` against rounding.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let w = normalized_weights(log_weights)?;
    let s: f64 = w.iter().map(|v| v * v).sum();
    Ok((1.0 / s).clamp(1.0, w.len() as f64))
}
