//! Sampling from reward-tilted diffusion models with tempered sequential Monte Carlo.

pub mod analytic;
pub mod baselines;
pub mod diffusion;
pub mod emd;
pub mod error;
pub mod linalg;
pub mod online;
pub mod reward;
pub mod rng;
pub mod schedule;
pub mod score_net;
pub mod smc;

pub use error::{DasError, Result};
