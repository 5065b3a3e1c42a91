//! DDPM reverse-process machinery over a pluggable score provider.

use ndarray::Array2;
use rayon::prelude::*;

use crate::analytic::Gmm;
use crate::error::{check_dim, DasError, Result};
use crate::linalg::Mat;
use crate::rng::{self, Domain};
use crate::schedule::NoiseSchedule;

/// Source of `∇ log p_t` for a diffusion model, bound to one schedule.
pub trait ScoreProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn schedule(&self) -> &NoiseSchedule;

    /// `∇_x log p_t(x)` for `1 ≤ t ≤ T`.
    fn score(&self, x: &[f64], t: usize) -> Result<Vec<f64>>;

    /// Score together with its Jacobian (the Hessian of `log p_t`).
    fn score_jacobian(&self, _x: &[f64], _t: usize) -> Result<(Vec<f64>, Mat)> {
        Err(DasError::Capability("score Jacobians"))
    }
}

/// Exact scores of a Gaussian mixture pushed through the forward process.
#[derive(Debug, Clone)]
pub struct AnalyticScore {
    schedule: NoiseSchedule,
    marginals: Vec<Gmm>,
}

impl AnalyticScore {
    pub fn new(prior: &Gmm, schedule: &NoiseSchedule) -> Self {
        let marginals = (0..=schedule.steps())
            .map(|t| prior.forward_marginal(schedule, t).expect("t within schedule"))
            .collect();
        Self { schedule: schedule.clone(), marginals }
    }

    pub fn prior(&self) -> &Gmm {
        &self.marginals[0]
    }

    pub fn marginal(&self, t: usize) -> &Gmm {
        &self.marginals[t]
    }
}

impl ScoreProvider for AnalyticScore {
    fn dim(&self) -> usize {
        self.marginals[0].dim()
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn score(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.schedule.check_time(t)?;
        self.marginals[t].score(x)
    }

    fn score_jacobian(&self, x: &[f64], t: usize) -> Result<(Vec<f64>, Mat)> {
        self.schedule.check_time(t)?;
        self.marginals[t].score_hessian(x)
    }
}

/// Reverse-kernel mean `μ(x_t, t) = (x_t + β_t ∇log p_t(x_t)) / √(1 − β_t)`.
pub fn posterior_mean<P: ScoreProvider + ?Sized>(provider: &P, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
    let schedule = provider.schedule();
    schedule.check_reverse_time(t)?;
    check_dim(provider.dim(), x_t.len())?;
    let s = provider.score(x_t, t)?;
    Ok(mean_from_score(schedule, x_t, &s, t))
}

pub(crate) fn mean_from_score(schedule: &NoiseSchedule, x_t: &[f64], score: &[f64], t: usize) -> Vec<f64> {
    let beta = schedule.beta(t);
    let denom = (1.0 - beta).sqrt();
    x_t.iter().zip(score).map(|(x, s)| (x + beta * s) / denom).collect()
}

/// Tweedie denoised estimate `x̂_0 = (x_t + (1 − ᾱ_t) ∇log p_t) / √ᾱ_t`
/// and its Jacobian `(I + (1 − ᾱ_t) H_t) / √ᾱ_t`.
pub fn tweedie_x0<P: ScoreProvider + ?Sized>(provider: &P, x_t: &[f64], t: usize) -> Result<(Vec<f64>, Mat)> {
    let schedule = provider.schedule();
    schedule.check_time(t)?;
    check_dim(provider.dim(), x_t.len())?;
    let d = x_t.len();
    let ab = schedule.alpha_bar(t);
    if ab >= 1.0 {
        return Ok((x_t.to_vec(), Mat::identity(d)));
    }
    let (s, h) = provider.score_jacobian(x_t, t)?;
    let inv = 1.0 / ab.sqrt();
    let x0 = x_t.iter().zip(&s).map(|(x, s)| (x + (1.0 - ab) * s) * inv).collect();
    let mut jac = h.scaled((1.0 - ab) * inv);
    for i in 0..d {
        jac[(i, i)] += inv;
    }
    Ok((x0, jac))
}

/// Tweedie estimate without the Jacobian.
pub fn tweedie_mean<P: ScoreProvider + ?Sized>(provider: &P, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
    let schedule = provider.schedule();
    schedule.check_time(t)?;
    let ab = schedule.alpha_bar(t);
    if ab >= 1.0 {
        return Ok(x_t.to_vec());
    }
    let s = provider.score(x_t, t)?;
    let inv = 1.0 / ab.sqrt();
    Ok(x_t.iter().zip(&s).map(|(x, s)| (x + (1.0 - ab) * s) * inv).collect())
}

/// Runs one unguided chain from `x_T ~ N(0, I)` down to `t = 0`.
pub(crate) fn run_chain<P, F>(provider: &P, rng: &mut rng::StreamRng, mut shift: F) -> Result<Vec<f64>>
where
    P: ScoreProvider + ?Sized,
    F: FnMut(&[f64], usize) -> Result<Option<Vec<f64>>>,
{
    let schedule = provider.schedule();
    let d = provider.dim();
    let mut x = rng::normal_vec(rng, d);
    let mut noise = vec![0.0; d];
    for t in (1..=schedule.steps()).rev() {
        let mut mean = posterior_mean(provider, &x, t)?;
        let sigma = schedule.sigma(t);
        if let Some(delta) = shift(&x, t)? {
            for (m, s) in mean.iter_mut().zip(delta) {
                *m += s;
            }
        }
        rng::fill_normal(rng, &mut noise);
        for ((xi, m), z) in x.iter_mut().zip(&mean).zip(&noise) {
            *xi = m + sigma * z;
        }
    }
    Ok(x)
}

pub(crate) fn collect_rows(rows: Vec<Vec<f64>>, d: usize) -> Array2<f64> {
    let n = rows.len();
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).expect("row lengths match dimension")
}

/// Plain ancestral sampling: `x_T ~ N(0, I)`, `x_{t−1} ~ N(μ(x_t, t), σ_t² I)`.
/// Chain `i` draws from its own stream, so output is independent of thread count.
pub fn ancestral_sample<P: ScoreProvider + ?Sized>(provider: &P, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(DasError::Input("sample count must be at least 1".into()));
    }
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, Domain::Chain, &[i as u64]);
            run_chain(provider, &mut rng, |_, _| Ok(None))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_rows(rows, provider.dim()))
}
