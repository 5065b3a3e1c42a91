//! Comparison samplers sharing the diffusion core: single-chain approximate
//! guidance, SMC without tempering, and Best-of-N selection.

use ndarray::Array2;
use rayon::prelude::*;

use crate::diffusion::{collect_rows, run_chain, ScoreProvider};
use crate::error::{check_dim, DasError, Result};
use crate::linalg::norm;
use crate::reward::{r_hat, GuidanceJacobian, RewardModel};
use crate::rng::{self, Domain};
use crate::smc::{sample_pooled, PooledRun, ProposalKind, SmcConfig, Tempering};

/// Ancestral sampling with the mean shifted by `σ_t² (scale/α) ∇r̂(x_t)`.
/// Chain `i` uses the same stream as chain `i` of plain ancestral sampling.
pub fn approx_guidance_sample<P, R>(
    provider: &P,
    reward: &R,
    alpha: f64,
    guidance_scale: f64,
    n: usize,
    seed: u64,
) -> Result<Array2<f64>>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    if n == 0 {
        return Err(DasError::Input("sample count must be at least 1".into()));
    }
    if !(alpha > 0.0) {
        return Err(DasError::Input(format!("alpha must be positive, got {alpha}")));
    }
    check_dim(provider.dim(), reward.dim())?;
    let schedule = provider.schedule();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, Domain::Chain, &[i as u64]);
            run_chain(provider, &mut rng, |x, t| {
                let var = schedule.sigma(t).powi(2);
                if guidance_scale == 0.0 || var == 0.0 {
                    return Ok(None);
                }
                let (_, g) = r_hat(reward, provider, x, t, GuidanceJacobian::Full)?;
                let gn = norm(&g);
                if !gn.is_finite() {
                    return Err(DasError::GuidanceExplosion { t, norm: gn });
                }
                let c = var * guidance_scale / alpha;
                Ok(Some(g.into_iter().map(|v| c * v).collect()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_rows(rows, provider.dim()))
}

/// Which proposal the untempered SMC baseline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoTemperVariant {
    /// `λ ≡ 1` with the guided proposal.
    Guided,
    /// `λ ≡ 1` with the pre-trained reverse kernel as proposal.
    Unguided,
}

/// The SMC configuration of an untempered baseline derived from `cfg`.
pub fn no_temper_config(cfg: &SmcConfig, variant: NoTemperVariant) -> SmcConfig {
    let proposal = match variant {
        NoTemperVariant::Guided => ProposalKind::Guided,
        NoTemperVariant::Unguided => ProposalKind::Prior,
    };
    SmcConfig { tempering: Tempering::Off, proposal, ..cfg.clone() }
}

/// SMC with `λ ≡ 1`, pooled over `sweeps` independent sweeps.
pub fn smc_no_temper<P, R>(cfg: &SmcConfig, provider: &P, reward: &R, variant: NoTemperVariant, sweeps: usize) -> Result<PooledRun>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    sample_pooled(&no_temper_config(cfg, variant), provider, reward, sweeps)
}

/// For each output, `n_candidates` unguided chains; the highest-reward endpoint is kept.
/// Candidate `c` of output `j` runs on chain stream `j · n_candidates + c`.
pub fn best_of_n<P, R>(provider: &P, reward: &R, n_candidates: usize, n_outputs: usize, seed: u64) -> Result<Array2<f64>>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    if n_candidates == 0 || n_outputs == 0 {
        return Err(DasError::Input("best-of-n needs at least one candidate and one output".into()));
    }
    check_dim(provider.dim(), reward.dim())?;
    let rows = (0..n_outputs)
        .into_par_iter()
        .map(|j| {
            let mut best: Option<(f64, Vec<f64>)> = None;
            for c in 0..n_candidates {
                let mut rng = rng::stream(seed, Domain::Chain, &[(j * n_candidates + c) as u64]);
                let x = run_chain(provider, &mut rng, |_, _| Ok(None))?;
                let v = reward.value(&x);
                // strict comparison keeps the earliest maximizer
                if best.as_ref().is_none_or(|(b, _)| v > *b) {
                    best = Some((v, x));
                }
            }
            Ok(best.expect("at least one candidate").1)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_rows(rows, provider.dim()))
}
