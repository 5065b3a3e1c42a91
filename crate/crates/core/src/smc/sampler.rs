use ndarray::Array2;
use rayon::prelude::*;

use super::delta::solve_for_delta;
use super::ensemble::{ess, normalized_weights, ParticleEnsemble};
use super::resample::{resample, ResamplingScheme};
use super::temper::TemperSchedule;
use super::trace::{SmcTrace, TraceRow};
use crate::diffusion::{collect_rows, posterior_mean, ScoreProvider};
use crate::error::{check_dim, DasError, Result};
use crate::linalg::{dot, norm};
use crate::reward::{r_hat, r_hat_value, GuidanceJacobian, RewardModel};
use crate::rng::{self, Domain, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tempering {
    /// `λ = min((1 + γ)^k − 1, 1)` after `k` completed steps.
    Geometric { gamma: f64 },
    /// Each step raises `λ` as far as the ESS target allows.
    Adaptive,
    /// `λ ≡ 1`.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    /// Reverse kernel with its mean shifted along `∇r̂`.
    Guided,
    /// The pre-trained reverse kernel itself.
    Prior,
}

/// Time index at which the guidance gradient `∇r̂` is evaluated (always at `x_t`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientTime {
    /// `∇_{x_t} r̂(x_t, t)`.
    #[default]
    Current,
    /// `∇_{x_t} r̂(x_t, t − 1)`: the denoiser of the step being proposed. For a linear
    /// reward under a Gaussian prior this is exactly the locally optimal proposal.
    Next,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmcConfig {
    pub particles: usize,
    pub alpha: f64,
    pub tempering: Tempering,
    pub resampling: ResamplingScheme,
    /// Resample when `ESS < ess_frac · N`; the adaptive ESS target uses the same fraction.
    pub ess_frac: f64,
    pub proposal: ProposalKind,
    pub gradient_time: GradientTime,
    pub jacobian: GuidanceJacobian,
    pub seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            particles: 16,
            alpha: 1.0,
            tempering: Tempering::Geometric { gamma: 0.008 },
            resampling: ResamplingScheme::Ssp,
            ess_frac: 0.5,
            proposal: ProposalKind::Guided,
            gradient_time: GradientTime::Current,
            jacobian: GuidanceJacobian::Full,
            seed: 0,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(DasError::Input("particle count must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(DasError::Input(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.ess_frac > 0.0 && self.ess_frac <= 1.0) {
            return Err(DasError::Input(format!("ess_frac must lie in (0, 1], got {}", self.ess_frac)));
        }
        if let Tempering::Geometric { gamma } = self.tempering {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(DasError::Input(format!("gamma must be positive, got {gamma}")));
            }
        }
        Ok(())
    }

    /// Fixed schedule for geometric or disabled tempering; `None` when adaptive.
    pub fn temper_schedule(&self, steps: usize) -> Result<Option<TemperSchedule>> {
        match self.tempering {
            Tempering::Geometric { gamma } => TemperSchedule::geometric(gamma, steps).map(Some),
            Tempering::Off => Ok(Some(TemperSchedule::untempered(steps))),
            Tempering::Adaptive => Ok(None),
        }
    }
}

/// Proposal mean shift `σ_t² (λ_{t−1}/α) ∇r̂(x_t)`.
fn guidance_shift<P, R>(cfg: &SmcConfig, provider: &P, reward: &R, x_t: &[f64], t: usize, lam_prev: f64) -> Result<Option<Vec<f64>>>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    let var = provider.schedule().sigma(t).powi(2);
    if cfg.proposal == ProposalKind::Prior || lam_prev == 0.0 || var == 0.0 {
        return Ok(None);
    }
    let at = match cfg.gradient_time {
        GradientTime::Current => t,
        GradientTime::Next => t - 1,
    };
    let (_, g) = r_hat(reward, provider, x_t, at, cfg.jacobian)?;
    let gn = norm(&g);
    if !gn.is_finite() {
        return Err(DasError::GuidanceExplosion { t, norm: gn });
    }
    let c = var * lam_prev / cfg.alpha;
    Ok(Some(g.into_iter().map(|v| c * v).collect()))
}

/// `log p(x_{t−1} | x_t) − log m(x_{t−1} | x_t)` for two Gaussians sharing `σ`,
/// with `u = x_{t−1} − μ` and `s` the mean shift of `m`.
fn kernel_log_ratio(u: &[f64], shift: &[f64], sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    (dot(shift, shift) - 2.0 * dot(u, shift)) / (2.0 * sigma * sigma)
}

fn check_finite(v: f64, t: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DasError::GuidanceExplosion { t, norm: v.abs() })
    }
}

/// Draws `x_{t−1}` from the proposal and returns it with its log density.
/// At `t = 1` the kernel has no noise; the point mass is reported with log density 0.
pub fn propose<P, R>(
    x_t: &[f64],
    t: usize,
    provider: &P,
    reward: &R,
    temper: &TemperSchedule,
    cfg: &SmcConfig,
    rng: &mut StreamRng,
) -> Result<(Vec<f64>, f64)>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    check_dim(reward.dim(), x_t.len())?;
    let mut mean = posterior_mean(provider, x_t, t)?;
    if let Some(s) = guidance_shift(cfg, provider, reward, x_t, t, temper.lambda(t - 1))? {
        mean.iter_mut().zip(&s).for_each(|(m, s)| *m += s);
    }
    let sigma = provider.schedule().sigma(t);
    let z = rng::normal_vec(rng, x_t.len());
    let x: Vec<f64> = mean.iter().zip(&z).map(|(m, z)| m + sigma * z).collect();
    let log_m = if sigma == 0.0 {
        0.0
    } else {
        let d = x_t.len() as f64;
        -0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - 0.5 * dot(&z, &z)
    };
    Ok((x, log_m))
}

/// Incremental log weight
/// `log p(x_{t−1}|x_t) − log m(x_{t−1}|x_t) + (λ_{t−1}/α) r̂(x_{t−1}) − (λ_t/α) r̂(x_t)`.
pub fn log_weight<P, R>(
    x_t: &[f64],
    x_prev: &[f64],
    t: usize,
    provider: &P,
    reward: &R,
    temper: &TemperSchedule,
    cfg: &SmcConfig,
) -> Result<f64>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    check_dim(reward.dim(), x_prev.len())?;
    let (lam_t, lam_prev) = (temper.lambda(t), temper.lambda(t - 1));
    let mean = posterior_mean(provider, x_t, t)?;
    let u: Vec<f64> = x_prev.iter().zip(&mean).map(|(x, m)| x - m).collect();
    let shift = guidance_shift(cfg, provider, reward, x_t, t, lam_prev)?;
    let ratio = shift.map_or(0.0, |s| kernel_log_ratio(&u, &s, provider.schedule().sigma(t)));
    let r_prev = r_hat_value(reward, provider, x_prev, t - 1)?;
    let r_t = r_hat_value(reward, provider, x_t, t)?;
    Ok(ratio + reward_term(lam_prev, r_prev, cfg.alpha) - reward_term(lam_t, r_t, cfg.alpha))
}

/// `λ r / α`, with `λ = 0` contributing exactly 0.
fn reward_term(lambda: f64, r: f64, alpha: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        lambda * r / alpha
    }
}

/// Mutable state of one sweep.
struct Sweep<'a, P: ?Sized, R: ?Sized> {
    cfg: &'a SmcConfig,
    provider: &'a P,
    reward: &'a R,
    sweep: u64,
    xs: Vec<Vec<f64>>,
    r_hat: Vec<f64>,
    log_w: Vec<f64>,
    ancestors: Vec<usize>,
    slot_rngs: Vec<StreamRng>,
    resample_rng: StreamRng,
    rows: Vec<TraceRow>,
}

impl<'a, P, R> Sweep<'a, P, R>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    fn init(cfg: &'a SmcConfig, provider: &'a P, reward: &'a R, sweep: u64) -> Result<Self> {
        cfg.validate()?;
        check_dim(provider.dim(), reward.dim())?;
        let n = cfg.particles;
        let d = provider.dim();
        let t_max = provider.schedule().steps();
        let mut slot_rngs: Vec<StreamRng> =
            (0..n).map(|i| rng::stream(cfg.seed, Domain::Particle, &[sweep, i as u64])).collect();
        let xs: Vec<Vec<f64>> = slot_rngs.iter_mut().map(|r| rng::normal_vec(r, d)).collect();
        let r_hat = xs
            .iter()
            .map(|x| r_hat_value(reward, provider, x, t_max).and_then(|v| check_finite(v, t_max)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            provider,
            reward,
            sweep,
            xs,
            r_hat,
            log_w: vec![0.0; n],
            ancestors: (0..n).collect(),
            slot_rngs,
            resample_rng: rng::stream(cfg.seed, Domain::Resample, &[sweep]),
            rows: Vec::with_capacity(t_max),
        })
    }

    fn fold_reward(&mut self, delta_lambda: f64) {
        if delta_lambda != 0.0 {
            for (w, r) in self.log_w.iter_mut().zip(&self.r_hat) {
                *w += delta_lambda * r / self.cfg.alpha;
            }
        }
    }

    /// Resamples when the ESS is below `threshold`. Returns the pre-resampling ESS.
    fn maybe_resample(&mut self, threshold: f64) -> Result<(f64, bool)> {
        let e = ess(&self.log_w)?;
        if e >= threshold {
            self.ancestors = (0..self.xs.len()).collect();
            return Ok((e, false));
        }
        let anc = resample(&self.log_w, self.cfg.resampling, &mut self.resample_rng)?;
        self.xs = anc.iter().map(|&a| self.xs[a].clone()).collect();
        self.r_hat = anc.iter().map(|&a| self.r_hat[a]).collect();
        self.log_w.iter_mut().for_each(|w| *w = 0.0);
        self.ancestors = anc;
        Ok((e, true))
    }

    /// Moves every particle from `t` to `t − 1` and accumulates incremental weights.
    fn advance(&mut self, t: usize, lam_t: f64, lam_prev: f64) -> Result<()> {
        let (cfg, provider, reward) = (self.cfg, self.provider, self.reward);
        let sigma = provider.schedule().sigma(t);
        for n in 0..self.xs.len() {
            let x_t = &self.xs[n];
            let mut mean = posterior_mean(provider, x_t, t)?;
            let shift = guidance_shift(cfg, provider, reward, x_t, t, lam_prev)?;
            if let Some(s) = &shift {
                mean.iter_mut().zip(s).for_each(|(m, s)| *m += s);
            }
            let z = rng::normal_vec(&mut self.slot_rngs[n], x_t.len());
            let x: Vec<f64> = mean.iter().zip(&z).map(|(m, z)| m + sigma * z).collect();
            let ratio = match &shift {
                // u = x − μ = s + σz
                Some(s) => {
                    let u: Vec<f64> = s.iter().zip(&z).map(|(s, z)| s + sigma * z).collect();
                    kernel_log_ratio(&u, s, sigma)
                }
                None => 0.0,
            };
            let r_new = check_finite(r_hat_value(reward, provider, &x, t - 1)?, t)?;
            let inc = ratio + reward_term(lam_prev, r_new, cfg.alpha) - reward_term(lam_t, self.r_hat[n], cfg.alpha);
            self.log_w[n] += inc;
            self.xs[n] = x;
            self.r_hat[n] = r_new;
        }
        Ok(())
    }

    fn record(&mut self, t: usize, lambda: f64, ess: f64, resampled: bool) -> Result<()> {
        let w = normalized_weights(&self.log_w)?;
        let mean_r_hat = w.iter().zip(&self.r_hat).filter(|(w, _)| **w > 0.0).map(|(w, r)| w * r).sum();
        let finite = self.log_w.iter().copied().filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        self.rows.push(TraceRow {
            step: self.rows.len(),
            t,
            lambda,
            ess,
            resampled,
            mean_r_hat,
            max_log_weight_spread: hi - lo,
        });
        Ok(())
    }

    fn finish(mut self, lambdas: Vec<f64>, lambda_forced: bool) -> Result<(ParticleEnsemble, SmcTrace)> {
        let d = self.provider.dim();
        let n = self.xs.len();
        let weighted = ParticleEnsemble {
            t: 0,
            positions: collect_rows(self.xs.clone(), d),
            log_weights: self.log_w.clone(),
            ancestors: self.ancestors.clone(),
        };
        let anc = resample(&self.log_w, self.cfg.resampling, &mut self.resample_rng)?;
        let rows: Vec<Vec<f64>> = anc.iter().map(|&a| self.xs[a].clone()).collect();
        let out = ParticleEnsemble { t: 0, positions: collect_rows(rows, d), log_weights: vec![0.0; n], ancestors: anc };
        let trace = SmcTrace { sweep: self.sweep, rows: self.rows, lambdas, lambda_forced, weighted_final: weighted };
        Ok((out, trace))
    }
}

fn with_step<T>(t: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ (DasError::Step { .. } | DasError::GuidanceExplosion { .. }) => e,
        e => DasError::Step { t, source: Box::new(e) },
    })
}

fn sweep_fixed<P, R>(cfg: &SmcConfig, provider: &P, reward: &R, temper: &TemperSchedule, sweep: u64) -> Result<(ParticleEnsemble, SmcTrace)>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    let t_max = provider.schedule().steps();
    if temper.steps() != t_max {
        return Err(DasError::Input(format!("tempering covers {} steps, schedule has {t_max}", temper.steps())));
    }
    let mut s = Sweep::init(cfg, provider, reward, sweep)?;
    s.fold_reward(temper.lambda(t_max));
    let threshold = cfg.ess_frac * cfg.particles as f64;
    for t in (1..=t_max).rev() {
        let (e, resampled) = with_step(t, s.maybe_resample(threshold))?;
        with_step(t, s.advance(t, temper.lambda(t), temper.lambda(t - 1)))?;
        with_step(t, s.record(t, temper.lambda(t - 1), e, resampled))?;
    }
    s.finish(temper.values().to_vec(), false)
}

fn sweep_adaptive<P, R>(cfg: &SmcConfig, provider: &P, reward: &R, sweep: u64) -> Result<(ParticleEnsemble, SmcTrace)>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    let t_max = provider.schedule().steps();
    let mut s = Sweep::init(cfg, provider, reward, sweep)?;
    let target = cfg.ess_frac * cfg.particles as f64;
    let mut lambdas = vec![0.0; t_max + 1];
    let mut lam = 0.0;
    for t in (1..=t_max).rev() {
        let delta = solve_for_delta(&s.log_w, &s.r_hat, target, lam, cfg.alpha);
        let next = (lam + delta).min(1.0);
        s.fold_reward(next - lam);
        lam = next;
        lambdas[t - 1] = lam;
        let (e, resampled) = with_step(t, s.maybe_resample(target))?;
        with_step(t, s.advance(t, lam, lam))?;
        with_step(t, s.record(t, lam, e, resampled))?;
    }
    // the final increment at t = 0 acts on the clean reward
    let delta = solve_for_delta(&s.log_w, &s.r_hat, target, lam, cfg.alpha);
    let reached = (lam + delta).min(1.0);
    let forced = reached < 1.0;
    s.fold_reward(1.0 - lam);
    lambdas[0] = 1.0;
    s.finish(lambdas, forced)
}

/// One sweep with the configured tempering mode. Sweep `k` draws from its own streams.
pub fn run_sweep<P, R>(cfg: &SmcConfig, provider: &P, reward: &R, sweep: u64) -> Result<(ParticleEnsemble, SmcTrace)>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    match cfg.temper_schedule(provider.schedule().steps())? {
        Some(temper) => sweep_fixed(cfg, provider, reward, &temper, sweep),
        None => sweep_adaptive(cfg, provider, reward, sweep),
    }
}

/// Adaptive resampling with a fixed tempering schedule (geometric, or off).
/// Returns the terminally resampled ensemble; the weighted one is kept in the trace.
pub fn run_das<P, R>(cfg: &SmcConfig, provider: &P, reward: &R) -> Result<(ParticleEnsemble, SmcTrace)>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    if cfg.tempering == Tempering::Adaptive {
        return Err(DasError::Input("adaptive tempering runs through run_das_adaptive".into()));
    }
    run_sweep(cfg, provider, reward, 0)
}

/// Adaptive resampling and adaptive tempering. The tempering mode in `cfg` is ignored.
pub fn run_das_adaptive<P, R>(cfg: &SmcConfig, provider: &P, reward: &R) -> Result<(ParticleEnsemble, SmcTrace)>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    sweep_adaptive(cfg, provider, reward, 0)
}

/// Independent sweeps stacked row-wise, sweep by sweep.
#[derive(Debug, Clone)]
pub struct PooledRun {
    pub samples: Array2<f64>,
    pub traces: Vec<SmcTrace>,
    pub particles: usize,
}

impl PooledRun {
    /// `(sweep, particle)` label of each sample row.
    pub fn labels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.samples.nrows()).map(|i| (i / self.particles, i % self.particles))
    }
}

/// Runs `sweeps` independent sweeps in parallel and pools their unweighted outputs.
pub fn sample_pooled<P, R>(cfg: &SmcConfig, provider: &P, reward: &R, sweeps: usize) -> Result<PooledRun>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    if sweeps == 0 {
        return Err(DasError::Input("sweep count must be at least 1".into()));
    }
    let runs = (0..sweeps as u64)
        .into_par_iter()
        .map(|k| run_sweep(cfg, provider, reward, k))
        .collect::<Result<Vec<_>>>()?;
    let d = provider.dim();
    let mut rows = Vec::with_capacity(sweeps * cfg.particles);
    let mut traces = Vec::with_capacity(sweeps);
    for (ens, trace) in runs {
        rows.extend(ens.positions.rows().into_iter().map(|r| r.to_vec()));
        traces.push(trace);
    }
    Ok(PooledRun { samples: collect_rows(rows, d), traces, particles: cfg.particles })
}
