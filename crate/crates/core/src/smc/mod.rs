//! Sequential Monte Carlo alignment: tempering, proposals, weights,
//! resampling and the sampling loops.

mod delta;
mod ensemble;
mod resample;
mod sampler;
mod temper;
mod trace;

pub use delta::{solve_for_delta, unclamped_delta};
pub use ensemble::{ess, normalized_weights, ParticleEnsemble};
pub use resample::{multinomial_counts, resample, ResamplingScheme};
pub use sampler::{
    log_weight, propose, run_das, run_das_adaptive, run_sweep, sample_pooled, GradientTime, PooledRun, ProposalKind,
    SmcConfig, Tempering,
};
pub use temper::TemperSchedule;
pub use trace::{SmcTrace, TraceRow};
