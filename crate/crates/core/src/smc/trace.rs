use std::fmt::Write as _;



use super::ensemble::ParticleEnsemble;

/// One reverse step `t → t − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Completed steps before this one.
    pub step: usize,
    pub t: usize,
    /// `λ_{t−1}`, the temperature targeted after the step.
    pub lambda: f64,
    /// ESS at time `t`, before the resampling decision.
    pub ess: f64,
    pub resampled: bool,
    /// Weighted mean of `r̂(x_{t−1})` after reweighting.
    pub mean_r_hat: f64,
    /// Spread between the largest and smallest finite log weight after the step.
    pub max_log_weight_spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmcTrace {
    pub sweep: u64,
    pub rows: Vec<TraceRow>,
    /// `λ_t` for `t = 0..=T`.
    pub lambdas: Vec<f64>,
    /// Adaptive tempering ran out of steps and `λ_0 = 1` was imposed.
    pub lambda_forced: bool,
    /// Weighted ensemble at `t = 0`, before the terminal resampling.
    pub weighted_final: ParticleEnsemble,
}

impl SmcTrace {
    pub fn resample_count(&self) -> usize {
        self.rows.iter().filter(|r| r.resampled).count()
    }

    pub fn min_ess(&self) -> f64 {
        self.rows.iter().map(|r| r.ess).fold(f64::INFINITY, f64::min)
    }

    pub const CSV_HEADER: &'static str = "step,t,lambda,ess,resampled,mean_r_hat,max_log_weight_spread";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step, r.t, r.lambda, r.ess, r.resampled as u8, r.mean_r_hat, r.max_log_weight_spread
            );
        }
        out
    }
}
