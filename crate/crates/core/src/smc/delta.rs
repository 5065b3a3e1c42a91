//! Increment of the inverse temperature chosen to hit a target ESS.

use super::ensemble::ess;

const BISECTION_STEPS: usize = 200;

fn ess_after(log_weights: &[f64], r_hat: &[f64], delta: f64, alpha: f64) -> f64 {
    let lw: Vec<f64> = log_weights.iter().zip(r_hat).map(|(w, r)| w + delta * r / alpha).collect();
    ess(&lw).unwrap_or(1.0)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    // invariant: f(lo) > 0 ≥ f(hi)
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root `δ ≥ 0` of `ESS(W · exp(δ r̂ / α)) = ess_target`, without clamping.
/// Returns 0 when the ESS is already at or below the target and `+∞` when no
/// finite `δ` brings it down to the target.
pub fn unclamped_delta(log_weights: &[f64], r_hat: &[f64], ess_target: f64, alpha: f64) -> f64 {
    let f = |d: f64| ess_after(log_weights, r_hat, d, alpha) - ess_target;
    if f(0.0) <= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return f64::INFINITY;
        }
    }
    bisect(f, 0.0, hi)
}

/// Tempering increment clamped to `[0, 1 − λ_t]`.
pub fn solve_for_delta(log_weights: &[f64], r_hat: &[f64], ess_target: f64, lambda_t: f64, alpha: f64) -> f64 {
    let room = (1.0 - lambda_t).max(0.0);
    if room == 0.0 {
        return 0.0;
    }
    let f = |d: f64| ess_after(log_weights, r_hat, d, alpha) - ess_target;
    if f(0.0) <= 0.0 {
        return 0.0;
    }
    if f(room) >= 0.0 {
        return room;
    }
    bisect(f, 0.0, room)
}
