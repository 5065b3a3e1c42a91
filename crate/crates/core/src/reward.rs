//! Reward models, the denoised reward `r̂(x_t) = r(x̂_0(x_t))` and its gradient.

use crate::analytic::QuadraticReward;
use crate::diffusion::{tweedie_mean, tweedie_x0, ScoreProvider};
use crate::error::{check_dim, Result};

/// A differentiable reward `r: ℝ^d → ℝ`.
pub trait RewardModel: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

impl RewardModel for QuadraticReward {
    fn dim(&self) -> usize {
        QuadraticReward::dim(self)
    }
    fn value(&self, x: &[f64]) -> f64 {
        QuadraticReward::value(self, x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        QuadraticReward::gradient(self, x)
    }
}

impl<R: RewardModel + ?Sized> RewardModel for &R {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (**self).gradient(x)
    }
}

impl<R: RewardModel + ?Sized> RewardModel for Box<R> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (**self).gradient(x)
    }
}

/// How `∇_{x_t} r̂` treats the Jacobian of `x̂_0(x_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidanceJacobian {
    /// Exact chain rule `Jᵀ ∇r(x̂_0)`.
    #[default]
    Full,
    /// `∇r(x̂_0)`, treating `∂x̂_0/∂x_t` as the identity.
    Identity,
}

pub fn reward_value<R: RewardModel + ?Sized>(model: &R, x: &[f64]) -> Result<f64> {
    check_dim(model.dim(), x.len())?;
    Ok(model.value(x))
}

/// `r̂(x_t) = r(x̂_0(x_t, t))` and its gradient with respect to `x_t`.
pub fn r_hat<R, P>(model: &R, provider: &P, x_t: &[f64], t: usize, mode: GuidanceJacobian) -> Result<(f64, Vec<f64>)>
where
    R: RewardModel + ?Sized,
    P: ScoreProvider + ?Sized,
{
    check_dim(model.dim(), x_t.len())?;
    match mode {
        GuidanceJacobian::Full => {
            let (x0, jac) = tweedie_x0(provider, x_t, t)?;
            let g = model.gradient(&x0);
            Ok((model.value(&x0), jac.t_mul_vec(&g)))
        }
        GuidanceJacobian::Identity => {
            let x0 = tweedie_mean(provider, x_t, t)?;
            Ok((model.value(&x0), model.gradient(&x0)))
        }
    }
}

/// `r̂(x_t)` only.
pub fn r_hat_value<R, P>(model: &R, provider: &P, x_t: &[f64], t: usize) -> Result<f64>
where
    R: RewardModel + ?Sized,
    P: ScoreProvider + ?Sized,
{
    let x0 = tweedie_mean(provider, x_t, t)?;
    Ok(model.value(&x0))
}

/// Reward smoothly clamped into `[lo, hi]`.
///
/// Values farther than 1% of `hi − lo` from both bounds pass through unchanged;
/// inside that band a cubic Hermite blend joins the identity to the bound with a
/// continuous first derivative. Beyond the bounds the gradient is zero.
#[derive(Debug, Clone)]
pub struct ClampedReward<R> {
    inner: R,
    lo: f64,
    hi: f64,
    band: f64,
}

pub fn clamp_reward<R: RewardModel>(model: R, lo: f64, hi: f64) -> ClampedReward<R> {
    assert!(lo < hi, "clamp needs lo < hi");
    ClampedReward { inner: model, lo, hi, band: 0.01 * (hi - lo) }
}

impl<R> ClampedReward<R> {
    /// Returns the clamped value and the derivative of the clamp map.
    fn squash(&self, v: f64) -> (f64, f64) {
        // h(s) = s + s² − s³: h(0)=0, h'(0)=1, h(1)=1, h'(1)=0, monotone on [0, 1]
        let top = self.hi - self.band;
        let bottom = self.lo + self.band;
        if v >= self.hi {
            (self.hi, 0.0)
        } else if v > top {
            let s = (v - top) / self.band;
            (top + self.band * (s + s * s - s * s * s), 1.0 + 2.0 * s - 3.0 * s * s)
        } else if v <= self.lo {
            (self.lo, 0.0)
        } else if v < bottom {
            let s = (bottom - v) / self.band;
            (bottom - self.band * (s + s * s - s * s * s), 1.0 + 2.0 * s - 3.0 * s * s)
        } else {
            (v, 1.0)
        }
    }
}

impl<R: RewardModel> RewardModel for ClampedReward<R> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.squash(self.inner.value(x)).0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (_, slope) = self.squash(self.inner.value(x));
        if slope == 0.0 {
            return vec![0.0; self.inner.dim()];
        }
        self.inner.gradient(x).into_iter().map(|g| g * slope).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::Gmm;
    use crate::diffusion::AnalyticScore;
    use crate::linalg::Mat;
    use crate::schedule::NoiseSchedule;

    fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    #[test]
    fn r_hat_at_time_zero_is_reward() {
        let schedule = NoiseSchedule::default();
        let p = AnalyticScore::new(&Gmm::canonical_2d(), &schedule);
        let r = QuadraticReward::toy_bottom();
        let x = [0.3, -0.8];
        let (v, g) = r_hat(&r, &p, &x, 0, GuidanceJacobian::Full).unwrap();
        assert_eq!(v, r.value(&x));
        assert_eq!(g, r.gradient(&x));
    }

    #[test]
    fn constant_reward_has_zero_guidance() {
        let schedule = NoiseSchedule::default();
        let p = AnalyticScore::new(&Gmm::canonical_2d(), &schedule);
        let r = QuadraticReward::constant(2, 5.0);
        let (v, g) = r_hat(&r, &p, &[1.0, 2.0], 50, GuidanceJacobian::Full).unwrap();
        assert_eq!(v, 5.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn r_hat_gradient_matches_finite_differences() {
        let schedule = NoiseSchedule::default();
        let p = AnalyticScore::new(&Gmm::canonical_2d(), &schedule);
        let r = QuadraticReward::toy_top();
        for (x, t) in [([0.4, -0.3], 20), ([1.5, 1.1], 60), ([-0.2, 0.9], 95)] {
            let (_, g) = r_hat(&r, &p, &x, t, GuidanceJacobian::Full).unwrap();
            let fd = fd_gradient(|y| r_hat_value(&r, &p, y, t).unwrap(), &x, 1e-5);
            assert!(rel_err(&g, &fd) < 1e-5, "t = {t}: {g:?} vs {fd:?}");
        }
    }

    #[test]
    fn identity_jacobian_mode_skips_chain_rule() {
        let schedule = NoiseSchedule::default();
        let p = AnalyticScore::new(&Gmm::canonical_2d(), &schedule);
        let r = QuadraticReward::toy_top();
        let x = [0.4, -0.3];
        let (v, g) = r_hat(&r, &p, &x, 30, GuidanceJacobian::Identity).unwrap();
        let x0 = tweedie_mean(&p, &x, 30).unwrap();
        assert_eq!(v, r.value(&x0));
        assert_eq!(g, r.gradient(&x0));
    }

    #[test]
    fn r_hat_approaches_reward_for_tiny_noise() {
        let schedule = NoiseSchedule::from_betas(&[1e-8]).unwrap();
        let p = AnalyticScore::new(&Gmm::canonical_2d(), &schedule);
        let r = QuadraticReward::toy_top();
        for x in [[2.0, 0.0], [1.9, 0.2], [0.5, 0.5]] {
            let v = r_hat_value(&r, &p, &x, 1).unwrap();
            assert!((v - r.value(&x)).abs() < 1e-4);
        }
    }

    #[test]
    fn clamp_passes_interior_values_and_saturates() {
        let r = QuadraticReward::new(Mat::diag(&[1.0]), vec![0.0], 0.0).unwrap();
        let c = clamp_reward(r, -4.0, 0.0);
        assert_eq!(c.value(&[1.0]), -1.0);
        assert_eq!(c.gradient(&[1.0]), vec![-2.0]);
        assert_eq!(c.value(&[3.0]), -4.0);
        assert_eq!(c.gradient(&[3.0]), vec![0.0]);
        // values never leave [lo, hi]
        for i in 0..400 {
            let x = -3.0 + i as f64 * 0.015;
            let v = c.value(&[x]);
            assert!((-4.0..=0.0).contains(&v));
        }
    }

    #[test]
    fn clamp_gradient_is_consistent_in_the_band() {
        let r = QuadraticReward::new(Mat::diag(&[1.0]), vec![0.0], 0.0).unwrap();
        let c = clamp_reward(r, -4.0, 0.0);
        // r(x) = -x²; band edge at -4 + 0.04 -> x ≈ 1.99
        for x in [1.99, 1.995, 1.9999, (4.0f64 - 0.04).sqrt()] {
            let fd = fd_gradient(|y| c.value(y), &[x], 1e-7);
            assert!(rel_err(&c.gradient(&[x]), &fd) < 1e-3, "x = {x}");
        }
    }
}
