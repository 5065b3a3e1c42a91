use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::QuadraticReward;
use crate::error::{check_dim, DasError, Result};
use crate::linalg::{dot, log_sum_exp, Mat};
use crate::rng::{self, Domain};
use crate::schedule::NoiseSchedule;

/// Largest dimension the analytic mixture supports.
pub const MAX_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
struct Component {
    weight: f64,
    log_weight: f64,
    mean: Vec<f64>,
    cov: Mat,
    precision: Mat,
    /// `−d/2 log 2π − ½ log|Σ|`
    log_norm: f64,
    cov_sqrt: Mat,
}

impl Component {
    fn new(weight: f64, mean: Vec<f64>, cov: Mat) -> Result<Self> {
        let d = mean.len();
        if cov.rows() != d || cov.cols() != d {
            return Err(DasError::Dimension { expected: d, got: cov.rows() });
        }
        if !cov.is_symmetric(1e-12) {
            return Err(DasError::Input("covariance must be symmetric".into()));
        }
        let cov = cov.symmetrized();
        let (precision, logdet) = cov
            .spd_inverse_logdet()
            .ok_or_else(|| DasError::Input("covariance must be positive-definite".into()))?;
        let cov_sqrt = cov.sym_sqrt();
        Ok(Self {
            weight,
            log_weight: weight.ln(),
            mean,
            log_norm: -0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * logdet,
            cov,
            precision,
            cov_sqrt,
        })
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        self.log_norm - 0.5 * self.precision.quad_form(&diff)
    }
}

/// Weighted mixture of full-covariance Gaussians.
///
/// Serializes as `{weights, means, covariances}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmSpec", into = "GmmSpec")]
pub struct Gmm {
    dim: usize,
    components: Vec<Component>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmSpec {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<GmmSpec> for Gmm {
    type Error = DasError;
    fn try_from(s: GmmSpec) -> Result<Self> {
        let covs = s
            .covariances
            .iter()
            .map(|c| Mat::from_rows(c).ok_or_else(|| DasError::Input("ragged covariance".into())))
            .collect::<Result<Vec<_>>>()?;
        Gmm::new(s.weights, s.means, covs)
    }
}

impl From<Gmm> for GmmSpec {
    fn from(g: Gmm) -> Self {
        Self {
            weights: g.components.iter().map(|c| c.weight).collect(),
            means: g.components.iter().map(|c| c.mean.clone()).collect(),
            covariances: g.components.iter().map(|c| c.cov.to_rows()).collect(),
        }
    }
}

impl Gmm {
    /// Builds a mixture; weights must be non-negative and sum to one (within 1e-9,
    /// after which they are renormalized exactly).
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Mat>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covariances.len() {
            return Err(DasError::Input("mixture needs matching, non-empty weights/means/covariances".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(DasError::Input("mixture weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DasError::Input(format!("mixture weights sum to {total}, not 1")));
        }
        Self::from_unnormalized(weights, means, covariances)
    }

    pub(crate) fn from_unnormalized(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Mat>) -> Result<Self> {
        let dim = means[0].len();
        if dim == 0 || dim > MAX_DIM {
            return Err(DasError::Input(format!("mixture dimension {dim} unsupported (1..={MAX_DIM})")));
        }
        for m in &means {
            check_dim(dim, m.len())?;
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(DasError::Input("mixture weights sum to zero".into()));
        }
        let components = weights
            .into_iter()
            .zip(means)
            .zip(covariances)
            .map(|((w, m), c)| Component::new(w / total, m, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, components })
    }

    /// Single Gaussian `N(mean, cov)`.
    pub fn gaussian(mean: Vec<f64>, cov: Mat) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![cov])
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::gaussian(vec![0.0; dim], Mat::identity(dim)).expect("identity covariance")
    }

    /// The 2D toy prior: six equal-weight components with means on a circle of
    /// radius 2 and covariance `0.05 I`.
    pub fn canonical_2d() -> Self {
        let k = 6;
        let means = (0..k)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / k as f64;
                vec![2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        let covs = vec![Mat::scaled_identity(2, 0.05); k];
        Self::new(vec![1.0 / k as f64; k], means, covs).expect("valid canonical mixture")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.components[k].mean
    }

    pub fn covariance(&self, k: usize) -> &Mat {
        &self.components[k].cov
    }

    pub fn precision(&self, k: usize) -> &Mat {
        &self.components[k].precision
    }

    /// Mixture mean `Σ w_k μ_k`.
    pub fn overall_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            for (o, v) in m.iter_mut().zip(&c.mean) {
                *o += c.weight * v;
            }
        }
        m
    }

    fn component_log_terms(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.components.iter().map(|c| c.log_weight + c.log_density(x)));
    }

    /// `log Σ_k w_k N(x; μ_k, Σ_k)`
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let mut terms = Vec::with_capacity(self.components.len());
        self.component_log_terms(x, &mut terms);
        Ok(log_sum_exp(&terms))
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut terms = Vec::with_capacity(self.components.len());
        self.component_log_terms(x, &mut terms);
        let lse = log_sum_exp(&terms);
        Ok(terms.iter().map(|t| (t - lse).exp()).collect())
    }

    /// `∇ log p(x)`
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let resp = self.responsibilities(x)?;
        let mut s = vec![0.0; self.dim];
        for (c, &r) in self.components.iter().zip(&resp) {
            if r == 0.0 {
                continue;
            }
            let diff: Vec<f64> = x.iter().zip(&c.mean).map(|(a, b)| a - b).collect();
            let g = c.precision.mul_vec(&diff);
            for (o, gi) in s.iter_mut().zip(g) {
                *o -= r * gi;
            }
        }
        Ok(s)
    }

    /// Score and Hessian of `log p` at `x`.
    pub fn score_hessian(&self, x: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let resp = self.responsibilities(x)?;
        let d = self.dim;
        let mut s = vec![0.0; d];
        let mut h = Mat::zeros(d, d);
        for (c, &r) in self.components.iter().zip(&resp) {
            if r == 0.0 {
                continue;
            }
            let diff: Vec<f64> = x.iter().zip(&c.mean).map(|(a, b)| a - b).collect();
            let g: Vec<f64> = c.precision.mul_vec(&diff).into_iter().map(|v| -v).collect();
            for i in 0..d {
                s[i] += r * g[i];
                for j in 0..d {
                    h[(i, j)] += r * (g[i] * g[j] - c.precision[(i, j)]);
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] -= s[i] * s[j];
            }
        }
        Ok((s, h))
    }

    /// Marginal of the forward noising process at time `t`:
    /// means `√ᾱ_t μ_k`, covariances `ᾱ_t Σ_k + (1 − ᾱ_t) I`.
    pub fn forward_marginal(&self, schedule: &NoiseSchedule, t: usize) -> Result<Gmm> {
        schedule.check_time(t)?;
        if t == 0 {
            return Ok(self.clone());
        }
        Ok(self.diffused(schedule.alpha_bar(t)))
    }

    /// Forward marginal for an explicit `ᾱ`.
    pub fn diffused(&self, alpha_bar: f64) -> Gmm {
        let d = self.dim;
        let scale = alpha_bar.sqrt();
        let noise = Mat::scaled_identity(d, 1.0 - alpha_bar);
        let components = self
            .components
            .iter()
            .map(|c| {
                let mean = c.mean.iter().map(|m| scale * m).collect();
                let cov = c.cov.scaled(alpha_bar).add(&noise);
                let mut comp = Component::new(c.weight, mean, cov).expect("diffused covariance stays SPD");
                comp.log_weight = c.log_weight;
                comp
            })
            .collect();
        Gmm { dim: d, components }
    }

    /// Exact mixture for `p(x) ∝ p_self(x) exp(r(x)/α)` under a quadratic reward.
    ///
    /// Each component becomes a Gaussian with precision `Σ⁻¹ + 2A/α` and mean
    /// `P⁻¹(Σ⁻¹μ + b/α)`; its weight is rescaled by the Gaussian integral
    /// `|Σ|^{-1/2}|P|^{-1/2} exp(½hᵀP⁻¹h − ½μᵀΣ⁻¹μ)` with `h = Σ⁻¹μ + b/α`.
    pub fn tilt_quadratic(&self, reward: &QuadraticReward, alpha: f64) -> Result<Gmm> {
        check_dim(self.dim, reward.dim())?;
        if !(alpha > 0.0) {
            return Err(DasError::Input(format!("alpha must be positive, got {alpha}")));
        }
        let tilt_a = reward.a().scaled(2.0 / alpha);
        let tilt_b: Vec<f64> = reward.b().iter().map(|b| b / alpha).collect();
        let mut log_weights = Vec::with_capacity(self.components.len());
        let mut means = Vec::with_capacity(self.components.len());
        let mut covs = Vec::with_capacity(self.components.len());
        for (k, c) in self.components.iter().enumerate() {
            let precision = c.precision.add(&tilt_a);
            let (cov, logdet_p) = precision
                .spd_inverse_logdet()
                .ok_or(DasError::DegenerateTarget { component: k, alpha })?;
            let h: Vec<f64> = c.precision.mul_vec(&c.mean).iter().zip(&tilt_b).map(|(a, b)| a + b).collect();
            let mean = cov.mul_vec(&h);
            let logdet_sigma = -2.0 * c.log_norm - self.dim as f64 * (2.0 * PI).ln();
            let log_z = -0.5 * logdet_sigma - 0.5 * logdet_p + 0.5 * dot(&h, &mean)
                - 0.5 * c.precision.quad_form(&c.mean);
            log_weights.push(c.log_weight + log_z);
            means.push(mean);
            covs.push(cov.symmetrized());
        }
        let lse = log_sum_exp(&log_weights);
        let weights = log_weights.iter().map(|l| (l - lse).exp()).collect();
        Gmm::from_unnormalized(weights, means, covs)
    }

    /// `E[r(X)]` for a quadratic reward: `Σ w_k (−tr(AΣ_k) − μ_kᵀAμ_k + bᵀμ_k + c)`.
    pub fn expect_quadratic(&self, reward: &QuadraticReward) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let tr: f64 = (0..self.dim)
                    .map(|i| (0..self.dim).map(|j| reward.a()[(i, j)] * c.cov[(j, i)]).sum::<f64>())
                    .sum();
                c.weight * (reward.value(&c.mean) - tr)
            })
            .sum()
    }

    /// `n` i.i.d. draws, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng::stream(seed, Domain::Prior, &[]);
        let cumulative: Vec<f64> = self
            .components
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight;
                Some(*acc)
            })
            .collect();
        let mut out = Array2::zeros((n, self.dim));
        let mut z = vec![0.0; self.dim];
        for mut row in out.rows_mut() {
            let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
            let k = cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or_else(|| self.components.iter().rposition(|c| c.weight > 0.0).unwrap_or(0));
            let c = &self.components[k];
            rng::fill_normal(&mut rng, &mut z);
            let offset = c.cov_sqrt.mul_vec(&z);
            for ((r, m), o) in row.iter_mut().zip(&c.mean).zip(offset) {
                *r = m + o;
            }
        }
        out
    }

    /// Index of the most responsible component for each row.
    pub fn assign_modes(&self, samples: &Array2<f64>) -> Result<Vec<usize>> {
        samples
            .rows()
            .into_iter()
            .map(|row| {
                let x: Vec<f64> = row.to_vec();
                let r = self.responsibilities(&x)?;
                Ok(r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_component() -> Gmm {
        Gmm::new(
            vec![0.3, 0.7],
            vec![vec![1.0, -0.5], vec![-1.0, 0.8]],
            vec![
                Mat::from_rows(&[vec![0.5, 0.1], vec![0.1, 0.3]]).unwrap(),
                Mat::from_rows(&[vec![0.2, -0.05], vec![-0.05, 0.4]]).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_log_density_at_mode() {
        let g = Gmm::standard_normal(2);
        assert!((g.log_density(&[0.0, 0.0]).unwrap() + (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn symmetric_pair_log_density_at_origin() {
        let g = Gmm::new(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            vec![Mat::identity(2), Mat::identity(2)],
        )
        .unwrap();
        // each component: exp(-1/2) / (2π)
        let expected = ((-0.5f64).exp() / (2.0 * PI)).ln();
        assert!((g.log_density(&[0.0, 0.0]).unwrap() - expected).abs() < 1e-14);
        let s = g.score(&[0.0, 0.0]).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = Gmm::standard_normal(2);
        assert!(matches!(g.log_density(&[0.0]), Err(DasError::Dimension { .. })));
    }

    #[test]
    fn standard_normal_score() {
        let s = Gmm::standard_normal(2).score(&[1.0, 2.0]).unwrap();
        assert!((s[0] + 1.0).abs() < 1e-15 && (s[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn translation_equivariance() {
        let g = two_component();
        let shift = [0.7, -1.3];
        let moved = Gmm::new(
            g.weights(),
            (0..2).map(|k| g.mean(k).iter().zip(&shift).map(|(m, s)| m + s).collect()).collect(),
            (0..2).map(|k| g.covariance(k).clone()).collect(),
        )
        .unwrap();
        let x = [0.2, 0.4];
        let xs = [0.2 + shift[0], 0.4 + shift[1]];
        assert!((g.log_density(&x).unwrap() - moved.log_density(&xs).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn forward_marginal_closed_form() {
        let schedule = NoiseSchedule::default();
        let g = two_component();
        assert_eq!(g.forward_marginal(&schedule, 0).unwrap(), g);
        assert!(g.forward_marginal(&schedule, 101).is_err());
        let single = Gmm::gaussian(vec![2.0, 0.0], Mat::identity(2)).unwrap();
        let m = single.diffused(0.25);
        assert!((m.mean(0)[0] - 1.0).abs() < 1e-15 && m.mean(0)[1] == 0.0);
        assert!(m.covariance(0).max_abs_diff(&Mat::identity(2)) < 1e-15);
    }

    #[test]
    fn forward_marginal_composes() {
        // marginal at s, then the remaining noise ᾱ_t/ᾱ_s, equals the marginal at t
        let schedule = NoiseSchedule::default();
        let g = two_component();
        let (s, t) = (30, 70);
        let direct = g.forward_marginal(&schedule, t).unwrap();
        let ratio = schedule.alpha_bar(t) / schedule.alpha_bar(s);
        let composed = g.forward_marginal(&schedule, s).unwrap().diffused(ratio);
        for k in 0..2 {
            for (a, b) in direct.mean(k).iter().zip(composed.mean(k)) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!(direct.covariance(k).max_abs_diff(composed.covariance(k)) < 1e-10);
        }
    }

    #[test]
    fn tilt_with_constant_reward_is_identity() {
        let g = two_component();
        let tilted = g.tilt_quadratic(&QuadraticReward::constant(2, 3.0), 0.5).unwrap();
        for k in 0..2 {
            assert!((g.weights()[k] - tilted.weights()[k]).abs() < 1e-15);
            assert!(g.covariance(k).max_abs_diff(tilted.covariance(k)) < 1e-12);
            for (a, b) in g.mean(k).iter().zip(tilted.mean(k)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tilt_with_huge_alpha_is_near_identity() {
        let g = Gmm::canonical_2d();
        let tilted = g.tilt_quadratic(&QuadraticReward::toy_top(), 1e12).unwrap();
        for k in 0..g.n_components() {
            assert!((g.weights()[k] - tilted.weights()[k]).abs() < 1e-6);
            assert!(g.covariance(k).max_abs_diff(tilted.covariance(k)) < 1e-6);
            for (a, b) in g.mean(k).iter().zip(tilted.mean(k)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tilt_differs_from_log_prior_plus_reward_by_a_constant() {
        use rand::SeedableRng;
        let g = Gmm::standard_normal(2);
        let r = QuadraticReward::toy_top();
        let tilted = g.tilt_quadratic(&r, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let diffs: Vec<f64> = (0..100)
            .map(|_| {
                let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                tilted.log_density(&x).unwrap() - (g.log_density(&x).unwrap() + r.value(&x))
            })
            .collect();
        let spread = diffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - diffs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-8, "spread {spread}");
    }

    #[test]
    fn tilt_rejects_non_definite_precision() {
        let r = QuadraticReward::new_unchecked(Mat::diag(&[-30.0, 0.0]), vec![0.0; 2], 0.0);
        let err = Gmm::canonical_2d().tilt_quadratic(&r, 1.0).unwrap_err();
        assert!(matches!(err, DasError::DegenerateTarget { .. }));
    }

    #[test]
    fn sampling_is_deterministic_and_centred() {
        let g = Gmm::standard_normal(2);
        let a = g.sample(100_000, 11);
        assert_eq!(a, g.sample(100_000, 11));
        for m in a.mean_axis(ndarray::Axis(0)).unwrap() {
            assert!(m.abs() < 0.02);
        }
    }

    #[test]
    fn degenerate_weights_sample_one_component() {
        let g = Gmm::new(
            vec![1.0, 0.0],
            vec![vec![-5.0, 0.0], vec![5.0, 0.0]],
            vec![Mat::scaled_identity(2, 0.01), Mat::scaled_identity(2, 0.01)],
        )
        .unwrap();
        let s = g.sample(1000, 3);
        assert!(g.assign_modes(&s).unwrap().iter().all(|&k| k == 0));
    }

    #[test]
    fn gmm_json_round_trip() {
        let g = two_component();
        let js = serde_json::to_string(&g).unwrap();
        assert!(js.contains("\"weights\"") && js.contains("\"means\"") && js.contains("\"covariances\""));
        let back: Gmm = serde_json::from_str(&js).unwrap();
        assert_eq!(back.weights(), g.weights());
        assert!(back.covariance(1).max_abs_diff(g.covariance(1)) < 1e-15);
    }

    #[test]
    fn expectation_of_quadratic_matches_monte_carlo() {
        let g = Gmm::canonical_2d();
        let r = QuadraticReward::toy_bottom();
        let s = g.sample(200_000, 5);
        let mc: f64 = s.rows().into_iter().map(|row| r.value(row.as_slice().unwrap())).sum::<f64>() / 200_000.0;
        assert!((mc - g.expect_quadratic(&r)).abs() < 0.01);
    }
}
