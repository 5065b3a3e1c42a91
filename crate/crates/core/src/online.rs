//! Online black-box reward optimization: repeated SMC sampling from the
//! prior tilted by an optimistic surrogate, noisy feedback, and refitting.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::QuadraticReward;
use crate::diffusion::{ancestral_sample, ScoreProvider};
use crate::error::{check_dim, DasError, Result};
use crate::linalg::{cholesky_solve, dot, Mat};
use crate::reward::RewardModel;
use crate::rng::{self, Domain};
use crate::smc::{sample_pooled, SmcConfig};

/// Number of degree-2 polynomial features in `d` dimensions.
pub fn feature_count(d: usize) -> usize {
    1 + d + d * (d + 1) / 2
}

/// `φ(x) = [1, x_1, …, x_d, x_i x_j (i ≤ j)]`.
pub fn features(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut phi = Vec::with_capacity(feature_count(d));
    phi.push(1.0);
    phi.extend_from_slice(x);
    for i in 0..d {
        for j in i..d {
            phi.push(x[i] * x[j]);
        }
    }
    phi
}

/// `∂φ/∂x` as a `p × d` matrix.
fn feature_jacobian(x: &[f64]) -> Mat {
    let d = x.len();
    let mut jac = Mat::zeros(feature_count(d), d);
    for i in 0..d {
        jac[(1 + i, i)] = 1.0;
    }
    let mut row = 1 + d;
    for i in 0..d {
        for j in i..d {
            jac[(row, i)] += x[j];
            jac[(row, j)] += x[i];
            row += 1;
        }
    }
    jac
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Uncertainty {
    /// `β √(φᵀ Σ⁻¹ φ)` with `Σ = λ I + Σ_i φ_i φ_iᵀ`.
    #[default]
    Ucb,
    /// Standard deviation across ridge fits on bootstrap resamples.
    Bootstrap,
}

impl std::str::FromStr for Uncertainty {
    type Err = DasError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ucb" => Ok(Self::Ucb),
            "bootstrap" => Ok(Self::Bootstrap),
            other => Err(DasError::Input(format!("unknown uncertainty mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub ridge: f64,
    pub beta: f64,
    pub mode: Uncertainty,
    pub members: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { ridge: 1e-3, beta: 1.0, mode: Uncertainty::Ucb, members: 8 }
    }
}

/// Noisy reward observations collected so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedbackDataset {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub rounds: Vec<usize>,
}

impl FeedbackDataset {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push(&mut self, round: usize, x: Vec<f64>, y: f64) {
        self.points.push(x);
        self.values.push(y);
        self.rounds.push(round);
    }
}

/// Ridge regression on degree-2 features with an optimism bonus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub dim: usize,
    pub config: SurrogateConfig,
    /// Full-data ridge weights; the point prediction in both modes.
    pub weights: Vec<f64>,
    /// Inverse of the regularized Gram matrix.
    pub gram_inv: Mat,
    /// Bootstrap member weights (empty in UCB mode).
    pub members: Vec<Vec<f64>>,
}

fn ridge_fit(phis: &[Vec<f64>], ys: &[f64], idx: impl Iterator<Item = usize> + Clone, ridge: f64) -> Result<(Vec<f64>, Mat)> {
    let p = phis[0].len();
    let mut gram = Mat::scaled_identity(p, ridge);
    let mut rhs = vec![0.0; p];
    for i in idx {
        let phi = &phis[i];
        for a in 0..p {
            rhs[a] += phi[a] * ys[i];
            for b in 0..p {
                gram[(a, b)] += phi[a] * phi[b];
            }
        }
    }
    let l = gram.cholesky().ok_or(DasError::SingularSurrogate { ridge })?;
    let w = cholesky_solve(&l, &rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(DasError::SingularSurrogate { ridge });
    }
    let inv = gram.spd_inverse_logdet().ok_or(DasError::SingularSurrogate { ridge })?.0;
    Ok((w, inv))
}

/// Fits the surrogate. Bootstrap members are refits on resamples drawn from
/// the `(seed, Online, [round])` stream.
pub fn fit_surrogate(data: &FeedbackDataset, cfg: &SurrogateConfig, seed: u64, round: usize) -> Result<SurrogateModel> {
    let n = data.len();
    let d = data.points.first().map_or(0, Vec::len);
    if d == 0 || n < d + 1 {
        return Err(DasError::Input(format!("surrogate fit needs at least d + 1 = {} observations, got {n}", d + 1)));
    }
    if !(cfg.ridge > 0.0) {
        return Err(DasError::SingularSurrogate { ridge: cfg.ridge });
    }
    for x in &data.points {
        check_dim(d, x.len())?;
    }
    let phis: Vec<Vec<f64>> = data.points.iter().map(|x| features(x)).collect();
    let (weights, gram_inv) = ridge_fit(&phis, &data.values, 0..n, cfg.ridge)?;
    let members = match cfg.mode {
        Uncertainty::Ucb => Vec::new(),
        Uncertainty::Bootstrap => {
            let mut rng = rng::stream(seed, Domain::Online, &[round as u64]);
            (0..cfg.members.max(1))
                .map(|_| {
                    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                    ridge_fit(&phis, &data.values, idx.into_iter(), cfg.ridge).map(|(w, _)| w)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(SurrogateModel { dim: d, config: cfg.clone(), weights, gram_inv, members })
}

impl SurrogateModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.weights, &features(x))
    }

    fn predict_gradient(&self, w: &[f64], jac: &Mat) -> Vec<f64> {
        jac.t_mul_vec(w)
    }

    /// Optimism bonus `ĝ(x)`.
    pub fn bonus(&self, x: &[f64]) -> f64 {
        self.bonus_with_gradient(x).0
    }

    fn bonus_with_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim;
        let phi = features(x);
        let jac = feature_jacobian(x);
        match self.config.mode {
            Uncertainty::Ucb => {
                let beta = self.config.beta;
                if beta == 0.0 {
                    return (0.0, vec![0.0; d]);
                }
                let s_phi = self.gram_inv.mul_vec(&phi);
                let q = dot(&phi, &s_phi).max(0.0);
                let root = q.sqrt();
                if root == 0.0 {
                    return (0.0, vec![0.0; d]);
                }
                // ∇ √q = Jᵀ Σ⁻¹ φ / √q
                let g = jac.t_mul_vec(&s_phi).into_iter().map(|v| beta * v / root).collect();
                (beta * root, g)
            }
            Uncertainty::Bootstrap => {
                let m = self.members.len() as f64;
                let preds: Vec<f64> = self.members.iter().map(|w| dot(w, &phi)).collect();
                let mean = preds.iter().sum::<f64>() / m;
                let var = preds.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / m;
                let sd = var.sqrt();
                if sd == 0.0 {
                    return (0.0, vec![0.0; d]);
                }
                let grads: Vec<Vec<f64>> = self.members.iter().map(|w| self.predict_gradient(w, &jac)).collect();
                let mut g = vec![0.0; d];
                let mean_grad: Vec<f64> = (0..d).map(|k| grads.iter().map(|gr| gr[k]).sum::<f64>() / m).collect();
                for (p, gr) in preds.iter().zip(&grads) {
                    for k in 0..d {
                        g[k] += (p - mean) * (gr[k] - mean_grad[k]) / (m * sd);
                    }
                }
                (sd, g)
            }
        }
    }

    /// The point prediction as `−xᵀAx + bᵀx + c`; `A` may be indefinite.
    pub fn to_quadratic(&self) -> QuadraticReward {
        let d = self.dim;
        let w = &self.weights;
        let mut a = Mat::zeros(d, d);
        let mut k = 1 + d;
        for i in 0..d {
            for j in i..d {
                if i == j {
                    a[(i, i)] = -w[k];
                } else {
                    a[(i, j)] = -0.5 * w[k];
                    a[(j, i)] = -0.5 * w[k];
                }
                k += 1;
            }
        }
        QuadraticReward::new_unchecked(a, w[1..=d].to_vec(), w[0])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn optimistic_bonus(model: &SurrogateModel, x: &[f64]) -> f64 {
    model.bonus(x)
}

/// `r̂(x) + ĝ(x)`, the reward the sampler is tilted by.
#[derive(Debug, Clone, Copy)]
pub struct OptimisticReward<'a>(pub &'a SurrogateModel);

impl RewardModel for OptimisticReward<'_> {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.0.predict(x) + self.0.bonus(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let jac = feature_jacobian(x);
        let (_, gb) = self.0.bonus_with_gradient(x);
        self.0.predict_gradient(&self.0.weights, &jac).iter().zip(gb).map(|(a, b)| a + b).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    pub rounds: usize,
    pub budget: usize,
    /// Standard deviation of the feedback noise.
    pub noise_std: f64,
    /// Prior samples on which the surrogate error is measured each round.
    pub holdout: usize,
    pub surrogate: SurrogateConfig,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self { rounds: 8, budget: 1024, noise_std: 0.1, holdout: 512, surrogate: SurrogateConfig::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub queries_used: usize,
    pub mean_true_reward: f64,
    /// Surrogate error after refitting on all feedback up to this round.
    pub surrogate_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct OnlineHistory {
    pub rounds: Vec<RoundRecord>,
    pub data: FeedbackDataset,
    pub surrogate: SurrogateModel,
    /// Points queried in the last round.
    pub final_samples: Array2<f64>,
}

impl OnlineHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,queries_used,mean_true_reward,surrogate_rmse\n");
        for r in &self.rounds {
            let _ = writeln!(out, "{},{},{},{}", r.round, r.queries_used, r.mean_true_reward, r.surrogate_rmse);
        }
        out
    }
}

/// Runs `K` rounds of: sample a batch of `budget / K` points (round 1 from the
/// pre-trained model, later rounds by SMC towards `p_pre · exp((r̂ + ĝ)/α)`),
/// query the black box with Gaussian noise, refit the surrogate on all data.
pub fn run_online_loop<P, B>(provider: &P, black_box: &B, smc: &SmcConfig, cfg: &OnlineConfig) -> Result<OnlineHistory>
where
    P: ScoreProvider + ?Sized,
    B: RewardModel + ?Sized,
{
    smc.validate()?;
    check_dim(provider.dim(), black_box.dim())?;
    if cfg.rounds == 0 || cfg.budget < cfg.rounds {
        return Err(DasError::Input("online loop needs at least one round and one query per round".into()));
    }
    let batch = cfg.budget / cfg.rounds;
    let d = provider.dim();
    let holdout = ancestral_sample(provider, cfg.holdout.max(1), rng::stream_key(cfg.seed, Domain::Online, &[u64::MAX]))?;
    let holdout_truth: Vec<f64> = holdout.rows().into_iter().map(|r| black_box.value(&r.to_vec())).collect();
    let mut noise = rng::stream(cfg.seed, Domain::Online, &[u64::MAX - 1]);
    let mut data = FeedbackDataset::default();
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut model: Option<SurrogateModel> = None;
    let mut last = Array2::zeros((0, d));
    for round in 1..=cfg.rounds {
        let wrap = |e: DasError| DasError::OnlineRound { round, alpha: smc.alpha, source: Box::new(e) };
        let round_seed = rng::stream_key(cfg.seed, Domain::Online, &[round as u64]);
        let samples = match &model {
            None => ancestral_sample(provider, batch, round_seed).map_err(wrap)?,
            Some(m) => {
                let sweeps = batch.div_ceil(smc.particles);
                let run_cfg = SmcConfig { seed: round_seed, ..smc.clone() };
                let pooled = sample_pooled(&run_cfg, provider, &OptimisticReward(m), sweeps).map_err(wrap)?;
                pooled.samples.slice(ndarray::s![..batch, ..]).to_owned()
            }
        };
        let mut true_sum = 0.0;
        for row in samples.rows() {
            let x = row.to_vec();
            let r = black_box.value(&x);
            if !r.is_finite() {
                return Err(wrap(DasError::Input("black-box reward is not finite".into())));
            }
            true_sum += r;
            let y = r + cfg.noise_std * rng::normal_vec(&mut noise, 1)[0];
            data.push(round, x, y);
        }
        let fitted = fit_surrogate(&data, &cfg.surrogate, cfg.seed, round).map_err(wrap)?;
        let mse = holdout
            .rows()
            .into_iter()
            .zip(&holdout_truth)
            .map(|(r, t)| (fitted.predict(&r.to_vec()) - t).powi(2))
            .sum::<f64>()
            / holdout_truth.len() as f64;
        records.push(RoundRecord {
            round,
            queries_used: data.len(),
            mean_true_reward: true_sum / batch as f64,
            surrogate_rmse: mse.sqrt(),
        });
        model = Some(fitted);
        last = samples;
    }
    Ok(OnlineHistory { rounds: records, data, surrogate: model.expect("at least one round"), final_samples: last })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(f: impl Fn(&[f64]) -> f64, n: usize, seed: u64) -> FeedbackDataset {
        let mut rng = rng::stream(seed, Domain::Data, &[]);
        let mut data = FeedbackDataset::default();
        for _ in 0..n {
            let x = rng::normal_vec(&mut rng, 2);
            let y = f(&x);
            data.push(1, x, y);
        }
        data
    }

    #[test]
    fn feature_layout() {
        assert_eq!(features(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(feature_count(3), 10);
    }

    #[test]
    fn constant_observations_give_a_constant_predictor() {
        let data = dataset(|_| 2.5, 50, 1);
        let m = fit_surrogate(&data, &SurrogateConfig::default(), 0, 1).unwrap();
        for x in [[0.0, 0.0], [1.0, -2.0], [3.0, 3.0]] {
            assert!((m.predict(&x) - 2.5).abs() < 1e-3, "{}", m.predict(&x));
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        let data = dataset(|_| 1.0, 2, 1);
        assert!(fit_surrogate(&data, &SurrogateConfig::default(), 0, 1).is_err());
    }

    #[test]
    fn single_member_without_spread_matches_point_estimate() {
        let r = QuadraticReward::toy_bottom();
        let data = dataset(|x| r.value(x), 40, 3);
        let ucb = fit_surrogate(&data, &SurrogateConfig::default(), 0, 1).unwrap();
        let boot = fit_surrogate(&data, &SurrogateConfig { mode: Uncertainty::Bootstrap, members: 1, ..Default::default() }, 0, 1).unwrap();
        assert_eq!(ucb.weights, boot.weights);
        assert_eq!(boot.bonus(&[0.3, 0.1]), 0.0);
    }

    #[test]
    fn zero_beta_gives_no_bonus() {
        let data = dataset(|x| x[0], 30, 2);
        let m = fit_surrogate(&data, &SurrogateConfig { beta: 0.0, ..Default::default() }, 0, 1).unwrap();
        assert_eq!(m.bonus(&[10.0, -4.0]), 0.0);
    }

    #[test]
    fn noiseless_quadratic_is_recovered() {
        let r = QuadraticReward::toy_top();
        let data = dataset(|x| r.value(x), 200, 5);
        // the default ridge shrinks weights by O(λ/n), a few 1e-6 here
        let m = fit_surrogate(&data, &SurrogateConfig { ridge: 1e-6, ..Default::default() }, 0, 1).unwrap();
        let grid = crate::score_net::grid_2d(21, 3.0);
        let (mut num, mut den) = (0.0, 0.0);
        for row in grid.rows() {
            let x = row.to_vec();
            num += (m.predict(&x) - r.value(&x)).powi(2);
            den += r.value(&x).powi(2);
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn bonus_grows_away_from_the_data() {
        let data = dataset(|x| x[0] + x[1], 60, 6);
        let m = fit_surrogate(&data, &SurrogateConfig::default(), 0, 1).unwrap();
        let centroid: Vec<f64> = (0..2).map(|k| data.points.iter().map(|p| p[k]).sum::<f64>() / 60.0).collect();
        assert!(m.bonus(&[8.0, -8.0]) > m.bonus(&centroid));
    }

    #[test]
    fn duplicating_data_shrinks_the_bonus() {
        let data = dataset(|x| x[0] * x[1], 30, 7);
        let mut twice = data.clone();
        for (x, y) in data.points.iter().zip(&data.values) {
            twice.push(1, x.clone(), *y);
        }
        let a = fit_surrogate(&data, &SurrogateConfig::default(), 0, 1).unwrap();
        let b = fit_surrogate(&twice, &SurrogateConfig::default(), 0, 1).unwrap();
        for x in crate::score_net::grid_2d(7, 4.0).rows() {
            let x = x.to_vec();
            assert!(b.bonus(&x) <= a.bonus(&x) + 1e-12);
        }
    }

    #[test]
    fn optimistic_gradient_matches_finite_differences() {
        let data = dataset(|x| -x[0] * x[0] + 0.3 * x[1], 40, 8);
        for mode in [Uncertainty::Ucb, Uncertainty::Bootstrap] {
            let m = fit_surrogate(&data, &SurrogateConfig { mode, beta: 2.0, ..Default::default() }, 3, 2).unwrap();
            let r = OptimisticReward(&m);
            for x in [[0.3, -0.7], [1.5, 2.0], [-2.0, 0.1]] {
                let g = r.gradient(&x);
                let h = 1e-6;
                for k in 0..2 {
                    let (mut p, mut q) = (x, x);
                    p[k] += h;
                    q[k] -= h;
                    let fd = (r.value(&p) - r.value(&q)) / (2.0 * h);
                    let rel = (fd - g[k]).abs() / g[k].abs().max(1e-3);
                    assert!(rel < 1e-4, "{mode:?} {x:?} {k}: {fd} vs {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn quadratic_round_trip() {
        let r = QuadraticReward::toy_bottom();
        let data = dataset(|x| r.value(x), 100, 4);
        let m = fit_surrogate(&data, &SurrogateConfig { ridge: 1e-12, ..Default::default() }, 0, 1).unwrap();
        let q = m.to_quadratic();
        for x in [[0.1, 0.2], [-1.0, 2.0]] {
            assert!((q.value(&x) - m.predict(&x)).abs() < 1e-12);
            assert!((q.value(&x) - r.value(&x)).abs() < 1e-8);
        }
    }
}
