use das_core::analytic::{Gmm, QuadraticReward};
use das_core::diffusion::AnalyticScore;
use das_core::error::DasError;
use das_core::online::*;
use das_core::schedule::NoiseSchedule;
use das_core::smc::SmcConfig;

fn canonical() -> (Gmm, AnalyticScore) {
    let prior = Gmm::canonical_2d();
    let p = AnalyticScore::new(&prior, &NoiseSchedule::default());
    (prior, p)
}

#[test]
fn single_round_stays_in_the_prior_band() {
    let (prior, p) = canonical();
    let r = QuadraticReward::toy_bottom();
    let cfg = OnlineConfig { rounds: 1, budget: 128, seed: 4, ..Default::default() };
    let h = run_online_loop(&p, &r, &SmcConfig::default(), &cfg).unwrap();
    assert_eq!(h.rounds.len(), 1);
    let draws = prior.sample(20_000, 1);
    let values: Vec<f64> = draws.rows().into_iter().map(|x| r.value(&x.to_vec())).collect();
    let sd = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64 - prior.expect_quadratic(&r).powi(2)).sqrt();
    let band = 4.0 * sd / (128f64).sqrt();
    assert!((h.rounds[0].mean_true_reward - prior.expect_quadratic(&r)).abs() < band);
}

#[test]
fn both_uncertainty_modes_spend_the_same_budget() {
    let (_, p) = canonical();
    let r = QuadraticReward::toy_top();
    let smc = SmcConfig::default();
    for mode in [Uncertainty::Ucb, Uncertainty::Bootstrap] {
        let cfg = OnlineConfig { rounds: 4, budget: 250, surrogate: SurrogateConfig { mode, ..Default::default() }, ..Default::default() };
        let h = run_online_loop(&p, &r, &smc, &cfg).unwrap();
        assert_eq!(h.rounds.len(), 4);
        assert_eq!(h.data.len(), 248);
        for (k, rec) in h.rounds.iter().enumerate() {
            assert_eq!(rec.queries_used, 62 * (k + 1));
            assert_eq!(h.data.rounds.iter().filter(|&&i| i == k + 1).count(), 62);
        }
        assert_eq!(h.final_samples.nrows(), 62);
        let csv = h.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "round,queries_used,mean_true_reward,surrogate_rmse");
        assert_eq!(csv.lines().count(), 5);
        let back: SurrogateModel = serde_json::from_str(&h.surrogate.to_json().unwrap()).unwrap();
        assert_eq!(back, h.surrogate);
    }
}

#[test]
fn runaway_surrogate_tilt_reports_the_round() {
    let (_, p) = canonical();
    // a convex black box: its surrogate tilt has no normalizer
    let up = Bowl;
    let smc = SmcConfig { alpha: 1e-4, ..Default::default() };
    let cfg = OnlineConfig { rounds: 3, budget: 96, ..Default::default() };
    match run_online_loop(&p, &up, &smc, &cfg) {
        Err(DasError::OnlineRound { round, alpha, .. }) => {
            assert!(round >= 2);
            assert_eq!(alpha, 1e-4);
        }
        other => panic!("expected a round error, got {other:?}"),
    }
}

struct Bowl;

impl das_core::reward::RewardModel for Bowl {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        50.0 * (x[0] * x[0] + x[1] * x[1])
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![100.0 * x[0], 100.0 * x[1]]
    }
}
