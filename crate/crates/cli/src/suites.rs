//! Named experiment suites. Each returns its panels, a metrics object and a
//! trace table; `main` writes them out.

use anyhow::{Context, Result};
use das_core::analytic::{make_swiss_roll, Gmm, QuadraticReward, SWISS_ROLL_NOISE};
use das_core::baselines::{approx_guidance_sample, best_of_n, smc_no_temper, NoTemperVariant};
use das_core::diffusion::{ancestral_sample, AnalyticScore, ScoreProvider};
use das_core::emd::{emd_capped, summary_stats, tilted_resample, Metrics};
use das_core::online::run_online_loop;
use das_core::reward::RewardModel;
use das_core::schedule::NoiseSchedule;
use das_core::score_net::{
    backprop_gradcheck, grid_2d, median_score_error, train_denoiser, MlpDenoiser, NetScore, TrainedDenoiser,
};
use das_core::smc::{run_sweep, sample_pooled, PooledRun, SmcConfig, SmcTrace, Tempering};
use ndarray::{s, Array2};
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::artifacts::{traces_csv, Panel};
use crate::config::{Config, Resolved};

/// Seed offset of the draws EMD is measured against, so they never share a
/// stream with a displayed panel.
const REFERENCE_OFFSET: u64 = 1 << 32;

pub struct Suite {
    pub name: &'static str,
    pub about: &'static str,
    /// Wall time with defaults, release build, one core.
    pub runtime: &'static str,
    pub defaults: fn() -> Config,
    pub run: fn(&Config, &Resolved) -> Result<Output>,
}

pub struct Output {
    pub panels: Vec<Panel>,
    pub metrics: Map<String, Value>,
    pub trace_csv: String,
    /// Additional files, by name.
    pub extras: Vec<(String, String)>,
    /// Coordinates drawn in the scatter.
    pub axes: (usize, usize),
    /// Panel the scatter frame is fitted to.
    pub frame: usize,
}

fn with(f: impl FnOnce(&mut Config)) -> Config {
    let mut c = Config::default();
    f(&mut c);
    c
}

pub fn registry() -> Vec<Suite> {
    vec![
        Suite {
            name: "fig1-top",
            about: "canonical 2D mixture, reward -x²/100 - y²: pretrained, exact tilt, guidance, untempered SMC and DAS",
            runtime: "2s",
            defaults: Config::default,
            run: |c, r| fig1(c, r, "top"),
        },
        Suite {
            name: "fig1-bottom",
            about: "canonical 2D mixture, reward -x² - (y-1)²/10: same panels as fig1-top",
            runtime: "2s",
            defaults: || with(|c| c.experiment.reward = "bottom".into()),
            run: |c, r| fig1(c, r, "bottom"),
        },
        Suite {
            name: "swiss-roll",
            about: "trains a 3D score net on the swiss roll (or loads experiment.score_net), then DAS vs guidance against a resampled reference",
            runtime: "1min",
            defaults: || with(|c| c.train.data = "swiss-roll".into()),
            run: swiss_roll,
        },
        Suite {
            name: "ablate-tempering",
            about: "EMD of tempered vs untempered SMC across particle counts",
            runtime: "15s",
            defaults: || with(|c| c.experiment.repeats = 5),
            run: ablate_tempering,
        },
        Suite {
            name: "convergence",
            about: "RMSE of the DAS mean-reward estimate against the exact tilt as N grows, with the log-log slope",
            runtime: "15s",
            defaults: || {
                with(|c| {
                    c.experiment.repeats = 200;
                    c.experiment.particle_grid = vec![4, 8, 16, 32, 64, 128];
                })
            },
            run: convergence,
        },
        Suite {
            name: "variance",
            about: "seed variance of the mean-reward estimate with and without tempering, one-sided F-test",
            runtime: "5s",
            defaults: || with(|c| c.experiment.repeats = 200),
            run: variance,
        },
        Suite {
            name: "scaling",
            about: "reward and EMD against inference compute: best-of-n vs DAS with n particles",
            runtime: "10s",
            defaults: || with(|c| c.experiment.particle_grid = vec![1, 2, 4, 8, 16, 32]),
            run: scaling,
        },
        Suite {
            name: "online",
            about: "online black-box optimization with an optimistic quadratic surrogate and DAS sampling per round",
            runtime: "1s",
            defaults: Config::default,
            run: online,
        },
        Suite {
            name: "train-score",
            about: "trains the MLP denoiser on mixture (train.data = gmm) or swiss-roll data and reports its score error",
            runtime: "45s",
            defaults: Config::default,
            run: train_score,
        },
    ]
}

pub fn find(name: &str) -> Option<Suite> {
    registry().into_iter().find(|s| s.name == name)
}

fn canonical() -> (Gmm, AnalyticScore) {
    let prior = Gmm::canonical_2d();
    let p = AnalyticScore::new(&prior, &NoiseSchedule::default());
    (prior, p)
}

fn toy_reward(name: &str) -> QuadraticReward {
    match name {
        "bottom" => QuadraticReward::toy_bottom(),
        _ => QuadraticReward::toy_top(),
    }
}

fn seeds(cfg: &Config) -> Vec<u64> {
    (0..cfg.experiment.repeats as u64).map(|k| cfg.seed + k).collect()
}

/// Pooled SMC output cut to exactly `n` rows.
fn pooled<P, R>(smc: &SmcConfig, p: &P, r: &R, n: usize) -> Result<PooledRun>
where
    P: ScoreProvider + ?Sized,
    R: RewardModel + ?Sized,
{
    let mut run = sample_pooled(smc, p, r, n.div_ceil(smc.particles))?;
    run.samples = run.samples.slice(s![..n, ..]).to_owned();
    Ok(run)
}

fn untempered(smc: &SmcConfig, particles: usize, seed: u64) -> SmcConfig {
    SmcConfig { particles, seed, tempering: Tempering::Off, ..smc.clone() }
}

fn metrics_for<R: RewardModel + ?Sized>(
    panel: &Panel,
    reference: &Array2<f64>,
    emd_self: f64,
    reward: &R,
    modes: Option<&Gmm>,
    seed: u64,
) -> Result<Metrics> {
    let stats = summary_stats(panel.samples.view(), reward, modes)?;
    Ok(Metrics {
        method: panel.method.clone(),
        emd: emd_capped(panel.samples.view(), reference.view(), seed)?,
        emd_self,
        mean_reward: stats.mean_reward,
        reward_std: stats.reward_std,
        mode_counts: stats.mode_counts,
        n: panel.samples.nrows(),
        seed,
    })
}

fn color_by_mode(panels: &mut [Panel], gmm: &Gmm) {
    for p in panels {
        p.colors = gmm.assign_modes(&p.samples).unwrap_or_default();
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0).max(1.0)
}

/// Least-squares slope of `ln y` against `ln x`.
fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    cov / lx.iter().map(|a| (a - mx).powi(2)).sum::<f64>()
}

struct SeedRun {
    panels: Vec<Panel>,
    metrics: Vec<Metrics>,
    traces: Vec<(String, SmcTrace)>,
}

fn emd_table(runs: &[SeedRun]) -> (Vec<Value>, Map<String, Value>) {
    let rows = runs
        .iter()
        .map(|r| {
            let mut row = Map::new();
            row.insert("seed".into(), json!(r.metrics[0].seed));
            for m in &r.metrics {
                row.insert(m.method.clone(), json!(m.emd));
            }
            Value::Object(row)
        })
        .collect();
    let mut means = Map::new();
    for (k, m) in runs[0].metrics.iter().enumerate() {
        let v: Vec<f64> = runs.iter().map(|r| r.metrics[k].emd).collect();
        means.insert(m.method.clone(), json!(mean(&v)));
    }
    (rows, means)
}

fn fig1(cfg: &Config, res: &Resolved, reward_name: &str) -> Result<Output> {
    let (prior, p) = canonical();
    let r = toy_reward(reward_name);
    let alpha = res.smc.alpha;
    let tilted = prior.tilt_quadratic(&r, alpha).context("exact tilted target")?;
    let n = cfg.experiment.pooled;
    let runs = seeds(cfg)
        .into_par_iter()
        .map(|seed| -> Result<SeedRun> {
            let smc = SmcConfig { seed, ..res.smc.clone() };
            let reference = tilted.sample(n, seed + REFERENCE_OFFSET);
            let das = pooled(&smc, &p, &r, n).context("DAS")?;
            let flat = smc_no_temper(&smc, &p, &r, NoTemperVariant::Guided, n.div_ceil(smc.particles)).context("untempered SMC")?;
            let guided = approx_guidance_sample(&p, &r, alpha, cfg.experiment.guidance_scale, n, seed).context("guidance")?;
            let panels = vec![
                Panel::iid("pretrained", ancestral_sample(&p, n, seed).context("ancestral sampling")?),
                Panel::iid("target-oracle", tilted.sample(n, seed)),
                Panel::iid("guidance", guided),
                Panel::pooled("smc-no-temper", flat.samples.slice(s![..n, ..]).to_owned(), smc.particles),
                Panel::pooled("das", das.samples.clone(), smc.particles),
            ];
            let emd_self = emd_capped(panels[1].samples.view(), reference.view(), seed)?;
            let metrics = panels
                .iter()
                .map(|pn| metrics_for(pn, &reference, emd_self, &r, Some(&prior), seed))
                .collect::<Result<Vec<_>>>()?;
            let mut traces: Vec<(String, SmcTrace)> = das.traces.into_iter().map(|t| ("das".to_string(), t)).collect();
            traces.extend(flat.traces.into_iter().map(|t| ("smc-no-temper".to_string(), t)));
            Ok(SeedRun { panels, metrics, traces })
        })
        .collect::<Result<Vec<_>>>()?;
    let (table, means) = emd_table(&runs);
    let wins = runs
        .iter()
        .filter(|run| {
            let das = run.metrics[4].emd;
            [2usize, 3].iter().all(|&j| das <= 0.9 * run.metrics[j].emd)
        })
        .count();
    let first = runs.into_iter().next().expect("at least one seed");
    let mut panels = first.panels;
    color_by_mode(&mut panels, &prior);
    let mut metrics = Map::new();
    metrics.insert("reward".into(), json!(reward_name));
    metrics.insert("alpha".into(), json!(alpha));
    metrics.insert("tilted_weights".into(), json!(tilted.weights()));
    metrics.insert("methods".into(), json!(first.metrics));
    metrics.insert("emd_by_seed".into(), Value::Array(table));
    metrics.insert("mean_emd".into(), Value::Object(means));
    metrics.insert("das_10pct_better_than_guidance_and_untempered".into(), json!(wins));
    Ok(Output {
        panels,
        metrics,
        trace_csv: traces_csv(first.traces.iter().map(|(l, t)| (l.clone(), t))),
        extras: Vec::new(),
        axes: (0, 1),
        frame: 1,
    })
}

fn train_or_load(cfg: &Config, res: &Resolved, data: &Array2<f64>) -> Result<(MlpDenoiser, Option<TrainedDenoiser>)> {
    let path = &cfg.experiment.score_net;
    if !path.is_empty() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading score net {path}"))?;
        let net = MlpDenoiser::from_json(&text).with_context(|| format!("parsing score net {path}"))?;
        anyhow::ensure!(net.dim() == data.ncols(), "score net {path} is {}-dimensional, data is {}", net.dim(), data.ncols());
        return Ok((net, None));
    }
    let trained = train_denoiser(data.view(), &NoiseSchedule::default(), &res.train).context("training the score net")?;
    Ok((trained.net.clone(), Some(trained)))
}

fn swiss_roll(cfg: &Config, res: &Resolved) -> Result<Output> {
    let data = make_swiss_roll(cfg.train.samples, SWISS_ROLL_NOISE, cfg.seed);
    let (net, trained) = train_or_load(cfg, res, &data)?;
    let p = NetScore::new(net, &NoiseSchedule::default())?;
    let r = QuadraticReward::swiss_roll();
    let alpha = res.smc.alpha;
    let pool = make_swiss_roll(cfg.experiment.reference_pool, SWISS_ROLL_NOISE, cfg.seed + REFERENCE_OFFSET);
    let n = cfg.experiment.pooled;
    let runs = seeds(cfg)
        .into_par_iter()
        .map(|seed| -> Result<SeedRun> {
            let smc = SmcConfig { seed, ..res.smc.clone() };
            let reference = tilted_resample(pool.view(), &r, alpha, n, seed + REFERENCE_OFFSET)?;
            let das = pooled(&smc, &p, &r, n).context("DAS")?;
            let panels = vec![
                Panel::iid("pretrained", ancestral_sample(&p, n, seed).context("ancestral sampling")?),
                Panel::iid("target-resampled", tilted_resample(pool.view(), &r, alpha, n, seed)?),
                Panel::iid(
                    "guidance",
                    approx_guidance_sample(&p, &r, alpha, cfg.experiment.guidance_scale, n, seed).context("guidance")?,
                ),
                Panel::pooled("das", das.samples.clone(), smc.particles),
            ];
            let emd_self = emd_capped(panels[1].samples.view(), reference.view(), seed)?;
            let metrics = panels
                .iter()
                .map(|pn| metrics_for(pn, &reference, emd_self, &r, None, seed))
                .collect::<Result<Vec<_>>>()?;
            let traces = das.traces.into_iter().map(|t| ("das".to_string(), t)).collect();
            Ok(SeedRun { panels, metrics, traces })
        })
        .collect::<Result<Vec<_>>>()?;
    let (table, means) = emd_table(&runs);
    let wins = runs.iter().filter(|run| run.metrics[3].emd < run.metrics[2].emd).count();
    let first = runs.into_iter().next().expect("at least one seed");
    let mut metrics = Map::new();
    metrics.insert("alpha".into(), json!(alpha));
    metrics.insert("methods".into(), json!(first.metrics));
    metrics.insert("emd_by_seed".into(), Value::Array(table));
    metrics.insert("mean_emd".into(), Value::Object(means));
    metrics.insert("das_better_than_guidance".into(), json!(wins));
    let mut extras = Vec::new();
    if let Some(t) = &trained {
        metrics.insert("final_training_loss".into(), json!(t.losses.last()));
        extras.push(("net.json".to_string(), t.net.to_json()?));
        extras.push(("loss.csv".to_string(), t.loss_csv()));
    }
    Ok(Output {
        panels: first.panels,
        metrics,
        trace_csv: traces_csv(first.traces.iter().map(|(l, t)| (l.clone(), t))),
        extras,
        axes: (0, 2),
        frame: 1,
    })
}

fn ablate_tempering(cfg: &Config, res: &Resolved) -> Result<Output> {
    let (prior, p) = canonical();
    let r = toy_reward(&cfg.experiment.reward);
    let tilted = prior.tilt_quadratic(&r, res.smc.alpha)?;
    let n = cfg.experiment.pooled;
    let grid = &cfg.experiment.particle_grid;
    let jobs: Vec<(usize, u64)> = grid.iter().flat_map(|&k| seeds(cfg).into_iter().map(move |s| (k, s))).collect();
    let results = jobs
        .par_iter()
        .map(|&(k, seed)| -> Result<(f64, f64, PooledRun, PooledRun)> {
            let reference = tilted.sample(n, seed + REFERENCE_OFFSET);
            let das = pooled(&SmcConfig { particles: k, seed, ..res.smc.clone() }, &p, &r, n)?;
            let flat = pooled(&untempered(&res.smc, k, seed), &p, &r, n)?;
            Ok((emd_capped(das.samples.view(), reference.view(), seed)?, emd_capped(flat.samples.view(), reference.view(), seed)?, das, flat))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut panels = vec![Panel::iid("target-oracle", tilted.sample(n, cfg.seed))];
    let mut traces = Vec::new();
    for &k in grid {
        let here: Vec<(u64, &(f64, f64, PooledRun, PooledRun))> =
            jobs.iter().zip(&results).filter(|((kk, _), _)| *kk == k).map(|((_, s), r)| (*s, r)).collect();
        for (seed, (t, u, _, _)) in &here {
            rows.push(json!({"particles": k, "seed": seed, "tempered_emd": t, "untempered_emd": u}));
        }
        let t: Vec<f64> = here.iter().map(|h| h.1 .0).collect();
        let u: Vec<f64> = here.iter().map(|h| h.1 .1).collect();
        summary.push(json!({
            "particles": k,
            "tempered_mean_emd": mean(&t),
            "tempered_sd": sample_var(&t).sqrt(),
            "untempered_mean_emd": mean(&u),
            "untempered_sd": sample_var(&u).sqrt(),
        }));
        let (_, (_, _, das, flat)) = here[0];
        panels.push(Panel::pooled(format!("das-N{k}"), das.samples.clone(), k));
        panels.push(Panel::pooled(format!("smc-no-temper-N{k}"), flat.samples.clone(), k));
        traces.extend(das.traces.iter().map(|t| (format!("das-N{k}"), t)));
        traces.extend(flat.traces.iter().map(|t| (format!("smc-no-temper-N{k}"), t)));
    }
    color_by_mode(&mut panels, &prior);
    let mut metrics = Map::new();
    metrics.insert("reward".into(), json!(cfg.experiment.reward));
    metrics.insert("summary".into(), Value::Array(summary));
    metrics.insert("emd_by_seed".into(), Value::Array(rows));
    Ok(Output {
        trace_csv: traces_csv(traces.into_iter().map(|(l, t)| (l, t))),
        panels,
        metrics,
        extras: Vec::new(),
        axes: (0, 1),
        frame: 0,
    })
}

/// Self-normalized estimate of the mean reward from one sweep.
fn estimate(smc: &SmcConfig, p: &AnalyticScore, r: &QuadraticReward) -> Result<(f64, SmcTrace, Array2<f64>)> {
    let (ens, trace) = run_sweep(smc, p, r, 0)?;
    let est = trace.weighted_final.weighted_mean(|x| r.value(x))?;
    Ok((est, trace, ens.positions))
}

fn convergence(cfg: &Config, res: &Resolved) -> Result<Output> {
    let (prior, p) = canonical();
    let r = toy_reward(&cfg.experiment.reward);
    let tilted = prior.tilt_quadratic(&r, res.smc.alpha)?;
    let truth = tilted.expect_quadratic(&r);
    let grid = &cfg.experiment.particle_grid;
    let mut rows = Vec::new();
    let mut rmse = Vec::new();
    let mut panels = vec![Panel::iid("target-oracle", tilted.sample(*grid.iter().max().unwrap(), cfg.seed))];
    let mut traces = Vec::new();
    for &k in grid {
        let runs = seeds(cfg)
            .into_par_iter()
            .map(|seed| estimate(&SmcConfig { particles: k, seed, ..res.smc.clone() }, &p, &r))
            .collect::<Result<Vec<_>>>()?;
        let est: Vec<f64> = runs.iter().map(|x| x.0).collect();
        let e = (est.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / est.len() as f64).sqrt();
        rmse.push(e);
        rows.push(json!({"particles": k, "rmse": e, "bias": mean(&est) - truth, "sd": sample_var(&est).sqrt()}));
        let (_, trace, positions) = runs.into_iter().next().expect("at least one seed");
        panels.push(Panel::pooled(format!("das-N{k}"), positions, k));
        traces.push((format!("das-N{k}"), trace));
    }
    color_by_mode(&mut panels, &prior);
    let xs: Vec<f64> = grid.iter().map(|&k| k as f64).collect();
    let mut metrics = Map::new();
    metrics.insert("reward".into(), json!(cfg.experiment.reward));
    metrics.insert("oracle_mean_reward".into(), json!(truth));
    metrics.insert("by_particles".into(), Value::Array(rows));
    metrics.insert("log_log_slope".into(), json!(if grid.len() > 1 { log_log_slope(&xs, &rmse) } else { f64::NAN }));
    Ok(Output {
        trace_csv: traces_csv(traces.iter().map(|(l, t)| (l.clone(), t))),
        panels,
        metrics,
        extras: Vec::new(),
        axes: (0, 1),
        frame: 0,
    })
}

fn variance(cfg: &Config, res: &Resolved) -> Result<Output> {
    let (prior, p) = canonical();
    let r = toy_reward(&cfg.experiment.reward);
    let tilted = prior.tilt_quadratic(&r, res.smc.alpha)?;
    let truth = tilted.expect_quadratic(&r);
    let k = res.smc.particles;
    let both = seeds(cfg)
        .into_par_iter()
        .map(|seed| -> Result<(f64, f64)> {
            let t = estimate(&SmcConfig { seed, ..res.smc.clone() }, &p, &r)?.0;
            let u = estimate(&untempered(&res.smc, k, seed), &p, &r)?.0;
            Ok((t, u))
        })
        .collect::<Result<Vec<_>>>()?;
    let t: Vec<f64> = both.iter().map(|b| b.0).collect();
    let u: Vec<f64> = both.iter().map(|b| b.1).collect();
    let (vt, vu) = (sample_var(&t), sample_var(&u));
    let ratio = vt / vu;
    let mut metrics = Map::new();
    if t.len() > 1 {
        let dof = (t.len() - 1) as f64;
        let f = FisherSnedecor::new(dof, dof)?;
        // one-sided: small p rejects Var(tempered) >= Var(untempered)
        metrics.insert("f_test_p".into(), json!(f.cdf(ratio)));
        metrics.insert("f_critical_5pct".into(), json!(f.inverse_cdf(0.05)));
    }
    metrics.insert("reward".into(), json!(cfg.experiment.reward));
    metrics.insert("particles".into(), json!(k));
    metrics.insert("oracle_mean_reward".into(), json!(truth));
    metrics.insert("tempered".into(), json!({"mean": mean(&t), "variance": vt}));
    metrics.insert("untempered".into(), json!({"mean": mean(&u), "variance": vu}));
    metrics.insert("variance_ratio".into(), json!(ratio));
    let mut csv = String::from("seed,tempered,untempered\n");
    for (seed, (a, b)) in seeds(cfg).iter().zip(&both) {
        csv.push_str(&format!("{seed},{a},{b}\n"));
    }

    let n = cfg.experiment.pooled;
    let das = pooled(&SmcConfig { seed: cfg.seed, ..res.smc.clone() }, &p, &r, n)?;
    let flat = pooled(&untempered(&res.smc, k, cfg.seed), &p, &r, n)?;
    let mut panels = vec![
        Panel::iid("target-oracle", tilted.sample(n, cfg.seed)),
        Panel::pooled("das", das.samples.clone(), k),
        Panel::pooled("smc-no-temper", flat.samples.clone(), k),
    ];
    color_by_mode(&mut panels, &prior);
    let traces = das.traces.iter().map(|t| ("das".to_string(), t)).chain(flat.traces.iter().map(|t| ("smc-no-temper".to_string(), t)));
    Ok(Output { trace_csv: traces_csv(traces), panels, metrics, extras: vec![("estimates.csv".into(), csv)], axes: (0, 1), frame: 0 })
}

fn scaling(cfg: &Config, res: &Resolved) -> Result<Output> {
    let (prior, p) = canonical();
    let r = toy_reward(&cfg.experiment.reward);
    let tilted = prior.tilt_quadratic(&r, res.smc.alpha)?;
    let n = cfg.experiment.pooled;
    let grid = &cfg.experiment.particle_grid;
    let reference = tilted.sample(n, cfg.seed + REFERENCE_OFFSET);
    let mut rows = Vec::new();
    let mut panels = vec![Panel::iid("target-oracle", tilted.sample(n, cfg.seed))];
    let mut traces = Vec::new();
    let last = *grid.last().unwrap();
    for &k in grid {
        let per_seed = seeds(cfg)
            .into_par_iter()
            .map(|seed| -> Result<(Panel, Panel, Vec<SmcTrace>)> {
                let bon = Panel::iid(format!("best-of-{k}"), best_of_n(&p, &r, k, n, seed)?);
                let das = pooled(&SmcConfig { particles: k, seed, ..res.smc.clone() }, &p, &r, n)?;
                Ok((bon, Panel::pooled(format!("das-N{k}"), das.samples, k), das.traces))
            })
            .collect::<Result<Vec<_>>>()?;
        for (which, pick) in [("best-of-n", 0usize), ("das", 1)] {
            let ms = per_seed
                .iter()
                .map(|x| metrics_for(if pick == 0 { &x.0 } else { &x.1 }, &reference, f64::NAN, &r, None, cfg.seed))
                .collect::<Result<Vec<_>>>()?;
            let emd: Vec<f64> = ms.iter().map(|m| m.emd).collect();
            let rew: Vec<f64> = ms.iter().map(|m| m.mean_reward).collect();
            rows.push(json!({"method": which, "n": k, "mean_emd": mean(&emd), "mean_reward": mean(&rew)}));
        }
        let (bon, das, tr) = per_seed.into_iter().next().expect("at least one seed");
        if k == last {
            panels.push(bon);
            panels.push(das);
        }
        traces.extend(tr.into_iter().map(|t| (format!("das-N{k}"), t)));
    }
    color_by_mode(&mut panels, &prior);
    let mut metrics = Map::new();
    metrics.insert("reward".into(), json!(cfg.experiment.reward));
    metrics.insert("oracle_mean_reward".into(), json!(tilted.expect_quadratic(&r)));
    metrics.insert("by_compute".into(), Value::Array(rows));
    Ok(Output {
        trace_csv: traces_csv(traces.iter().map(|(l, t)| (l.clone(), t))),
        panels,
        metrics,
        extras: Vec::new(),
        axes: (0, 1),
        frame: 0,
    })
}

fn online(cfg: &Config, res: &Resolved) -> Result<Output> {
    let (prior, p) = canonical();
    let r = toy_reward(&cfg.experiment.reward);
    let tilted = prior.tilt_quadratic(&r, res.smc.alpha)?;
    let base = prior.expect_quadratic(&r);
    let oracle = tilted.expect_quadratic(&r);
    let h = run_online_loop(&p, &r, &res.smc, &res.online)?;
    let first = h.rounds.first().map_or(f64::NAN, |x| x.mean_true_reward);
    let last = h.rounds.last().map_or(f64::NAN, |x| x.mean_true_reward);
    let mut metrics = Map::new();
    metrics.insert("reward".into(), json!(cfg.experiment.reward));
    metrics.insert("rounds".into(), json!(h.rounds));
    metrics.insert("queries_used".into(), json!(h.data.len()));
    metrics.insert("prior_mean_reward".into(), json!(base));
    metrics.insert("oracle_mean_reward".into(), json!(oracle));
    metrics.insert("final_mean_reward".into(), json!(last));
    metrics.insert("fraction_of_oracle_gain".into(), json!((last - base) / (oracle - base)));
    metrics.insert("improved_over_round_1".into(), json!(last > first));
    let n = h.final_samples.nrows().max(1);
    let mut panels = vec![
        Panel::iid("pretrained", ancestral_sample(&p, n, cfg.seed)?),
        Panel::iid("target-oracle", tilted.sample(n, cfg.seed)),
        Panel::iid("final-round", h.final_samples.clone()),
    ];
    color_by_mode(&mut panels, &prior);
    Ok(Output {
        trace_csv: h.to_csv(),
        panels,
        metrics,
        extras: vec![("surrogate.json".into(), h.surrogate.to_json()?)],
        axes: (0, 1),
        frame: 1,
    })
}

fn train_score(cfg: &Config, res: &Resolved) -> Result<Output> {
    let roll = cfg.train.data == "swiss-roll";
    let prior = Gmm::canonical_2d();
    let data = if roll { make_swiss_roll(cfg.train.samples, SWISS_ROLL_NOISE, cfg.seed) } else { prior.sample(cfg.train.samples, cfg.seed) };
    let schedule = NoiseSchedule::default();
    let trained = train_denoiser(data.view(), &schedule, &res.train).context("training the score net")?;
    let p = NetScore::new(trained.net.clone(), &schedule)?;
    let n = cfg.experiment.pooled.min(data.nrows());
    let mut panels = vec![
        Panel::iid("training-data", data.slice(s![..n, ..]).to_owned()),
        Panel::iid("pretrained", ancestral_sample(&p, n, cfg.seed)?),
    ];
    let mut metrics = Map::new();
    metrics.insert("data".into(), json!(cfg.train.data));
    metrics.insert("epochs".into(), json!(trained.losses.len()));
    metrics.insert("final_loss".into(), json!(trained.losses.last()));
    metrics.insert("parameters".into(), json!(trained.net.n_params()));
    metrics.insert("gradcheck".into(), json!(backprop_gradcheck(&trained.net)));
    metrics.insert(
        "emd_to_held_out_data".into(),
        json!(emd_capped(panels[1].samples.view(), (if roll { make_swiss_roll(n, SWISS_ROLL_NOISE, cfg.seed + REFERENCE_OFFSET) } else { prior.sample(n, cfg.seed + REFERENCE_OFFSET) }).view(), cfg.seed)?),
    );
    if !roll {
        let exact = AnalyticScore::new(&prior, &schedule);
        let grid = grid_2d(41, 3.0);
        let errs = [10usize, 50, 90]
            .iter()
            .map(|&t| Ok(json!({"t": t, "median_relative_error": median_score_error(&p, &exact, &grid, t)?})))
            .collect::<Result<Vec<_>>>()?;
        metrics.insert("score_error".into(), Value::Array(errs));
        color_by_mode(&mut panels, &prior);
    }
    Ok(Output {
        trace_csv: trained.loss_csv(),
        panels,
        metrics,
        extras: vec![("net.json".into(), trained.net.to_json()?)],
        axes: if roll { (0, 2) } else { (0, 1) },
        frame: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_are_unique() {
        let names: Vec<&str> = registry().iter().map(|s| s.name).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(names.len() >= 9);
    }

    #[test]
    fn every_default_config_resolves() {
        for s in registry() {
            let cfg = Config { suite: s.name.into(), ..(s.defaults)() };
            cfg.resolve().unwrap_or_else(|e| panic!("{}: {e}", s.name));
        }
    }

    #[test]
    fn slope_of_a_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}
