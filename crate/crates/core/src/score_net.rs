//! Small ε-prediction MLP trained by denoising score matching, with a
//! hand-written backward pass and forward-mode input Jacobians.

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::ScoreProvider;
use crate::error::{check_dim, DasError, Result};
use crate::linalg::Mat;
use crate::rng::{self, Domain};
use crate::schedule::NoiseSchedule;

/// Width of the time embedding `[s, sin(πs), cos(πs)]`, `s = t / T`.
pub const TIME_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `out × in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn inputs(&self) -> usize {
        self.w.len() / self.b.len()
    }

    fn outputs(&self) -> usize {
        self.b.len()
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        let n_in = self.inputs();
        out.clear();
        out.extend(self.b.iter().zip(self.w.chunks_exact(n_in)).map(|(b, row)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()));
    }

    /// `W x` without the bias.
    fn linear(&self, x: &[f64]) -> Vec<f64> {
        self.w.chunks_exact(self.inputs()).map(|row| row.iter().zip(x).map(|(w, x)| w * x).sum()).collect()
    }

    fn zeros_like(&self) -> Layer {
        Layer { w: vec![0.0; self.w.len()], b: vec![0.0; self.b.len()] }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(self.b.iter())
    }

    fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let nw = self.w.len();
        if idx < nw {
            &mut self.w[idx]
        } else {
            &mut self.b[idx - nw]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetMeta {
    /// Data dimension.
    pub d: usize,
    pub hidden: usize,
    /// Time-embedding width.
    pub embed: usize,
    /// Number of diffusion steps the time embedding is normalized by.
    pub steps: usize,
}

/// `ε_θ(x, t)`: input `x ⊕ embed(t)`, two SiLU hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDenoiser {
    pub layers: Vec<Layer>,
    pub meta: NetMeta,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Intermediate values of one forward pass.
struct Tape {
    pre: [Vec<f64>; 2],
    out: Vec<f64>,
}

impl MlpDenoiser {
    /// Random init: `W ~ N(0, 1/fan_in)`, zero biases.
    pub fn new(d: usize, hidden: usize, steps: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Domain::Training, &[u64::MAX]);
        let sizes = [(d + TIME_FEATURES, hidden), (hidden, hidden), (hidden, d)];
        let layers = sizes
            .iter()
            .map(|&(n_in, n_out)| {
                let scale = (1.0 / n_in as f64).sqrt();
                let w = rng::normal_vec(&mut rng, n_in * n_out).into_iter().map(|z| z * scale).collect();
                Layer { w, b: vec![0.0; n_out] }
            })
            .collect();
        Self { layers, meta: NetMeta { d, hidden, embed: TIME_FEATURES, steps } }
    }

    /// All weights and biases zero.
    pub fn zeros(d: usize, hidden: usize, steps: usize) -> Self {
        let mut net = Self::new(d, hidden, steps, 0);
        net.layers.iter_mut().for_each(|l| l.params_mut().for_each(|p| *p = 0.0));
        net
    }

    pub fn dim(&self) -> usize {
        self.meta.d
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.params().all(|p| p.is_finite()))
    }

    fn input(&self, x: &[f64], t: f64) -> Vec<f64> {
        let s = t / self.meta.steps as f64;
        let mut v = Vec::with_capacity(x.len() + TIME_FEATURES);
        v.extend_from_slice(x);
        v.extend_from_slice(&[s, (PI * s).sin(), (PI * s).cos()]);
        v
    }

    fn forward(&self, x: &[f64], t: f64) -> Tape {
        let input = self.input(x, t);
        let mut pre0 = Vec::new();
        self.layers[0].apply(&input, &mut pre0);
        let act0: Vec<f64> = pre0.iter().map(|&a| silu(a)).collect();
        let mut pre1 = Vec::new();
        self.layers[1].apply(&act0, &mut pre1);
        let act1: Vec<f64> = pre1.iter().map(|&a| silu(a)).collect();
        let mut out = Vec::new();
        self.layers[2].apply(&act1, &mut out);
        Tape { pre: [pre0, pre1], out }
    }

    /// `ε_θ(x, t)`.
    pub fn predict(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        check_dim(self.meta.d, x.len())?;
        Ok(self.forward(x, t as f64).out)
    }

    /// `ε_θ(x, t)` and its Jacobian `∂ε/∂x` (row `i` = output `i`),
    /// propagated as `d` forward-mode tangents.
    pub fn predict_with_jacobian(&self, x: &[f64], t: usize) -> Result<(Vec<f64>, Mat)> {
        check_dim(self.meta.d, x.len())?;
        let d = self.meta.d;
        let tape = self.forward(x, t as f64);
        let mut jac = Mat::zeros(d, d);
        let l0 = &self.layers[0];
        let n_in = l0.inputs();
        for j in 0..d {
            // tangent of input unit j through each layer
            let tan: Vec<f64> = (0..l0.outputs()).map(|r| l0.w[r * n_in + j] * silu_prime(tape.pre[0][r])).collect();
            let mut tan = self.layers[1].linear(&tan);
            tan.iter_mut().zip(&tape.pre[1]).for_each(|(v, a)| *v *= silu_prime(*a));
            for (i, v) in self.layers[2].linear(&tan).into_iter().enumerate() {
                jac[(i, j)] = v;
            }
        }
        Ok((tape.out, jac))
    }

    fn weights(&self, k: usize) -> ArrayView2<'_, f64> {
        let l = &self.layers[k];
        ArrayView2::from_shape((l.outputs(), l.inputs()), &l.w).expect("layer shape")
    }

    /// Summed `½‖ε_θ − target‖²` over the rows of a batch of embedded inputs,
    /// and its parameter gradients.
    fn batch_gradient(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> (f64, Vec<Layer>) {
        let affine = |h: &Array2<f64>, k: usize| {
            let mut a = h.dot(&self.weights(k).t());
            a += &ArrayView1::from(&self.layers[k].b);
            a
        };
        let h0 = inputs.to_owned();
        let a1 = affine(&h0, 0);
        let z1 = a1.mapv(silu);
        let a2 = affine(&z1, 1);
        let z2 = a2.mapv(silu);
        let out = affine(&z2, 2);
        let g = out - &targets;
        let loss = 0.5 * g.iter().map(|v| v * v).sum::<f64>();
        let d2 = g.dot(&self.weights(2)) * a2.mapv(silu_prime);
        let d1 = d2.dot(&self.weights(1)) * a1.mapv(silu_prime);
        let grad = |delta: &Array2<f64>, h: &Array2<f64>| Layer {
            w: delta.t().dot(h).iter().copied().collect(),
            b: delta.sum_axis(Axis(0)).to_vec(),
        };
        (loss, vec![grad(&d1, &h0), grad(&d2, &z1), grad(&g, &z2)])
    }

    /// Parameter gradients of `½‖ε_θ(x, t) − target‖²`, one `Layer` per layer.
    pub fn loss_gradient(&self, x: &[f64], t: usize, target: &[f64]) -> Result<(f64, Vec<Layer>)> {
        check_dim(self.meta.d, x.len())?;
        check_dim(self.meta.d, target.len())?;
        let input = self.input(x, t as f64);
        let inputs = ArrayView2::from_shape((1, input.len()), &input).expect("row vector");
        let targets = ArrayView2::from_shape((1, target.len()), target).expect("row vector");
        Ok(self.batch_gradient(inputs, targets))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(s)?;
        let m = &net.meta;
        let shapes = [(m.d + m.embed, m.hidden), (m.hidden, m.hidden), (m.hidden, m.d)];
        let ok = m.embed == TIME_FEATURES
            && net.layers.len() == 3
            && net.layers.iter().zip(shapes).all(|(l, (i, o))| l.b.len() == o && l.w.len() == i * o);
        if !ok {
            return Err(DasError::Input("checkpoint layer shapes do not match its metadata".into()));
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, epochs: 1000, batch_size: 512, beta1: 0.9, beta2: 0.999, hidden: 64, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DasError::TrainConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.epochs == 0 {
            return bad("at least one epoch is required");
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return bad("batch size and hidden width must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam moment coefficients must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Trained network with its per-epoch mean loss.
#[derive(Debug, Clone)]
pub struct TrainedDenoiser {
    pub net: MlpDenoiser,
    pub losses: Vec<f64>,
}

impl TrainedDenoiser {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, l);
        }
        out
    }
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    step: i32,
}

impl Adam {
    fn update(&mut self, net: &mut MlpDenoiser, grads: &[Layer], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for k in 0..net.layers.len() {
            let params = net.layers[k].params_mut();
            let g = grads[k].params();
            let m = self.m[k].params_mut();
            let v = self.v[k].params_mut();
            for (((p, g), m), v) in params.zip(g).zip(m).zip(v) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
            }
        }
    }
}

/// Minimizes `E‖ε − ε_θ(√ᾱ_t x_0 + √(1 − ᾱ_t) ε, t)‖²` (mean over coordinates)
/// with `t ~ U{1..T}`, fresh noise every epoch and a seeded shuffle.
pub fn train_denoiser(data: ArrayView2<f64>, schedule: &NoiseSchedule, cfg: &TrainConfig) -> Result<TrainedDenoiser> {
    cfg.validate()?;
    let (n, d) = data.dim();
    if n < 256 {
        return Err(DasError::Input(format!("training needs at least 256 samples, got {n}")));
    }
    let steps = schedule.steps();
    let mut net = MlpDenoiser::new(d, cfg.hidden, steps, cfg.seed);
    let mut adam = Adam {
        m: net.layers.iter().map(Layer::zeros_like).collect(),
        v: net.layers.iter().map(Layer::zeros_like).collect(),
        step: 0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut rng = rng::stream(cfg.seed, Domain::Training, &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let width = d + TIME_FEATURES;
            let mut inputs = Array2::zeros((batch.len(), width));
            let mut targets = Array2::zeros((batch.len(), d));
            for (r, &i) in batch.iter().enumerate() {
                let t = rng.random_range(1..=steps);
                let eps = rng::normal_vec(&mut rng, d);
                let ab = schedule.alpha_bar(t);
                let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
                let x: Vec<f64> = data.row(i).iter().zip(&eps).map(|(x0, e)| a * x0 + s * e).collect();
                inputs.row_mut(r).assign(&ArrayView1::from(&net.input(&x, t as f64)));
                targets.row_mut(r).assign(&ArrayView1::from(&eps));
            }
            let (batch_loss, mut grads) = net.batch_gradient(inputs.view(), targets.view());
            // per-sample loss ½‖·‖² → mean squared error over batch and coordinates
            let scale = 2.0 / (batch.len() * d) as f64;
            grads.iter_mut().for_each(|g| g.params_mut().for_each(|v| *v *= scale));
            adam.update(&mut net, &grads, cfg);
            epoch_loss += batch_loss * scale * batch.len() as f64;
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() || !net.is_finite() {
            return Err(DasError::TrainingDiverged { epoch });
        }
        losses.push(mean);
    }
    Ok(TrainedDenoiser { net, losses })
}

fn rel_err(a: f64, b: f64) -> f64 {
    let den = a.abs().max(b.abs());
    if den < 1e-7 {
        (a - b).abs() / 1e-7
    } else {
        (a - b).abs() / den
    }
}

/// Largest relative discrepancy between analytic and central-difference
/// derivatives (step `1e-5`): all parameter gradients of a squared-error loss,
/// and Jacobian–vector products with respect to the input. Deterministic.
pub fn backprop_gradcheck(net: &MlpDenoiser) -> f64 {
    const H: f64 = 1e-5;
    let d = net.meta.d;
    let mut rng = rng::stream(17, Domain::Training, &[u64::MAX - 1]);
    let mut worst: f64 = 0.0;
    for probe in 0..2 {
        let x = rng::normal_vec(&mut rng, d);
        let target = rng::normal_vec(&mut rng, d);
        let t = 1 + (probe * 37) % net.meta.steps.max(1);
        let (_, grads) = net.loss_gradient(&x, t, &target).expect("dimensions match");
        let mut probe_net = net.clone();
        let loss_at = |n: &MlpDenoiser| {
            let out = n.forward(&x, t as f64).out;
            0.5 * out.iter().zip(&target).map(|(o, y)| (o - y).powi(2)).sum::<f64>()
        };
        for k in 0..net.layers.len() {
            let analytic: Vec<f64> = grads[k].params().copied().collect();
            for (idx, a) in analytic.iter().enumerate() {
                let orig = *probe_net.layers[k].param_mut(idx);
                *probe_net.layers[k].param_mut(idx) = orig + H;
                let lp = loss_at(&probe_net);
                *probe_net.layers[k].param_mut(idx) = orig - H;
                let lm = loss_at(&probe_net);
                *probe_net.layers[k].param_mut(idx) = orig;
                worst = worst.max(rel_err(*a, (lp - lm) / (2.0 * H)));
            }
        }
        let (_, jac) = net.predict_with_jacobian(&x, t).expect("dimensions match");
        let v = rng::normal_vec(&mut rng, d);
        let jv = jac.mul_vec(&v);
        let shifted = |s: f64| {
            let xs: Vec<f64> = x.iter().zip(&v).map(|(x, v)| x + s * v).collect();
            net.forward(&xs, t as f64).out
        };
        let (op, om) = (shifted(H), shifted(-H));
        for i in 0..d {
            worst = worst.max(rel_err(jv[i], (op[i] - om[i]) / (2.0 * H)));
        }
    }
    worst
}

/// Score `−ε_θ / √(1 − ᾱ_t)` of a trained network.
#[derive(Debug, Clone)]
pub struct NetScore {
    net: MlpDenoiser,
    schedule: NoiseSchedule,
}

impl NetScore {
    pub fn new(net: MlpDenoiser, schedule: &NoiseSchedule) -> Result<Self> {
        if net.meta.steps != schedule.steps() {
            return Err(DasError::Input(format!(
                "network was trained for {} steps, schedule has {}",
                net.meta.steps,
                schedule.steps()
            )));
        }
        Ok(Self { net, schedule: schedule.clone() })
    }

    pub fn net(&self) -> &MlpDenoiser {
        &self.net
    }

    fn noise_scale(&self, t: usize) -> Result<f64> {
        self.schedule.check_time(t)?;
        if t == 0 {
            return Err(DasError::Input("the learned score is undefined at t = 0".into()));
        }
        Ok(-1.0 / (1.0 - self.schedule.alpha_bar(t)).sqrt())
    }
}

impl ScoreProvider for NetScore {
    fn dim(&self) -> usize {
        self.net.meta.d
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn score(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        let c = self.noise_scale(t)?;
        Ok(self.net.predict(x, t)?.into_iter().map(|e| c * e).collect())
    }

    fn score_jacobian(&self, x: &[f64], t: usize) -> Result<(Vec<f64>, Mat)> {
        let c = self.noise_scale(t)?;
        let (eps, jac) = self.net.predict_with_jacobian(x, t)?;
        Ok((eps.into_iter().map(|e| c * e).collect(), jac.scaled(c)))
    }
}

/// Median of `‖s_net − s_ref‖ / ‖s_ref‖` over the rows of `points`.
pub fn median_score_error<A, B>(net: &A, reference: &B, points: &Array2<f64>, t: usize) -> Result<f64>
where
    A: ScoreProvider + ?Sized,
    B: ScoreProvider + ?Sized,
{
    let mut errs = points
        .rows()
        .into_iter()
        .map(|row| {
            let x = row.to_vec();
            let a = net.score(&x, t)?;
            let b = reference.score(&x, t)?;
            let num: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
            Ok(num / den.max(1e-12))
        })
        .collect::<Result<Vec<f64>>>()?;
    errs.sort_by(f64::total_cmp);
    let m = errs.len();
    Ok(if m % 2 == 1 { errs[m / 2] } else { 0.5 * (errs[m / 2 - 1] + errs[m / 2]) })
}

/// Regular `k × k` grid over `[−half, half]²`.
pub fn grid_2d(k: usize, half: f64) -> Array2<f64> {
    let step = if k > 1 { 2.0 * half / (k - 1) as f64 } else { 0.0 };
    Array2::from_shape_fn((k * k, 2), |(i, j)| {
        let idx = if j == 0 { i / k } else { i % k };
        -half + step * idx as f64
    })
}
