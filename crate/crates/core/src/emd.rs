//! Earth Mover's Distance between equal-size point clouds and sample summaries.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::Gmm;
use crate::error::{DasError, Result};
use crate::reward::RewardModel;
use crate::rng::{self, Domain};
use crate::smc::{multinomial_counts, normalized_weights};

/// Largest set size handed to the exact solver.
pub const EMD_CAP: usize = 1024;

/// Pairwise Euclidean distances, row-major `n × m`.
fn distance_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Vec<f64> {
    let m = b.nrows();
    let mut out = vec![0.0; a.nrows() * m];
    out.par_chunks_mut(m.max(1)).enumerate().for_each(|(i, row)| {
        let x = a.row(i);
        for (dst, y) in row.iter_mut().zip(b.axis_iter(Axis(0))) {
            *dst = x.iter().zip(y.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        }
    });
    out
}

/// Minimum-cost perfect matching on a square cost matrix (shortest augmenting
/// paths with dual potentials, `O(n³)`). Returns `assignment[row] = column`.
pub fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    // 1-based arrays; column 0 is the virtual root of each augmenting tree
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    out
}

/// Exact EMD `(1/n) min_π Σ ‖a_i − b_{π(i)}‖` between two `n × d` sets.
pub fn emd_exact(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(DasError::Input(format!(
            "EMD needs equal shapes, got {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let n = a.nrows();
    if n == 0 {
        return Err(DasError::Input("EMD of empty sets".into()));
    }
    if n > EMD_CAP {
        return Err(DasError::Input(format!("exact EMD is limited to {EMD_CAP} points, got {n}")));
    }
    let cost = distance_matrix(a, b);
    let perm = assignment(&cost, n);
    Ok(perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64)
}

/// Seed-fixed subset of `k` rows, kept in original order.
pub fn subsample_rows(x: ArrayView2<f64>, k: usize, seed: u64, stream: u64) -> Array2<f64> {
    if k >= x.nrows() {
        return x.to_owned();
    }
    let mut rng = rng::stream(seed, Domain::Subsample, &[stream]);
    let mut idx = sample(&mut rng, x.nrows(), k).into_vec();
    idx.sort_unstable();
    x.select(Axis(0), &idx)
}

/// EMD after subsampling both sets to `min(|a|, |b|, EMD_CAP)` points.
pub fn emd_capped(a: ArrayView2<f64>, b: ArrayView2<f64>, seed: u64) -> Result<f64> {
    let k = a.nrows().min(b.nrows()).min(EMD_CAP);
    if k == 0 {
        return Err(DasError::Input("EMD of empty sets".into()));
    }
    let a = subsample_rows(a, k, seed, 0);
    let b = subsample_rows(b, k, seed, 1);
    emd_exact(a.view(), b.view())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean_reward: f64,
    pub reward_std: f64,
    /// Nearest-component counts; empty when no mixture was given.
    pub mode_counts: Vec<usize>,
}

/// Reward mean and (population) standard deviation, plus per-mode counts
/// under the mixture's most responsible component.
pub fn summary_stats<R: RewardModel + ?Sized>(samples: ArrayView2<f64>, reward: &R, modes: Option<&Gmm>) -> Result<SummaryStats> {
    let n = samples.nrows();
    if n == 0 {
        return Err(DasError::Input("no samples".into()));
    }
    let values: Vec<f64> = samples
        .axis_iter(Axis(0))
        .map(|row| reward.value(&row.to_vec()))
        .collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let mode_counts = match modes {
        Some(gmm) => {
            let mut counts = vec![0; gmm.n_components()];
            for k in gmm.assign_modes(&samples.to_owned())? {
                counts[k] += 1;
            }
            counts
        }
        None => Vec::new(),
    };
    Ok(SummaryStats { mean_reward: mean, reward_std: var.sqrt(), mode_counts })
}

/// Reference draws from `pool` reweighted by `exp(r/α)` (sampling importance
/// resampling), for targets without a closed form. Rows come out shuffled.
pub fn tilted_resample<R: RewardModel + ?Sized>(pool: ArrayView2<f64>, reward: &R, alpha: f64, n: usize, seed: u64) -> Result<Array2<f64>> {
    if pool.nrows() == 0 || n == 0 {
        return Err(DasError::Input("resampling needs a non-empty pool and n >= 1".into()));
    }
    let lw: Vec<f64> = pool.axis_iter(Axis(0)).map(|row| reward.value(&row.to_vec()) / alpha).collect();
    let w = normalized_weights(&lw)?;
    let mut rng = rng::stream(seed, Domain::Subsample, &[u64::MAX]);
    let counts = multinomial_counts(&w, n, &mut rng);
    let mut idx: Vec<usize> = counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)).collect();
    idx.shuffle(&mut rng);
    Ok(pool.select(Axis(0), &idx))
}

/// Per-run metrics record written next to the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub method: String,
    pub emd: f64,
    pub emd_self: f64,
    pub mean_reward: f64,
    pub reward_std: f64,
    pub mode_counts: Vec<usize>,
    pub n: usize,
    pub seed: u64,
}
