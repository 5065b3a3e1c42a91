//! Resampling schemes. All return ancestor indices in ascending order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ensemble::normalized_weights;
use crate::error::{DasError, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResamplingScheme {
    Multinomial,
    Systematic,
    /// Srinivasan sampling process: counts are `⌊N W_n⌋` or `⌈N W_n⌉`.
    #[default]
    Ssp,
}

impl std::str::FromStr for ResamplingScheme {
    type Err = DasError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "multinomial" => Ok(Self::Multinomial),
            "systematic" => Ok(Self::Systematic),
            "ssp" => Ok(Self::Ssp),
            other => Err(DasError::Input(format!("unknown resampling scheme '{other}'"))),
        }
    }
}

/// Draws `N = log_weights.len()` ancestor indices.
pub fn resample(log_weights: &[f64], scheme: ResamplingScheme, rng: &mut StreamRng) -> Result<Vec<usize>> {
    let w = normalized_weights(log_weights)?;
    let n = w.len();
    let counts = match scheme {
        ResamplingScheme::Multinomial => multinomial_counts(&w, n, rng),
        ResamplingScheme::Systematic => systematic_counts(&w, n, rng),
        ResamplingScheme::Ssp => ssp_counts(&w, n, rng),
    };
    Ok(counts_to_ancestors(&counts))
}

pub(crate) fn counts_to_ancestors(counts: &[usize]) -> Vec<usize> {
    counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)).collect()
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut c: Vec<f64> = w
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    if let Some(last) = c.last_mut() {
        *last = f64::INFINITY;
    }
    c
}

/// Counts from `m` sorted uniforms against the weight CDF.
fn counts_from_sorted_uniforms(w: &[f64], uniforms: impl Iterator<Item = f64>) -> Vec<usize> {
    let cdf = cumulative(w);
    let mut counts = vec![0; w.len()];
    let mut j = 0;
    for u in uniforms {
        while u >= cdf[j] || w[j] == 0.0 {
            j += 1;
        }
        counts[j] += 1;
    }
    counts
}

/// `m` independent categorical draws.
pub fn multinomial_counts(w: &[f64], m: usize, rng: &mut StreamRng) -> Vec<usize> {
    // sorted uniforms via normalized exponential spacings
    let mut acc = 0.0;
    let spacings: Vec<f64> = (0..=m)
        .map(|_| {
            acc += -(1.0 - rng.random::<f64>()).ln();
            acc
        })
        .collect();
    let total = spacings[m];
    counts_from_sorted_uniforms(w, spacings[..m].iter().map(|s| s / total))
}

fn systematic_counts(w: &[f64], m: usize, rng: &mut StreamRng) -> Vec<usize> {
    let u: f64 = rng.random();
    counts_from_sorted_uniforms(w, (0..m).map(|i| (i as f64 + u) / m as f64))
}

/// Srinivasan sampling process over the fractional parts of `N W_n`.
///
/// Pairs of fractional parts `(a, b)` are repeatedly merged: with
/// `δ_i = min(1 − a, b)`, `δ_j = min(a, 1 − b)`, either `(a + δ_i, b − δ_i)`
/// with probability `δ_j / (δ_i + δ_j)` or `(a − δ_j, b + δ_j)`. Each merge
/// keeps expectations and fixes at least one of the two at 0 or 1.
fn ssp_counts(w: &[f64], m: usize, rng: &mut StreamRng) -> Vec<usize> {
    const EPS: f64 = 1e-12;
    let scaled: Vec<f64> = w.iter().map(|v| v * m as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|v| v.floor() as usize).collect();
    let mut frac: Vec<f64> = scaled.iter().zip(&counts).map(|(v, &c)| v - c as f64).collect();
    let mut open: Option<usize> = None;
    for j in 0..frac.len() {
        if frac[j] <= EPS {
            frac[j] = 0.0;
            continue;
        }
        let Some(i) = open else {
            open = Some(j);
            continue;
        };
        let (a, b) = (frac[i], frac[j]);
        let di = (1.0 - a).min(b);
        let dj = a.min(1.0 - b);
        if rng.random::<f64>() * (di + dj) < dj {
            frac[i] = a + di;
            frac[j] = b - di;
        } else {
            frac[i] = a - dj;
            frac[j] = b + dj;
        }
        for k in [i, j] {
            if frac[k] >= 1.0 - EPS {
                counts[k] += 1;
                frac[k] = 0.0;
            } else if frac[k] <= EPS {
                frac[k] = 0.0;
            }
        }
        open = if frac[i] > 0.0 {
            Some(i)
        } else if frac[j] > 0.0 {
            Some(j)
        } else {
            None
        };
    }
    // float drift can leave a last open fraction close to 0 or 1
    if let Some(i) = open {
        if frac[i] >= 0.5 {
            counts[i] += 1;
        }
    }
    fix_total(&mut counts, &scaled, m);
    counts
}

/// Corrects rare off-by-one totals caused by rounding, touching the entries
/// whose fractional parts are closest to the rounding boundary.
fn fix_total(counts: &mut [usize], scaled: &[f64], m: usize) {
    let mut total: usize = counts.iter().sum();
    while total < m {
        let k = (0..counts.len())
            .max_by(|&a, &b| (scaled[a] - counts[a] as f64).total_cmp(&(scaled[b] - counts[b] as f64)))
            .expect("non-empty");
        counts[k] += 1;
        total += 1;
    }
    while total > m {
        let k = (0..counts.len())
            .filter(|&k| counts[k] > 0)
            .min_by(|&a, &b| (scaled[a] - counts[a] as f64).total_cmp(&(scaled[b] - counts[b] as f64)))
            .expect("positive count");
        counts[k] -= 1;
        total -= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn counts(anc: &[usize], n: usize) -> Vec<usize> {
        let mut c = vec![0; n];
        for &a in anc {
            c[a] += 1;
        }
        c
    }

    #[test]
    fn uniform_weights_under_ssp_keep_every_index() {
        let mut rng = stream(1, Domain::Resample, &[]);
        let anc = resample(&[0.0; 16], ResamplingScheme::Ssp, &mut rng).unwrap();
        assert_eq!(anc, (0..16).collect::<Vec<_>>());
        let anc = resample(&[0.0; 16], ResamplingScheme::Systematic, &mut rng).unwrap();
        assert_eq!(anc, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn one_hot_weights_copy_the_survivor() {
        let mut rng = stream(2, Domain::Resample, &[]);
        let mut lw = vec![f64::NEG_INFINITY; 8];
        lw[0] = 0.0;
        for scheme in [ResamplingScheme::Multinomial, ResamplingScheme::Systematic, ResamplingScheme::Ssp] {
            assert_eq!(resample(&lw, scheme, &mut rng).unwrap(), vec![0; 8]);
        }
    }

    #[test]
    fn degenerate_weights_are_an_error() {
        let mut rng = stream(3, Domain::Resample, &[]);
        let lw = vec![f64::NEG_INFINITY; 4];
        assert!(matches!(resample(&lw, ResamplingScheme::Ssp, &mut rng), Err(DasError::DegenerateEnsemble)));
    }

    #[test]
    fn multinomial_frequency_concentrates() {
        let mut rng = stream(4, Domain::Resample, &[]);
        let c = multinomial_counts(&[0.75, 0.25], 100_000, &mut rng);
        let f = c[0] as f64 / 100_000.0;
        assert!((f - 0.75).abs() < 0.005, "{f}");
    }

    #[test]
    fn low_variance_schemes_round_counts() {
        let lw: Vec<f64> = [0.1f64, 0.35, 0.05, 0.2, 0.3, 0.0, 0.0].iter().map(|w| w.ln()).collect();
        let w = normalized_weights(&lw).unwrap();
        for seed in 0..200 {
            let mut rng = stream(seed, Domain::Resample, &[]);
            for scheme in [ResamplingScheme::Systematic, ResamplingScheme::Ssp] {
                let c = counts(&resample(&lw, scheme, &mut rng).unwrap(), 7);
                assert_eq!(c.iter().sum::<usize>(), 7);
                for (k, &ck) in c.iter().enumerate() {
                    let e = 7.0 * w[k];
                    assert!(ck == e.floor() as usize || ck == e.ceil() as usize, "{scheme:?} {c:?}");
                }
            }
        }
    }

    #[test]
    fn schemes_are_unbiased() {
        let w = [0.05, 0.4, 0.15, 0.25, 0.15];
        let lw: Vec<f64> = w.iter().map(|v: &f64| v.ln()).collect();
        let reps = 20_000;
        for scheme in [ResamplingScheme::Multinomial, ResamplingScheme::Systematic, ResamplingScheme::Ssp] {
            let mut totals = [0usize; 5];
            for r in 0..reps {
                let mut rng = stream(r as u64, Domain::Resample, &[9]);
                for a in resample(&lw, scheme, &mut rng).unwrap() {
                    totals[a] += 1;
                }
            }
            for k in 0..5 {
                let mean = totals[k] as f64 / reps as f64;
                // binomial-style bound, 5 standard errors of the multinomial count
                let se = (5.0 * w[k] * (1.0 - w[k]) / reps as f64).sqrt();
                assert!((mean - 5.0 * w[k]).abs() < 5.0 * se, "{scheme:?} k={k}: {mean}");
            }
        }
    }
}
