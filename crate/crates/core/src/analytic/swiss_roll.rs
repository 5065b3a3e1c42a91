use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;

use crate::rng::{self, Domain};

/// Bound of the cube the roll is scaled into.
pub const SWISS_ROLL_BOUND: f64 = 3.0;
/// Uniform scale applied to the raw roll; the outermost winding (radius 4.5π) lands on the bound.
pub const SWISS_ROLL_SCALE: f64 = SWISS_ROLL_BOUND / (4.5 * PI);
const RAW_HEIGHT: f64 = 21.0;
/// Noise level of the training data for the 3D experiment.
pub const SWISS_ROLL_NOISE: f64 = 0.05;

/// 3D Swiss roll: `u ∈ [1.5π, 4.5π]`, `(x, y, z) = s·(u cos u, h − 10.5, u sin u)`
/// with `h ~ U(0, 21)`, plus isotropic Gaussian noise, clamped to `[−3, 3]³`.
pub fn make_swiss_roll(n: usize, noise: f64, seed: u64) -> Array2<f64> {
    let mut rng = rng::stream(seed, Domain::Data, &[]);
    let mut out = Array2::zeros((n, 3));
    let mut eps = [0.0; 3];
    for mut row in out.rows_mut() {
        let u = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
        let h = RAW_HEIGHT * rng.random::<f64>();
        let raw = [u * u.cos(), h - RAW_HEIGHT / 2.0, u * u.sin()];
        if noise > 0.0 {
            rng::fill_normal(&mut rng, &mut eps);
        }
        for j in 0..3 {
            let v = SWISS_ROLL_SCALE * raw[j] + noise * eps[j];
            row[j] = v.clamp(-SWISS_ROLL_BOUND, SWISS_ROLL_BOUND);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_points_lie_on_the_roll() {
        let pts = make_swiss_roll(1000, 0.0, 4);
        for row in pts.rows() {
            let (x, z) = (row[0] / SWISS_ROLL_SCALE, row[2] / SWISS_ROLL_SCALE);
            let u = (x * x + z * z).sqrt();
            assert!((x - u * u.cos()).abs() < 1e-9);
            assert!((z - u * u.sin()).abs() < 1e-9);
            assert!((1.5 * PI - 1e-9..=4.5 * PI + 1e-9).contains(&u));
        }
    }

    #[test]
    fn points_stay_in_the_cube() {
        for noise in [0.0, 0.1, 1.0] {
            let pts = make_swiss_roll(2000, noise, 9);
            assert!(pts.iter().all(|v| v.abs() <= SWISS_ROLL_BOUND));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(make_swiss_roll(50, 0.05, 1), make_swiss_roll(50, 0.05, 1));
        assert_ne!(make_swiss_roll(50, 0.05, 1), make_swiss_roll(50, 0.05, 2));
    }
}
