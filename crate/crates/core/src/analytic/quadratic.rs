use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DasError, Result};
use crate::linalg::{dot, Mat};

/// `r(x) = −xᵀAx + bᵀx + c` with `A` symmetric positive-semidefinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuadraticSpec", into = "QuadraticSpec")]
pub struct QuadraticReward {
    a: Mat,
    b: Vec<f64>,
    c: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuadraticSpec {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "b")]
    b: Vec<f64>,
    #[serde(rename = "c", default)]
    c: f64,
}

impl TryFrom<QuadraticSpec> for QuadraticReward {
    type Error = DasError;
    fn try_from(s: QuadraticSpec) -> Result<Self> {
        let a = Mat::from_rows(&s.a).ok_or_else(|| DasError::Input("reward A must be a non-empty rectangular matrix".into()))?;
        Self::new(a, s.b, s.c)
    }
}

impl From<QuadraticReward> for QuadraticSpec {
    fn from(r: QuadraticReward) -> Self {
        Self { a: r.a.to_rows(), b: r.b, c: r.c }
    }
}

impl QuadraticReward {
    pub fn new(a: Mat, b: Vec<f64>, c: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(DasError::Input("reward A must be square".into()));
        }
        check_dim(a.rows(), b.len())?;
        if !a.is_symmetric(1e-12) {
            return Err(DasError::Input("reward A must be symmetric".into()));
        }
        let a = a.symmetrized();
        if a.min_eigenvalue() < -1e-12 {
            return Err(DasError::Input("reward A must be positive-semidefinite".into()));
        }
        Ok(Self { a, b, c })
    }

    /// Same form without the semidefiniteness requirement; used for fitted
    /// surrogates whose curvature can have either sign.
    pub(crate) fn new_unchecked(a: Mat, b: Vec<f64>, c: f64) -> Self {
        Self { a: a.symmetrized(), b, c }
    }

    /// `r(x) = −Σ_i x_i² / s_i` (with `b = 0, c = 0`).
    pub fn neg_scaled_squares(inv_scales: &[f64]) -> Self {
        Self::new(Mat::diag(inv_scales), vec![0.0; inv_scales.len()], 0.0).expect("diagonal PSD")
    }

    /// Reward of the upper toy panel: `−X²/100 − Y²`.
    pub fn toy_top() -> Self {
        Self::neg_scaled_squares(&[0.01, 1.0])
    }

    /// Reward of the lower toy panel: `−X² − (Y − 1)²/10`.
    pub fn toy_bottom() -> Self {
        Self::new(Mat::diag(&[1.0, 0.1]), vec![0.0, 0.2], -0.1).expect("diagonal PSD")
    }

    /// Swiss-roll reward: `−X²/100 − Y²/100 − Z²`.
    pub fn swiss_roll() -> Self {
        Self::neg_scaled_squares(&[0.01, 0.01, 1.0])
    }

    /// Constant reward `c`.
    pub fn constant(dim: usize, c: f64) -> Self {
        Self { a: Mat::zeros(dim, dim), b: vec![0.0; dim], c }
    }

    /// Linear reward `bᵀx`.
    pub fn linear(b: Vec<f64>) -> Self {
        let d = b.len();
        Self { a: Mat::zeros(d, d), b, c: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        -self.a.quad_form(x) + dot(&self.b, x) + self.c
    }

    /// `∇r = −2Ax + b`
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.a.mul_vec(x).iter().zip(&self.b).map(|(ax, b)| -2.0 * ax + b).collect()
    }

    /// Constant Hessian `−2A`.
    pub fn hessian(&self) -> Mat {
        self.a.scaled(-2.0)
    }
}
