//! Gaussian-mixture densities, forward-diffused marginals, analytic scores
//! and the exact reward-tilted mixture used as ground truth.

mod gmm;
mod quadratic;
mod swiss_roll;

pub use gmm::{Gmm, MAX_DIM};
pub use quadratic::QuadraticReward;
pub use swiss_roll::{make_swiss_roll, SWISS_ROLL_BOUND, SWISS_ROLL_NOISE, SWISS_ROLL_SCALE};
