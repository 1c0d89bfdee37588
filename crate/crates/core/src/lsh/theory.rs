//! Query-time guarantees of cross-polytope LSH for cosine thresholds.
//!
//! `rho_exponent` drops the `o(1)` term of the asymptotic bound, so it
//! describes the leading-order exponent only.

use crate::error::{Error, Result};

/// Upper bound on the per-table failure probability of the construction.
pub const FAILURE_BOUND: f64 = 1.0 / 3.0 + 1.0 / std::f64::consts::E;

fn check_pair(theta: f64, theta_prime: f64) -> Result<()> {
    if !(-1.0 < theta_prime && theta_prime < theta && theta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need -1 < theta' < theta < 1, got theta = {theta}, theta' = {theta_prime}"
        )));
    }
    Ok(())
}

/// `n^rho` query-time exponent for retrieving a `theta'`-similar point
/// whenever a `theta`-similar point exists.
pub fn rho_exponent(theta: f64, theta_prime: f64) -> Result<f64> {
    check_pair(theta, theta_prime)?;
    Ok((1.0 - theta) / (1.0 - theta_prime) * (1.0 + theta_prime) / (1.0 + theta))
}

/// Euclidean distance between unit vectors with cosine `theta`.
pub fn cosine_to_euclidean(theta: f64) -> f64 {
    (2.0 - 2.0 * theta).max(0.0).sqrt()
}

/// Ratio of the Euclidean radii that correspond to `theta'` and `theta`.
pub fn approx_factor(theta: f64, theta_prime: f64) -> f64 {
    ((1.0 - theta_prime) / (1.0 - theta)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LshTheoryParams {
    pub theta: f64,
    pub theta_prime: f64,
    pub rho_exponent: f64,
    pub euclid_r: f64,
    pub factor_c: f64,
    pub failure_bound: f64,
}

impl LshTheoryParams {
    pub fn new(theta: f64, theta_prime: f64) -> Result<Self> {
        Ok(Self {
            theta,
            theta_prime,
            rho_exponent: rho_exponent(theta, theta_prime)?,
            euclid_r: cosine_to_euclidean(theta),
            factor_c: approx_factor(theta, theta_prime),
            failure_bound: FAILURE_BOUND,
        })
    }
}
