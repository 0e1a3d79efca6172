//! Country-level normal-gamma shrinkage on cross-country lag coefficients.
//!
//! Each country carries a global scale `xi_i` pulling its whole block of
//! cross-country coefficients to zero; per-coefficient local scales `tau2_ij`
//! let individual coefficients escape. The state stores the local scale in
//! the parametrization where it *is* the conditional prior variance of the
//! coefficient (equal to `2 tau^2 / xi` in the product form), which makes
//! both printed full conditionals exact:
//! `xi | tau2 ~ Gamma(cc0 + theta k, cc1 + (theta/2) sum_j tau2_ij)` and
//! `tau2 | b, xi ~ GIG(theta - 1/2, theta xi, b^2)`.

use nalgebra::DMatrix;

use crate::dist;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Global and local shrinkage scalings for the cross-country coefficients.
#[derive(Clone, Debug)]
pub struct ShrinkageState {
    /// Per-country global scales, length N.
    pub xi: Vec<f64>,
    /// Per-coefficient local scales (conditional prior variances), N x k.
    pub tau2: DMatrix<f64>,
}

impl ShrinkageState {
    /// Conditional prior variance of coefficient `j` of country `i`.
    pub fn prior_variance(&self, i: usize, j: usize) -> f64 {
        self.tau2[(i, j)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.xi.iter().any(|&x| !(x > 0.0)) || self.tau2.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidParameter(
                "shrinkage scales must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Hyperparameters of the shrinkage block.
#[derive(Clone, Copy, Debug)]
pub struct ShrinkageHyper {
    pub cc0: f64,
    pub cc1: f64,
    pub theta: f64,
    /// Reproduce the printed rate (which reuses cc0 and sums the scales
    /// with weight theta/2 against cc0) instead of the standard form.
    pub literal_rate: bool,
}

/// Step: country-level global scale from its Gamma full conditional,
/// shape `cc0 + theta k`, rate `cc1 + (theta/2) sum_j tau2_ij`.
pub fn draw_xi(tau2_row: &[f64], hyper: &ShrinkageHyper, rng: &mut RngStream) -> Result<f64> {
    let k = tau2_row.len() as f64;
    let shape = hyper.cc0 + hyper.theta * k;
    let sum: f64 = tau2_row.iter().sum();
    let rate = if hyper.literal_rate {
        hyper.cc0 + 0.5 * hyper.theta * sum
    } else {
        hyper.cc1 + 0.5 * hyper.theta * sum
    };
    dist::sample_gamma(shape, rate, rng)
}

/// Step: local scale from its GIG full conditional
/// `GIG(theta - 1/2, theta xi, b^2)`; `b = 0` routes through the clamped path.
pub fn draw_tau(b_ij: f64, xi: f64, theta: f64, rng: &mut RngStream) -> Result<f64> {
    dist::sample_gig_clamped(theta - 0.5, theta * xi, b_ij * b_ij, rng)
}
