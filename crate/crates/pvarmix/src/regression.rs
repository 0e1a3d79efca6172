//! Equation-by-equation Gaussian draws of the lag coefficients.
//!
//! Conditional on the common-factor component, every equation of the panel is
//! an independent heteroskedastic regression: rows are rescaled by
//! `exp(-omega_nt / 2)`, the factor contribution is subtracted from the
//! target, and the coefficient vector is drawn from a conjugate Gaussian
//! whose precision is factorized rather than inverted.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dist;
use crate::error::{Error, Result};
use crate::panel::coeff_index;
use crate::rng::RngStream;
use crate::state::ParameterState;

/// Prior mean and diagonal prior covariance for one equation's stacked
/// (domestic, cross-country) coefficient vector.
#[derive(Clone, Debug)]
pub struct EquationPrior {
    pub mean: DVector<f64>,
    pub var_diag: DVector<f64>,
}

impl EquationPrior {
    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.var_diag.len() {
            return Err(Error::DimensionMismatch("prior mean/variance".into()));
        }
        if self.var_diag.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter(
                "prior variances must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Assembles the prior for equation `j` of country `i`: the domestic slots
/// take the allocated component mean and the common variances, the
/// cross-country slots are centered at zero with the local shrinkage scales.
pub fn equation_prior(state: &ParameterState, i: usize, j: usize, m_vars: usize) -> EquationPrior {
    let n_dom = state.coeffs[i].domestic.ncols();
    let n_for = state.coeffs[i].foreign.ncols();
    let mut mean = DVector::zeros(n_dom + n_for);
    let mut var = DVector::zeros(n_dom + n_for);
    let g = state.mixture.indicators[i];
    // prior variances floored so extreme shrinkage draws stay factorizable
    for c in 0..n_dom {
        let idx = coeff_index(m_vars, j, c);
        mean[c] = state.mixture.centers[g][idx];
        var[c] = state.mixture.common_var[idx].max(1e-10);
    }
    for c in 0..n_for {
        let idx = coeff_index(m_vars, j, c);
        var[n_dom + c] = state.shrinkage.prior_variance(i, idx).max(1e-10);
    }
    EquationPrior {
        mean,
        var_diag: var,
    }
}

/// Posterior moments of one equation: returns the mean and the Cholesky of
/// the posterior precision `X'X + W^-1` (rows of `design` are weighted by
/// `weights` before accumulation).
pub fn posterior_moments(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    weights: &DVector<f64>,
    prior: &EquationPrior,
) -> Result<(DVector<f64>, EquationFactor)> {
    prior.validate()?;
    let d = design.ncols();
    if prior.mean.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "prior dimension {} vs design {}",
            prior.mean.len(),
            d
        )));
    }
    if design.nrows() != target.len() || design.nrows() != weights.len() {
        return Err(Error::DimensionMismatch("design/target/weights rows".into()));
    }
    let mut xw = design.clone();
    let mut yw = target.clone();
    for r in 0..design.nrows() {
        let w = weights[r];
        for c in 0..d {
            xw[(r, c)] *= w;
        }
        yw[r] *= w;
    }
    let mut prec = xw.transpose() * &xw;
    let mut rhs = xw.transpose() * yw;
    for c in 0..d {
        prec[(c, c)] += 1.0 / prior.var_diag[c];
        rhs[c] += prior.mean[c] / prior.var_diag[c];
    }

    // Jacobi equilibration: singularity is judged on the rescaled matrix, so
    // a wildly heterogeneous but diagonal-dominant prior (routine under heavy
    // shrinkage) does not masquerade as ill-conditioning.
    let scale = DVector::from_fn(d, |c, _| prec[(c, c)].sqrt());
    let mut equi = prec;
    for r in 0..d {
        for c in 0..d {
            equi[(r, c)] /= scale[r] * scale[c];
        }
    }
    let chol = cholesky_guarded(equi)?;
    let diag = chol.l_dirty().diagonal();
    let dmax = diag.iter().cloned().fold(0.0f64, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if (dmax / dmin).powi(2) > 1e12 {
        return Err(Error::NumericFailure(format!(
            "equation precision numerically singular (condition proxy {:.3e})",
            (dmax / dmin).powi(2)
        )));
    }
    // solve in the rescaled coordinates: x = S^-1 equi^-1 S^-1 rhs
    let scaled_rhs = DVector::from_fn(d, |c, _| rhs[c] / scale[c]);
    let mut mean = chol.solve(&scaled_rhs);
    for c in 0..d {
        mean[c] /= scale[c];
    }
    Ok((mean, EquationFactor { chol, scale }))
}

/// Cholesky factorization of the equilibrated posterior precision together
/// with the diagonal scaling, sufficient to draw from the posterior.
pub struct EquationFactor {
    chol: Cholesky<f64, Dyn>,
    scale: DVector<f64>,
}

impl EquationFactor {
    /// Posterior covariance (for tests and diagnostics).
    pub fn covariance(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        let d = self.scale.len();
        DMatrix::from_fn(d, d, |r, c| inv[(r, c)] / (self.scale[r] * self.scale[c]))
    }

    fn sample_centered(&self, rng: &mut RngStream) -> DVector<f64> {
        let d = self.scale.len();
        let z = DVector::from_fn(d, |_, _| dist::sample_std_normal(rng));
        let l = self.chol.l();
        let mut u = l
            .transpose()
            .solve_upper_triangular(&z)
            .expect("triangular solve on a valid factor");
        for c in 0..d {
            u[c] /= self.scale[c];
        }
        u
    }
}

fn cholesky_guarded(mut prec: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    prec = (prec.clone() + prec.transpose()) * 0.5;
    if let Some(c) = Cholesky::new(prec.clone()) {
        return Ok(c);
    }
    let jitter = 1e-8 * prec.trace() / prec.nrows() as f64;
    for i in 0..prec.nrows() {
        prec[(i, i)] += jitter;
    }
    Cholesky::new(prec)
        .ok_or_else(|| Error::NumericFailure("equation precision not positive definite".into()))
}

/// Draws one equation's coefficient vector from its Gaussian full
/// conditional.
pub fn draw_equation_coeffs(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    weights: &DVector<f64>,
    prior: &EquationPrior,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let (mean, factor) = posterior_moments(design, target, weights, prior)?;
    Ok(mean + factor.sample_centered(rng))
}
