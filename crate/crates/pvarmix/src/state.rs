//! One full parameter draw of the model.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor_sv::SvParams;
use crate::mixture::MixtureState;
use crate::panel::{build_design, fitted_country, PanelData};
use crate::shrinkage::ShrinkageState;

/// Per-country coefficient matrices, intercept in the first column of the
/// domestic block.
#[derive(Clone, Debug)]
pub struct CountryCoeffs {
    /// `M x (M P + 1)`: intercept, then own lags.
    pub domestic: DMatrix<f64>,
    /// `M x (N-1) M P`: other countries' lags, ascending country order.
    pub foreign: DMatrix<f64>,
}

/// Full Gibbs state: coefficients, loadings, factors, log-variance paths,
/// volatility parameters, mixture and shrinkage blocks.
#[derive(Clone, Debug)]
pub struct ParameterState {
    pub coeffs: Vec<CountryCoeffs>,
    /// `K x q` loadings; the upper `q x q` block is lower uni-triangular.
    pub loadings: DMatrix<f64>,
    /// `T_eff x q` latent factors.
    pub factors: DMatrix<f64>,
    /// `T_eff x q` factor log-variances.
    pub h_path: DMatrix<f64>,
    /// `T_eff x K` idiosyncratic log-variances.
    pub omega_path: DMatrix<f64>,
    pub sv_factor: Vec<SvParams>,
    pub sv_idio: Vec<SvParams>,
    pub mixture: MixtureState,
    pub shrinkage: ShrinkageState,
}

impl ParameterState {
    /// Column-major flattening of the domestic coefficient matrix of country
    /// `i`; coordinate `c*M + j` is equation `j`, regressor column `c`.
    pub fn domestic_vec(&self, i: usize) -> DVector<f64> {
        let d = &self.coeffs[i].domestic;
        DVector::from_column_slice(d.as_slice())
    }

    pub fn foreign_vec(&self, i: usize) -> DVector<f64> {
        let f = &self.coeffs[i].foreign;
        DVector::from_column_slice(f.as_slice())
    }

    /// `N x m` matrix of stacked domestic coefficient vectors.
    pub fn domestic_matrix(&self) -> DMatrix<f64> {
        let n = self.coeffs.len();
        let m = self.coeffs[0].domestic.len();
        DMatrix::from_fn(n, m, |i, c| self.coeffs[i].domestic.as_slice()[c])
    }

    /// Writes one equation draw back into the coefficient matrices: the first
    /// `MP+1` entries are the domestic row of equation `j`, the rest the
    /// cross-country row.
    pub fn set_equation(&mut self, i: usize, j: usize, draw: &DVector<f64>) {
        let cc = &mut self.coeffs[i];
        let nd = cc.domestic.ncols();
        for c in 0..nd {
            cc.domestic[(j, c)] = draw[c];
        }
        for c in 0..cc.foreign.ncols() {
            cc.foreign[(j, c)] = draw[nd + c];
        }
    }

    /// Residuals of the observation equation over the effective sample,
    /// `T_eff x K`.
    pub fn residuals(&self, panel: &PanelData) -> Result<DMatrix<f64>> {
        let n = panel.n_countries();
        let m = panel.n_vars();
        let p = lag_order(self, panel)?;
        let t_eff = panel.len() - p;
        let mut resid = DMatrix::zeros(t_eff, panel.k());
        for i in 0..n {
            let (xd, xf) = build_design(panel, i, p)?;
            let fitted = fitted_country(&self.coeffs[i].domestic, &self.coeffs[i].foreign, &xd, &xf);
            for r in 0..t_eff {
                for j in 0..m {
                    let col = panel.column(i, j);
                    resid[(r, col)] = panel.observations()[(p + r, col)] - fitted[(r, j)];
                }
            }
        }
        Ok(resid)
    }

    /// Idiosyncratic residuals after removing the common-factor component.
    pub fn idiosyncratic(&self, panel: &PanelData) -> Result<DMatrix<f64>> {
        let eps = self.residuals(panel)?;
        Ok(&eps - &self.factors * self.loadings.transpose())
    }

    /// Structural invariants: loading identification block, strictly positive
    /// variances and scalings, simplex weights.
    pub fn validate(&self) -> Result<()> {
        let q = self.loadings.ncols();
        for j in 0..q.min(self.loadings.nrows()) {
            if (self.loadings[(j, j)] - 1.0).abs() > 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "loading diagonal element {j} is not one"
                )));
            }
            for c in j + 1..q {
                if self.loadings[(j, c)] != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "loading ({j},{c}) above the diagonal is not zero"
                    )));
                }
            }
        }
        for sv in self.sv_factor.iter().chain(self.sv_idio.iter()) {
            if !(sv.vol > 0.0) || sv.persistence.abs() >= 1.0 {
                return Err(Error::InvalidParameter(
                    "volatility parameters out of range".into(),
                ));
            }
        }
        self.mixture.validate()?;
        self.shrinkage.validate()?;
        Ok(())
    }
}

fn lag_order(state: &ParameterState, panel: &PanelData) -> Result<usize> {
    let m = panel.n_vars();
    let cols = state.coeffs[0].domestic.ncols();
    if cols < 1 + m || (cols - 1) % m != 0 {
        return Err(Error::DimensionMismatch(format!(
            "domestic coefficient matrix has {cols} columns, inconsistent with {m} variables"
        )));
    }
    Ok((cols - 1) / m)
}
