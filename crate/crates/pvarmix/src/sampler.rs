//! Gibbs sweep orchestration, chain management and mixing diagnostics.
//!
//! One sweep cycles through the blocks in a fixed order: equation
//! coefficients, loadings, factors, log-variance paths and their parameters,
//! the mixture hierarchy (weights, indicators, component means, common
//! variance, distance scalings with the range rebuild, top-level mean,
//! Dirichlet intensity), the cross-country shrinkage scales, and finally a
//! random relabeling of mixture components. Conditionally independent units
//! within a block run in parallel on substreams derived from the sweep index,
//! so chain output depends only on `(seed, config, data)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dist;
use crate::error::{Error, Result};
use crate::factor_sv::{self, SvParams};
use crate::mixture::{self, MixtureState};
use crate::panel::{build_design, coeff_index, ModelConfig, PanelData};
use crate::regression;
use crate::rng::RngStream;
use crate::shrinkage::{self, ShrinkageState};
use crate::state::{CountryCoeffs, ParameterState};
use crate::store::{DrawStore, StoreMeta};

// substream tags for the sweep blocks
const TAG_EQUATIONS: u64 = 1;
const TAG_LOADINGS: u64 = 2;
const TAG_FACTORS: u64 = 3;
const TAG_VOLS: u64 = 4;
const TAG_MIXTURE: u64 = 5;
const TAG_SHRINKAGE: u64 = 6;
const TAG_PERMUTE: u64 = 7;
const TAG_INIT: u64 = 8;

/// Precomputed per-country design blocks; fixed for a given panel and lag
/// order.
pub struct ChainWorkspace {
    /// Combined `[domestic | foreign]` design per country.
    pub designs: Vec<DMatrix<f64>>,
    pub n_domestic: usize,
}

impl ChainWorkspace {
    pub fn new(panel: &PanelData, config: &ModelConfig) -> Result<Self> {
        let mut designs = Vec::with_capacity(panel.n_countries());
        let mut n_domestic = 0;
        for i in 0..panel.n_countries() {
            let (xd, xf) = build_design(panel, i, config.lags)?;
            n_domestic = xd.ncols();
            let mut combined = DMatrix::zeros(xd.nrows(), xd.ncols() + xf.ncols());
            combined.view_mut((0, 0), (xd.nrows(), xd.ncols())).copy_from(&xd);
            combined
                .view_mut((0, xd.ncols()), (xf.nrows(), xf.ncols()))
                .copy_from(&xf);
            designs.push(combined);
        }
        Ok(Self {
            designs,
            n_domestic,
        })
    }
}

/// Adaptive scaling of the Dirichlet-intensity random walk. The step adapts
/// in windows during burn-in toward acceptance in [0.20, 0.40] and is frozen
/// afterwards.
#[derive(Clone, Debug)]
pub struct MhTuning {
    pub step: f64,
    accepted: usize,
    attempts: usize,
    total_accepted: usize,
    total_attempts: usize,
}

impl MhTuning {
    pub fn new(step: f64) -> Self {
        Self {
            step,
            accepted: 0,
            attempts: 0,
            total_accepted: 0,
            total_attempts: 0,
        }
    }

    pub fn record(&mut self, accepted: bool, adapting: bool) {
        self.attempts += 1;
        self.total_attempts += 1;
        if accepted {
            self.accepted += 1;
            self.total_accepted += 1;
        }
        if adapting && self.attempts >= 50 {
            let rate = self.accepted as f64 / self.attempts as f64;
            if rate > 0.40 {
                self.step = (self.step * 1.25).min(100.0);
            } else if rate < 0.20 {
                self.step = (self.step * 0.8).max(1e-4);
            }
            self.accepted = 0;
            self.attempts = 0;
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.total_attempts == 0 {
            return f64::NAN;
        }
        self.total_accepted as f64 / self.total_attempts as f64
    }
}

/// One full Gibbs sweep, in place. `sweep_index` seeds the per-unit
/// substreams and controls burn-in adaptation.
pub fn gibbs_sweep(
    state: &mut ParameterState,
    panel: &PanelData,
    config: &ModelConfig,
    ws: &ChainWorkspace,
    tuning: &mut MhTuning,
    sweep_index: usize,
    root: &RngStream,
) -> Result<()> {
    let sweep_rng = root.substream(0x5100_0000 + sweep_index as u64);
    step_coefficients(state, panel, config, ws, &sweep_rng)?;
    let resid = state.residuals(panel)?;
    step_loadings(state, config, &resid, &sweep_rng)?;
    step_factors(state, config, &resid, &sweep_rng)?;
    step_volatility(state, config, &resid, &sweep_rng)?;
    step_mixture(state, config, tuning, sweep_index, &sweep_rng)?;
    step_shrinkage(state, config, &sweep_rng)?;
    let mut rng_p = sweep_rng.substream(TAG_PERMUTE);
    mixture::permute_labels(&mut state.mixture, &mut rng_p);
    Ok(())
}

fn step_coefficients(
    state: &mut ParameterState,
    panel: &PanelData,
    config: &ModelConfig,
    ws: &ChainWorkspace,
    sweep_rng: &RngStream,
) -> Result<()> {
    let n = panel.n_countries();
    let m = panel.n_vars();
    let t_eff = state.factors.nrows();
    let scale = config.likelihood_scale;

    let factor_component = &state.factors * state.loadings.transpose();
    let y = panel.observations();
    let p = config.lags;

    let draws: Vec<Result<(usize, usize, DVector<f64>)>> = (0..n * m)
        .into_par_iter()
        .map(|unit| {
            let i = unit / m;
            let j = unit % m;
            let col = panel.column(i, j);
            let mut rng = sweep_rng.substream(TAG_EQUATIONS * 1_000_000 + unit as u64);
            let weights = DVector::from_fn(t_eff, |t, _| {
                scale * (-0.5 * state.omega_path[(t, col)]).exp()
            });
            let target =
                DVector::from_fn(t_eff, |t, _| y[(p + t, col)] - factor_component[(t, col)]);
            let prior = regression::equation_prior(state, i, j, m);
            let draw =
                regression::draw_equation_coeffs(&ws.designs[i], &target, &weights, &prior, &mut rng)?;
            Ok((i, j, draw))
        })
        .collect();
    for d in draws {
        let (i, j, v) = d?;
        state.set_equation(i, j, &v);
    }
    Ok(())
}

fn step_loadings(
    state: &mut ParameterState,
    config: &ModelConfig,
    resid: &DMatrix<f64>,
    sweep_rng: &RngStream,
) -> Result<()> {
    let k = config.k_total();
    if config.n_factors == 0 {
        return Ok(());
    }
    let rows: Vec<Result<DVector<f64>>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let mut rng = sweep_rng.substream(TAG_LOADINGS * 1_000_000 + j as u64);
            let resid_col = resid.column(j).clone_owned();
            let omega_col = state.omega_path.column(j).clone_owned();
            factor_sv::draw_loadings_row(j, &state.factors, &resid_col, &omega_col, &mut rng)
        })
        .collect();
    for (j, row) in rows.into_iter().enumerate() {
        let row = row?;
        for c in 0..config.n_factors {
            state.loadings[(j, c)] = row[c];
        }
    }
    Ok(())
}

fn step_factors(
    state: &mut ParameterState,
    config: &ModelConfig,
    resid: &DMatrix<f64>,
    sweep_rng: &RngStream,
) -> Result<()> {
    if config.n_factors == 0 {
        return Ok(());
    }
    let t_eff = resid.nrows();
    let draws: Vec<Result<DVector<f64>>> = (0..t_eff)
        .into_par_iter()
        .map(|t| {
            let mut rng = sweep_rng.substream(TAG_FACTORS * 1_000_000 + t as u64);
            let eps_t = resid.row(t).transpose();
            let h_t = state.h_path.row(t).transpose();
            let om_t = state.omega_path.row(t).transpose();
            factor_sv::draw_factors_t(&state.loadings, &eps_t, &h_t, &om_t, &mut rng)
        })
        .collect();
    for (t, d) in draws.into_iter().enumerate() {
        let d = d?;
        for s in 0..config.n_factors {
            state.factors[(t, s)] = d[s];
        }
    }
    Ok(())
}

fn step_volatility(
    state: &mut ParameterState,
    config: &ModelConfig,
    resid: &DMatrix<f64>,
    sweep_rng: &RngStream,
) -> Result<()> {
    let q = config.n_factors;
    let k = config.k_total();
    let prior = config.sv_prior();
    let idio = resid - &state.factors * state.loadings.transpose();

    struct SeriesUpdate {
        path: DVector<f64>,
        params: SvParams,
    }
    let updates: Vec<Result<SeriesUpdate>> = (0..q + k)
        .into_par_iter()
        .map(|series| {
            let mut rng = sweep_rng.substream(TAG_VOLS * 1_000_000 + series as u64);
            let (shocks, mut path, params) = if series < q {
                (
                    state.factors.column(series).clone_owned(),
                    state.h_path.column(series).clone_owned(),
                    state.sv_factor[series],
                )
            } else {
                (
                    idio.column(series - q).clone_owned(),
                    state.omega_path.column(series - q).clone_owned(),
                    state.sv_idio[series - q],
                )
            };
            path = factor_sv::draw_logvol_path(&shocks, &params, &path, &mut rng)?;
            let params = factor_sv::draw_sv_params(&shocks, &mut path, &params, &prior, &mut rng)?;
            Ok(SeriesUpdate { path, params })
        })
        .collect();
    for (series, u) in updates.into_iter().enumerate() {
        let u = u?;
        if series < q {
            state.h_path.set_column(series, &u.path);
            state.sv_factor[series] = u.params;
        } else {
            state.omega_path.set_column(series - q, &u.path);
            state.sv_idio[series - q] = u.params;
        }
    }
    Ok(())
}

fn step_mixture(
    state: &mut ParameterState,
    config: &ModelConfig,
    tuning: &mut MhTuning,
    sweep_index: usize,
    sweep_rng: &RngStream,
) -> Result<()> {
    let mut rng = sweep_rng.substream(TAG_MIXTURE);
    let g = config.n_components;
    let c = state.domestic_matrix();
    let mx = &mut state.mixture;

    mx.weights = mixture::draw_weights(&mx.indicators, g, mx.p0, &mut rng)?;
    mx.indicators =
        mixture::draw_indicators(&c, &mx.weights, &mx.centers, &mx.common_var, &mut rng)?;
    mx.centers = mixture::draw_group_means(
        &c,
        &mx.indicators,
        &mx.common_var,
        &mx.mu0,
        &mx.q0_diag(),
        g,
        &mut rng,
    )?;
    mx.common_var =
        mixture::draw_common_variance(&c, &mx.indicators, &mx.centers, config.w0, config.w1, &mut rng)?;
    // range rebuild from the freshly drawn coefficients, then the scalings
    mx.r2 = match config.fixed_r2 {
        Some(v) => DVector::from_element(c.ncols(), v),
        None => mixture::squared_ranges(&c),
    };
    mx.lambda = mixture::draw_lambda(&mx.centers, &mx.mu0, &mx.r2, config.nu1, config.nu2, &mut rng)?;
    mx.mu0 = mixture::draw_mu0(&mx.centers, &mx.q0_diag(), config.mu0_prior, &mut rng)?;
    let (p0_new, accepted) = mixture::draw_p0(&mx.weights, mx.p0, config.c0, tuning.step, &mut rng)?;
    mx.p0 = p0_new;
    tuning.record(accepted, sweep_index < config.burn_in);
    Ok(())
}

fn step_shrinkage(
    state: &mut ParameterState,
    config: &ModelConfig,
    sweep_rng: &RngStream,
) -> Result<()> {
    let hyper = config.shrinkage_hyper();
    let n = config.n_countries;
    let k = config.k_foreign();
    let updates: Vec<Result<(f64, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = sweep_rng.substream(TAG_SHRINKAGE * 1_000_000 + i as u64);
            let tau_row: Vec<f64> = (0..k).map(|j| state.shrinkage.tau2[(i, j)]).collect();
            let xi = shrinkage::draw_xi(&tau_row, &hyper, &mut rng)?;
            let b = state.foreign_vec(i);
            let mut tau_new = Vec::with_capacity(k);
            for j in 0..k {
                tau_new.push(shrinkage::draw_tau(b[j], xi, hyper.theta, &mut rng)?);
            }
            Ok((xi, tau_new))
        })
        .collect();
    for (i, u) in updates.into_iter().enumerate() {
        let (xi, tau) = u?;
        state.shrinkage.xi[i] = xi;
        for j in 0..k {
            state.shrinkage.tau2[(i, j)] = tau[j];
        }
    }
    Ok(())
}

/// Deterministic starting state: ridge least squares per equation, a k-means
/// style split of the stacked domestic vectors, principal-component loadings
/// with the identification block enforced, and log sample variances for the
/// volatility paths.
pub fn initialize_state(
    panel: &PanelData,
    config: &ModelConfig,
    rng: &mut RngStream,
) -> Result<ParameterState> {
    config.validate()?;
    panel.validate_for_lags(config.lags)?;
    if panel.n_countries() != config.n_countries || panel.n_vars() != config.n_vars {
        return Err(Error::DimensionMismatch(
            "panel dimensions do not match the configuration".into(),
        ));
    }
    let n = config.n_countries;
    let m = config.n_vars;
    let q = config.n_factors;
    let k_tot = config.k_total();
    let p = config.lags;
    let t_eff = panel.len() - p;
    let y = panel.observations();

    // ridge least squares, equation by equation
    let mut coeffs = Vec::with_capacity(n);
    for i in 0..n {
        let (xd, xf) = build_design(panel, i, p)?;
        let d = xd.ncols() + xf.ncols();
        let mut design = DMatrix::zeros(t_eff, d);
        design.view_mut((0, 0), (t_eff, xd.ncols())).copy_from(&xd);
        design
            .view_mut((0, xd.ncols()), (t_eff, xf.ncols()))
            .copy_from(&xf);
        let mut gram = design.transpose() * &design;
        let ridge = 0.1 + 1e-6 * gram.trace() / d as f64;
        for c in 0..d {
            gram[(c, c)] += ridge;
        }
        let chol = nalgebra::Cholesky::new(gram)
            .ok_or_else(|| Error::NumericFailure("degenerate panel in initialization".into()))?;
        let mut dom = DMatrix::zeros(m, xd.ncols());
        let mut fr = DMatrix::zeros(m, xf.ncols());
        for j in 0..m {
            let target = DVector::from_fn(t_eff, |t, _| y[(p + t, panel.column(i, j))]);
            let sol = chol.solve(&(design.transpose() * target));
            for c in 0..xd.ncols() {
                dom[(j, c)] = sol[c];
            }
            for c in 0..xf.ncols() {
                fr[(j, c)] = sol[xd.ncols() + c];
            }
        }
        coeffs.push(CountryCoeffs {
            domestic: dom,
            foreign: fr,
        });
    }

    // residuals under the ridge fit
    let mut resid = DMatrix::zeros(t_eff, k_tot);
    for i in 0..n {
        let (xd, xf) = build_design(panel, i, p)?;
        let fitted = crate::panel::fitted_country(&coeffs[i].domestic, &coeffs[i].foreign, &xd, &xf);
        for t in 0..t_eff {
            for j in 0..m {
                let col = panel.column(i, j);
                resid[(t, col)] = y[(p + t, col)] - fitted[(t, j)];
            }
        }
    }

    // principal-component pass for the loadings, identification enforced
    let loadings = if q == 0 {
        DMatrix::zeros(k_tot, 0)
    } else {
        let cov = resid.transpose() * &resid / t_eff as f64;
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..k_tot).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap()
        });
        let mut l0 = DMatrix::zeros(k_tot, q);
        for (c, &idx) in order.iter().take(q).enumerate() {
            let scale = eig.eigenvalues[idx].max(1e-12).sqrt();
            for r in 0..k_tot {
                l0[(r, c)] = eig.eigenvectors[(r, idx)] * scale;
            }
        }
        let upper = l0.view((0, 0), (q, q)).clone_owned();
        let mut l = match upper.try_inverse() {
            Some(u_inv) => &l0 * u_inv,
            None => {
                let mut l = DMatrix::zeros(k_tot, q);
                for s in 0..q {
                    l[(s, s)] = 1.0;
                }
                l
            }
        };
        // pin the identification block exactly
        for r in 0..q {
            for c in 0..q {
                if r == c {
                    l[(r, c)] = 1.0;
                } else if c > r {
                    l[(r, c)] = 0.0;
                }
            }
        }
        l
    };

    // factors by least squares on the loadings, volatility paths at log
    // sample variances
    let factors = if q == 0 {
        DMatrix::zeros(t_eff, 0)
    } else {
        let gram = loadings.transpose() * &loadings;
        let chol = nalgebra::Cholesky::new(gram)
            .ok_or_else(|| Error::NumericFailure("singular loading initialization".into()))?;
        let mut f = DMatrix::zeros(t_eff, q);
        for t in 0..t_eff {
            let sol = chol.solve(&(loadings.transpose() * resid.row(t).transpose()));
            for s in 0..q {
                f[(t, s)] = sol[s];
            }
        }
        f
    };

    let log_var = |col: nalgebra::DVectorView<f64>| -> f64 {
        let mean = col.mean();
        let v = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / col.len().max(1) as f64;
        v.max(1e-8).ln()
    };
    let mut h_path = DMatrix::zeros(t_eff, q);
    let mut sv_factor = Vec::with_capacity(q);
    for s in 0..q {
        let lv = log_var(factors.column(s));
        for t in 0..t_eff {
            h_path[(t, s)] = lv;
        }
        sv_factor.push(SvParams {
            mean: lv,
            persistence: 0.9,
            vol: 0.2,
        });
    }
    let idio = &resid - &factors * loadings.transpose();
    let mut omega_path = DMatrix::zeros(t_eff, k_tot);
    let mut sv_idio = Vec::with_capacity(k_tot);
    for jcol in 0..k_tot {
        let lv = log_var(idio.column(jcol));
        for t in 0..t_eff {
            omega_path[(t, jcol)] = lv;
        }
        sv_idio.push(SvParams {
            mean: lv,
            persistence: 0.9,
            vol: 0.2,
        });
    }

    // mixture: k-means style split of the stacked domestic vectors
    let m_dom = config.m_domestic();
    let c_mat = DMatrix::from_fn(n, m_dom, |i, c| coeffs[i].domestic.as_slice()[c]);
    let mut init_rng = rng.substream(TAG_INIT);
    let indicators = kmeans_split(&c_mat, config.n_components, &mut init_rng);
    let grand_mean = DVector::from_fn(m_dom, |j, _| c_mat.column(j).mean());
    let counts = mixture::occupation_counts(&indicators, config.n_components);
    let mut centers = Vec::with_capacity(config.n_components);
    for g in 0..config.n_components {
        if counts[g] == 0 {
            centers.push(grand_mean.clone());
        } else {
            let mut mu = DVector::zeros(m_dom);
            for (i, &d) in indicators.iter().enumerate() {
                if d == g {
                    for j in 0..m_dom {
                        mu[j] += c_mat[(i, j)];
                    }
                }
            }
            centers.push(mu / counts[g] as f64);
        }
    }
    let common_var = DVector::from_fn(m_dom, |j, _| {
        let col = c_mat.column(j);
        let mean = col.mean();
        (col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64).max(1e-6)
    });
    let mut mu0 = DVector::zeros(m_dom);
    for j in 0..m_dom {
        let mut col: Vec<f64> = c_mat.column(j).iter().cloned().collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        mu0[j] = col[col.len() / 2];
    }
    let r2 = match config.fixed_r2 {
        Some(v) => DVector::from_element(m_dom, v),
        None => mixture::squared_ranges(&c_mat),
    };
    let mixture = MixtureState {
        weights: vec![1.0 / config.n_components as f64; config.n_components],
        indicators,
        centers,
        common_var,
        lambda: DVector::from_element(m_dom, 1.0),
        mu0,
        p0: 1.0 / config.n_components as f64,
        r2,
    };

    let shrinkage = ShrinkageState {
        xi: vec![1.0; n],
        tau2: DMatrix::from_element(n, config.k_foreign(), 1.0),
    };

    let state = ParameterState {
        coeffs,
        loadings,
        factors,
        h_path,
        omega_path,
        sv_factor,
        sv_idio,
        mixture,
        shrinkage,
    };
    state.validate()?;
    Ok(state)
}

/// Plain Lloyd iteration with seeded farthest-point starts; used only to
/// initialize the allocation.
fn kmeans_split(c: &DMatrix<f64>, g: usize, rng: &mut RngStream) -> Vec<usize> {
    let n = c.nrows();
    if g >= n {
        return (0..n).collect();
    }
    let dist2 = |a: usize, center: &DVector<f64>| -> f64 {
        (0..c.ncols())
            .map(|j| (c[(a, j)] - center[j]).powi(2))
            .sum()
    };
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(g);
    centers.push(c.row((rng.uniform() * n as f64) as usize % n).transpose());
    while centers.len() < g {
        let mut best = 0;
        let mut best_d = -1.0;
        for i in 0..n {
            let d = centers
                .iter()
                .map(|ctr| dist2(i, ctr))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        centers.push(c.row(best).transpose());
    }
    let mut assign = vec![0usize; n];
    for _ in 0..10 {
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (gg, ctr) in centers.iter().enumerate() {
                let d = dist2(i, ctr);
                if d < best_d {
                    best_d = d;
                    best = gg;
                }
            }
            assign[i] = best;
        }
        for (gg, ctr) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == gg).collect();
            if members.is_empty() {
                continue;
            }
            for j in 0..c.ncols() {
                ctr[j] = members.iter().map(|&i| c[(i, j)]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    assign
}

/// Draws a complete parameter state from the prior hierarchy. Requires a
/// proper top-level mean prior and a fixed range scaling (the adaptive range
/// has no generative counterpart).
pub fn prior_state(
    config: &ModelConfig,
    t_eff: usize,
    rng: &mut RngStream,
) -> Result<ParameterState> {
    config.validate()?;
    let (pm, pv) = config.mu0_prior.ok_or_else(|| {
        Error::Config("prior sampling requires a proper top-level mean prior".into())
    })?;
    let r2_fix = config
        .fixed_r2
        .ok_or_else(|| Error::Config("prior sampling requires a fixed range scaling".into()))?;
    let n = config.n_countries;
    let m = config.n_vars;
    let m_dom = config.m_domestic();
    let k_for = config.k_foreign();
    let k_tot = config.k_total();
    let q = config.n_factors;
    let g = config.n_components;
    let sv_prior = config.sv_prior();

    let p0 = dist::sample_gamma(config.c0, config.c0 * g as f64, rng)?;
    let weights = dist::sample_dirichlet(&vec![p0; g], rng)?;
    let lambda = DVector::from_fn(m_dom, |_, _| {
        dist::sample_gamma(config.nu1, config.nu2, rng).unwrap()
    });
    let r2 = DVector::from_element(m_dom, r2_fix);
    let mu0 = DVector::from_fn(m_dom, |_, _| dist::sample_normal(pm, pv.sqrt(), rng).unwrap());
    let q0 = lambda.component_mul(&r2);
    let centers: Vec<DVector<f64>> = (0..g)
        .map(|_| DVector::from_fn(m_dom, |j, _| dist::sample_normal(mu0[j], q0[j].sqrt(), rng).unwrap()))
        .collect();
    let common_var = DVector::from_fn(m_dom, |_, _| {
        dist::sample_inverse_gamma(config.w0, config.w1, rng).unwrap()
    });
    let indicators: Vec<usize> = (0..n)
        .map(|_| dist::sample_categorical(&weights, rng))
        .collect::<Result<_>>()?;

    let hyper = config.shrinkage_hyper();
    let mut xi = Vec::with_capacity(n);
    let mut tau2 = DMatrix::zeros(n, k_for);
    let mut coeffs = Vec::with_capacity(n);
    for i in 0..n {
        let x = dist::sample_gamma(hyper.cc0, hyper.cc1, rng)?;
        xi.push(x);
        let mut dom = DMatrix::zeros(m, m * config.lags + 1);
        for c in 0..dom.ncols() {
            for j in 0..m {
                let idx = coeff_index(m, j, c);
                dom[(j, c)] = dist::sample_normal(
                    centers[indicators[i]][idx],
                    common_var[idx].sqrt(),
                    rng,
                )?;
            }
        }
        let mut fr = DMatrix::zeros(m, (n - 1) * m * config.lags);
        for c in 0..fr.ncols() {
            for j in 0..m {
                let idx = coeff_index(m, j, c);
                let t2 = dist::sample_gamma(hyper.theta, 0.5 * hyper.theta * x, rng)?;
                tau2[(i, idx)] = t2;
                fr[(j, c)] = dist::sample_normal(0.0, t2.sqrt(), rng)?;
            }
        }
        coeffs.push(CountryCoeffs {
            domestic: dom,
            foreign: fr,
        });
    }

    let mut loadings = DMatrix::zeros(k_tot, q);
    for r in 0..k_tot {
        for c in 0..q {
            loadings[(r, c)] = if r < q {
                match r.cmp(&c) {
                    std::cmp::Ordering::Equal => 1.0,
                    std::cmp::Ordering::Less => 0.0,
                    std::cmp::Ordering::Greater => dist::sample_std_normal(rng),
                }
            } else {
                dist::sample_std_normal(rng)
            };
        }
    }

    let mut sv_factor = Vec::with_capacity(q);
    let mut h_path = DMatrix::zeros(t_eff, q);
    for s in 0..q {
        let p = factor_sv::sample_sv_prior(&sv_prior, rng)?;
        simulate_ar1_into(&mut h_path, s, &p, rng)?;
        sv_factor.push(p);
    }
    let mut sv_idio = Vec::with_capacity(k_tot);
    let mut omega_path = DMatrix::zeros(t_eff, k_tot);
    for s in 0..k_tot {
        let p = factor_sv::sample_sv_prior(&sv_prior, rng)?;
        simulate_ar1_into(&mut omega_path, s, &p, rng)?;
        sv_idio.push(p);
    }
    let factors = DMatrix::from_fn(t_eff, q, |t, s| {
        (0.5 * h_path[(t, s)]).exp() * dist::sample_std_normal(rng)
    });

    Ok(ParameterState {
        coeffs,
        loadings,
        factors,
        h_path,
        omega_path,
        sv_factor,
        sv_idio,
        mixture: MixtureState {
            weights,
            indicators,
            centers,
            common_var,
            lambda,
            mu0,
            p0,
            r2,
        },
        shrinkage: ShrinkageState { xi, tau2 },
    })
}

fn simulate_ar1_into(
    path: &mut DMatrix<f64>,
    col: usize,
    p: &SvParams,
    rng: &mut RngStream,
) -> Result<()> {
    let t_len = path.nrows();
    if t_len == 0 {
        return Ok(());
    }
    let stat_sd = p.vol / (1.0 - p.persistence * p.persistence).sqrt();
    path[(0, col)] = dist::sample_normal(p.mean, stat_sd, rng)?;
    for t in 1..t_len {
        path[(t, col)] = p.mean
            + p.persistence * (path[(t - 1, col)] - p.mean)
            + dist::sample_normal(0.0, p.vol, rng)?;
    }
    Ok(())
}

/// Simulates observations forward through the lag recursion given a full
/// parameter state (factors and volatility paths included) and the first
/// `P` rows as initial conditions.
pub fn simulate_observations(
    state: &ParameterState,
    y_init: &DMatrix<f64>,
    t_total: usize,
    config: &ModelConfig,
    rng: &mut RngStream,
) -> Result<DMatrix<f64>> {
    let n = config.n_countries;
    let m = config.n_vars;
    let k_tot = config.k_total();
    let p = config.lags;
    if y_init.nrows() != p || y_init.ncols() != k_tot {
        return Err(Error::DimensionMismatch(format!(
            "initial block is {}x{}, expected {}x{}",
            y_init.nrows(),
            y_init.ncols(),
            p,
            k_tot
        )));
    }
    if t_total < p || state.factors.nrows() < t_total - p {
        return Err(Error::DimensionMismatch(
            "state paths shorter than the requested sample".into(),
        ));
    }
    let mut y = DMatrix::zeros(t_total, k_tot);
    y.view_mut((0, 0), (p, k_tot)).copy_from(y_init);
    for t in p..t_total {
        let r = t - p;
        // shock vector
        let mut eps: DVector<f64> = DVector::zeros(k_tot);
        for s in 0..config.n_factors {
            let f = state.factors[(r, s)];
            for kk in 0..k_tot {
                eps[kk] += state.loadings[(kk, s)] * f;
            }
        }
        for kk in 0..k_tot {
            eps[kk] +=
                (0.5 * state.omega_path[(r, kk)]).exp() * dist::sample_std_normal(rng);
        }
        for i in 0..n {
            for j in 0..m {
                let mut acc = state.coeffs[i].domestic[(j, 0)];
                for lag in 0..p {
                    for v in 0..m {
                        acc += state.coeffs[i].domestic[(j, 1 + lag * m + v)]
                            * y[(t - lag - 1, i * m + v)];
                    }
                    let mut col = lag * (n - 1) * m;
                    for other in 0..n {
                        if other == i {
                            continue;
                        }
                        for v in 0..m {
                            acc += state.coeffs[i].foreign[(j, col)] * y[(t - lag - 1, other * m + v)];
                            col += 1;
                        }
                    }
                }
                y[(t, i * m + j)] = acc + eps[i * m + j];
            }
        }
    }
    Ok(y)
}

/// Runs the full chain and retains post-burn-in draws at the configured
/// thinning. On a sweep failure the partial store is written to `flush_dir`
/// (when given) before the error is returned.
pub fn run_chain_flushing(
    panel: &PanelData,
    config: &ModelConfig,
    flush_dir: Option<&std::path::Path>,
) -> Result<DrawStore> {
    config.validate()?;
    let mut root = RngStream::new(config.seed, 0);
    let mut state = initialize_state(panel, config, &mut root)?;
    run_chain_from(&mut state, panel, config, flush_dir)
}

/// As [`run_chain_flushing`] but continuing from a caller-provided state
/// (used for warm starts across forecast origins).
pub fn run_chain_from(
    state: &mut ParameterState,
    panel: &PanelData,
    config: &ModelConfig,
    flush_dir: Option<&std::path::Path>,
) -> Result<DrawStore> {
    config.validate()?;
    let root = RngStream::new(config.seed, 0);
    let ws = ChainWorkspace::new(panel, config)?;
    let mut tuning = MhTuning::new(config.mh_step);
    let clamp_before = dist::gig_clamp_count();
    let mut store = DrawStore::new(StoreMeta::new(config, panel));

    let run = |state: &mut ParameterState,
               store: &mut DrawStore,
               tuning: &mut MhTuning|
     -> Result<()> {
        for sweep in 0..config.chain_len {
            gibbs_sweep(state, panel, config, &ws, tuning, sweep, &root)
                .map_err(|e| e.at_sweep(sweep))?;
            if sweep >= config.burn_in && (sweep - config.burn_in) % config.thinning == 0 {
                state.validate().map_err(|e| e.at_sweep(sweep))?;
                store.push(state, config.store_paths);
            }
        }
        Ok(())
    };

    let result = if config.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| run(state, &mut store, &mut tuning))
    } else {
        run(state, &mut store, &mut tuning)
    };

    store.meta.p0_acceptance_rate = tuning.acceptance_rate();
    store.meta.mh_step_final = tuning.step;
    store.meta.gig_clamp_events = dist::gig_clamp_count() - clamp_before;

    match result {
        Ok(()) => {
            debug_assert_eq!(
                store.len(),
                (config.chain_len - config.burn_in) / config.thinning
            );
            Ok(store)
        }
        Err(e) => {
            if let Some(dir) = flush_dir {
                let _ = store.save(dir);
            }
            Err(e)
        }
    }
}

pub fn run_chain(panel: &PanelData, config: &ModelConfig) -> Result<DrawStore> {
    run_chain_flushing(panel, config, None)
}

/// Inefficiency factor `1 + 2 sum_l acf(l)` with the initial-positive-pair
/// truncation rule: lag autocorrelations are accumulated in consecutive
/// pairs and summation stops at the first pair with a nonpositive sum.
pub fn inefficiency_factor(xs: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n < 100 {
        return Err(Error::InsufficientDraws { need: 100, got: n });
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateInput(
            "constant sequence has no inefficiency factor".into(),
        ));
    }
    let acf = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for t in lag..n {
            acc += (xs[t] - mean) * (xs[t - lag] - mean);
        }
        acc / (n as f64 * var)
    };
    let mut sum = 0.0;
    let mut lag = 1usize;
    while lag + 1 < n / 2 {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    Ok(1.0 + 2.0 * sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Identification;

    fn small_panel(seed: u64, n: usize, m: usize, t: usize) -> PanelData {
        let mut rng = RngStream::new(seed, 900);
        let y = DMatrix::from_fn(t, n * m, |ti, _| {
            0.3 * (ti as f64 * 0.7).sin() + 0.5 * dist::sample_std_normal(&mut rng)
        });
        PanelData::new(
            y,
            (0..n).map(|i| format!("C{i}")).collect(),
            (0..m).map(|v| format!("V{v}")).collect(),
            (0..t).map(|d| format!("d{d}")).collect(),
        )
        .unwrap()
    }

    fn tiny_config(n: usize, m: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(n, m);
        cfg.n_factors = 1;
        cfg.n_components = 2;
        cfg.chain_len = 30;
        cfg.burn_in = 10;
        cfg.thinning = 2;
        cfg.seed = 99;
        cfg
    }

    #[test]
    fn chain_bookkeeping() {
        let panel = small_panel(1, 2, 1, 25);
        let mut cfg = tiny_config(2, 1);
        cfg.chain_len = 100;
        cfg.burn_in = 50;
        cfg.thinning = 5;
        let store = run_chain(&panel, &cfg).unwrap();
        assert_eq!(store.len(), 10);
    }

    #[test]
    fn chain_is_seed_reproducible() {
        let panel = small_panel(2, 2, 1, 25);
        let cfg = tiny_config(2, 1);
        let a = run_chain(&panel, &cfg).unwrap();
        let b = run_chain(&panel, &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (da, db) in a.draws().iter().zip(b.draws()) {
            assert_eq!(da.domestic, db.domestic);
            assert_eq!(da.foreign, db.foreign);
            assert_eq!(da.loadings, db.loadings);
            assert_eq!(da.p0, db.p0);
            assert_eq!(da.indicators, db.indicators);
        }
    }

    #[test]
    fn chain_independent_of_thread_count() {
        let panel = small_panel(3, 2, 1, 25);
        let mut cfg = tiny_config(2, 1);
        cfg.threads = 1;
        let a = run_chain(&panel, &cfg).unwrap();
        cfg.threads = 2;
        let b = run_chain(&panel, &cfg).unwrap();
        for (da, db) in a.draws().iter().zip(b.draws()) {
            assert_eq!(da.domestic, db.domestic);
            assert_eq!(da.p0, db.p0);
        }
    }

    #[test]
    fn two_sweeps_same_seed_same_state() {
        let panel = small_panel(4, 2, 1, 25);
        let cfg = tiny_config(2, 1);
        let ws = ChainWorkspace::new(&panel, &cfg).unwrap();
        let root = RngStream::new(7, 0);
        let mut rng_a = RngStream::new(7, 1);
        let mut s1 = initialize_state(&panel, &cfg, &mut rng_a).unwrap();
        let mut s2 = s1.clone();
        let mut t1 = MhTuning::new(1.0);
        let mut t2 = MhTuning::new(1.0);
        gibbs_sweep(&mut s1, &panel, &cfg, &ws, &mut t1, 0, &root).unwrap();
        gibbs_sweep(&mut s2, &panel, &cfg, &ws, &mut t2, 0, &root).unwrap();
        assert_eq!(s1.coeffs[0].domestic, s2.coeffs[0].domestic);
        assert_eq!(s1.mixture.p0, s2.mixture.p0);
        assert_eq!(s1.h_path, s2.h_path);
    }

    #[test]
    fn initialization_deterministic_and_valid() {
        let panel = small_panel(5, 3, 2, 40);
        let mut cfg = ModelConfig::new(3, 2);
        cfg.n_factors = 2;
        cfg.n_components = 4;
        let mut r1 = RngStream::new(11, 0);
        let mut r2 = RngStream::new(11, 0);
        let s1 = initialize_state(&panel, &cfg, &mut r1).unwrap();
        let s2 = initialize_state(&panel, &cfg, &mut r2).unwrap();
        s1.validate().unwrap();
        assert_eq!(s1.coeffs[1].domestic, s2.coeffs[1].domestic);
        assert_eq!(s1.mixture.indicators, s2.mixture.indicators);
        // identification block
        assert_eq!(s1.loadings[(0, 0)], 1.0);
        assert_eq!(s1.loadings[(0, 1)], 0.0);
        assert_eq!(s1.loadings[(1, 1)], 1.0);
    }

    #[test]
    fn inefficiency_factor_iid_and_ar1() {
        let mut rng = RngStream::new(21, 0);
        let iid: Vec<f64> = (0..10_000).map(|_| dist::sample_std_normal(&mut rng)).collect();
        let f = inefficiency_factor(&iid).unwrap();
        assert!((f - 1.0).abs() < 0.2, "iid factor {f}");

        // AR(1) with rho = 0.9: factor near (1+rho)/(1-rho) = 19
        let mut x = 0.0;
        let ar: Vec<f64> = (0..10_000)
            .map(|_| {
                x = 0.9 * x + dist::sample_std_normal(&mut rng);
                x
            })
            .collect();
        let f_ar = inefficiency_factor(&ar).unwrap();
        assert!((f_ar - 19.0).abs() < 3.0, "ar factor {f_ar}");
    }

    #[test]
    fn inefficiency_factor_degenerate_inputs() {
        assert!(matches!(
            inefficiency_factor(&[1.0; 50]),
            Err(Error::InsufficientDraws { .. })
        ));
        assert!(matches!(
            inefficiency_factor(&[2.5; 500]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn likelihood_free_mode_recovers_priors() {
        // with the observation information switched off, the stationary
        // distributions of the weight, intensity and global-scale chains are
        // their priors; two-sample Kolmogorov-Smirnov at the 1% level
        let panel = small_panel(6, 3, 1, 30);
        let mut cfg = ModelConfig::new(3, 1);
        cfg.n_factors = 1;
        cfg.n_components = 3;
        cfg.chain_len = 6000;
        cfg.burn_in = 1000;
        cfg.thinning = 5;
        cfg.seed = 31;
        cfg.likelihood_scale = 0.0;
        // keep the prior hierarchy proper and moderate for the check
        cfg.w0 = 3.0;
        cfg.w1 = 1.0;
        cfg.cc0 = 2.0;
        cfg.cc1 = 2.0;
        cfg.theta = 0.5;
        let store = run_chain(&panel, &cfg).unwrap();

        let chain_p0: Vec<f64> = store.draws().iter().map(|d| d.p0).collect();
        let chain_w0: Vec<f64> = store.draws().iter().map(|d| d.weights[0]).collect();
        let chain_xi: Vec<f64> = store.draws().iter().map(|d| d.xi[0]).collect();

        // direct prior simulation
        let mut rng = RngStream::new(77, 7);
        let g = cfg.n_components;
        let n_ref = 4000;
        let mut ref_p0 = Vec::with_capacity(n_ref);
        let mut ref_w0 = Vec::with_capacity(n_ref);
        let mut ref_xi = Vec::with_capacity(n_ref);
        for _ in 0..n_ref {
            let p0 = dist::sample_gamma(cfg.c0, cfg.c0 * g as f64, &mut rng).unwrap();
            ref_p0.push(p0);
            ref_w0.push(dist::sample_dirichlet(&vec![p0; g], &mut rng).unwrap()[0]);
            ref_xi.push(dist::sample_gamma(cfg.cc0, cfg.cc1, &mut rng).unwrap());
        }
        for (name, chain, reference) in [
            ("p0", &chain_p0, &ref_p0),
            ("w0", &chain_w0, &ref_w0),
            ("xi", &chain_xi, &ref_xi),
        ] {
            let d = two_sample_ks(chain, reference);
            // 1% critical value for the two-sample statistic
            let n1 = chain.len() as f64;
            let n2 = reference.len() as f64;
            let crit = 1.63 * ((n1 + n2) / (n1 * n2)).sqrt();
            // MCMC draws are autocorrelated; allow twice the iid critical value
            assert!(d < 2.0 * crit, "{name}: KS {d} vs {crit}");
        }
    }

    fn two_sample_ks(a: &[f64], b: &[f64]) -> f64 {
        let mut a: Vec<f64> = a.to_vec();
        let mut b: Vec<f64> = b.to_vec();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (mut i, mut j) = (0usize, 0usize);
        let mut d: f64 = 0.0;
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            let fa = i as f64 / a.len() as f64;
            let fb = j as f64 / b.len() as f64;
            d = d.max((fa - fb).abs());
        }
        d
    }

    #[test]
    fn prior_state_and_simulation_shapes() {
        let mut cfg = tiny_config(2, 1);
        cfg.mu0_prior = Some((0.0, 1.0));
        cfg.fixed_r2 = Some(1.0);
        let mut rng = RngStream::new(5, 0);
        let st = prior_state(&cfg, 7, &mut rng).unwrap();
        st.validate().unwrap();
        let y_init = DMatrix::zeros(1, 2);
        let y = simulate_observations(&st, &y_init, 8, &cfg, &mut rng).unwrap();
        assert_eq!(y.nrows(), 8);
        assert_eq!(y.ncols(), 2);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn relabeled_reporting_orders_by_configured_key() {
        let panel = small_panel(8, 2, 1, 30);
        let mut cfg = tiny_config(2, 1);
        cfg.identification = Identification::ByWeight;
        let store = run_chain(&panel, &cfg).unwrap();
        let rel = store.relabeled_indicators(Identification::ByWeight);
        assert_eq!(rel.len(), store.len());
        assert!(rel.iter().all(|row| row.len() == 2));
    }
}
