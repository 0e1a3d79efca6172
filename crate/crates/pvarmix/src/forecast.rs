//! Predictive simulation and recursive out-of-sample scoring.
//!
//! Predictive densities are built by forward simulation per retained draw:
//! log-variance states are propagated with fresh innovations, factors and
//! idiosyncratic shocks are drawn, and the lag recursion is iterated. The
//! resulting sample is summarized by a Gaussian (moments per variable plus a
//! joint block over a selected variable across countries), which is the
//! object the log predictive scores are evaluated on.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dist;
use crate::error::{Error, Result};
use crate::factor_sv::SvParams;
use crate::panel::{ModelConfig, PanelData};
use crate::rng::RngStream;
use crate::simlab::{fit_ar1_sv, fit_var_ng, Ar1Config, Ar1Store, VarNgConfig};
use crate::store::{DrawStore, StateDraw};

/// Paths whose magnitude exceeds this cap are clamped; incidents counted.
pub const PATH_CAP: f64 = 1e8;

static OVERFLOW_INCIDENTS: AtomicU64 = AtomicU64::new(0);

pub fn overflow_incidents() -> u64 {
    OVERFLOW_INCIDENTS.load(Ordering::Relaxed)
}

/// Gaussian summary of an h-step predictive distribution.
#[derive(Clone, Debug)]
pub struct PredictiveSummary {
    pub horizon: usize,
    /// Per-variable predictive means, full panel ordering.
    pub mean: DVector<f64>,
    /// Per-variable predictive variances.
    pub var: DVector<f64>,
    /// Panel columns entering the joint block.
    pub joint_idx: Vec<usize>,
    pub joint_mean: DVector<f64>,
    pub joint_cov: DMatrix<f64>,
    pub n_draws: usize,
}

impl PredictiveSummary {
    pub fn validate(&self) -> Result<()> {
        if self.var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter(
                "predictive variances must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Log density of N(realized | mean, var).
pub fn lps_gaussian(mean: f64, var: f64, realized: f64) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "predictive variance must be positive, got {var}"
        )));
    }
    Ok(dist::ln_normal_pdf(realized, mean, var))
}

/// Multivariate Gaussian log density of the realized sub-vector under the
/// marginal predictive moments.
pub fn joint_lps(mean: &DVector<f64>, cov: &DMatrix<f64>, realized: &DVector<f64>) -> Result<f64> {
    let n = mean.len();
    if cov.nrows() != n || realized.len() != n {
        return Err(Error::DimensionMismatch("joint predictive block".into()));
    }
    let sym = (cov.clone() + cov.transpose()) * 0.5;
    let chol = nalgebra::Cholesky::new(sym).ok_or_else(|| {
        Error::NumericFailure("joint predictive covariance not positive definite".into())
    })?;
    let diff = realized - mean;
    let z = chol
        .l()
        .solve_lower_triangular(&diff)
        .ok_or_else(|| Error::NumericFailure("triangular solve in joint score".into()))?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared()))
}

fn draw_coeffs(d: &StateDraw, n: usize, m: usize, p: usize) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let m_dom = m * (m * p + 1);
    let k_for = p * m * m * (n - 1);
    let mut dom = Vec::with_capacity(n);
    let mut fr = Vec::with_capacity(n);
    for i in 0..n {
        dom.push(DMatrix::from_column_slice(
            m,
            m * p + 1,
            &d.domestic[i * m_dom..(i + 1) * m_dom],
        ));
        fr.push(DMatrix::from_column_slice(
            m,
            (n - 1) * m * p,
            &d.foreign[i * k_for..(i + 1) * k_for],
        ));
    }
    (dom, fr)
}

fn sv_from_flat(sv: &[f64], idx: usize) -> SvParams {
    SvParams {
        mean: sv[idx * 3],
        persistence: sv[idx * 3 + 1],
        vol: sv[idx * 3 + 2],
    }
}

/// Simulates the system forward per retained draw and summarizes each
/// requested horizon. `joint_idx` selects the panel columns of the joint
/// block (typically one variable across all countries).
pub fn predict_multi(
    store: &DrawStore,
    panel: &PanelData,
    horizons: &[usize],
    joint_idx: &[usize],
    paths_per_draw: usize,
    rng: &RngStream,
) -> Result<Vec<PredictiveSummary>> {
    let n = store.meta.n_countries;
    let m = store.meta.n_vars;
    let p = store.meta.lags;
    let q = store.meta.n_factors;
    let k_tot = n * m;
    if panel.k() != k_tot {
        return Err(Error::DimensionMismatch("store and panel disagree".into()));
    }
    if store.is_empty() {
        return Err(Error::InsufficientDraws { need: 1, got: 0 });
    }
    let h_max = *horizons.iter().max().ok_or_else(|| {
        Error::InvalidParameter("at least one horizon required".into())
    })?;
    if h_max == 0 {
        return Err(Error::InvalidParameter("horizons start at one".into()));
    }
    let t = panel.len();
    let y = panel.observations();

    // per (draw, path): simulate h_max steps, record each horizon
    let samples: Vec<Result<Vec<Vec<f64>>>> = store
        .draws()
        .par_iter()
        .enumerate()
        .map(|(di, d)| {
            let mut out: Vec<Vec<f64>> = vec![Vec::new(); horizons.len()];
            let (dom, fr) = draw_coeffs(d, n, m, p);
            for path_i in 0..paths_per_draw {
                let mut r = rng.substream(0xf0_0000 + (di * 1024 + path_i) as u64);
                // lag window, newest last
                let mut window: Vec<DVector<f64>> = (0..p)
                    .map(|lag| y.row(t - p + lag).transpose())
                    .collect();
                let mut h_state = DVector::from_fn(q, |s, _| d.h_last[s]);
                let mut om_state = DVector::from_fn(k_tot, |kk, _| d.omega_last[kk]);
                for step in 1..=h_max {
                    for s in 0..q {
                        let svp = sv_from_flat(&d.sv, s);
                        h_state[s] = svp.mean
                            + svp.persistence * (h_state[s] - svp.mean)
                            + svp.vol * dist::sample_std_normal(&mut r);
                    }
                    for kk in 0..k_tot {
                        let svp = sv_from_flat(&d.sv, q + kk);
                        om_state[kk] = svp.mean
                            + svp.persistence * (om_state[kk] - svp.mean)
                            + svp.vol * dist::sample_std_normal(&mut r);
                    }
                    let mut eps: DVector<f64> = DVector::zeros(k_tot);
                    for s in 0..q {
                        let f = (0.5 * h_state[s]).exp() * dist::sample_std_normal(&mut r);
                        for kk in 0..k_tot {
                            eps[kk] += d.loadings[kk * q + s] * f;
                        }
                    }
                    for kk in 0..k_tot {
                        eps[kk] += (0.5 * om_state[kk]).exp() * dist::sample_std_normal(&mut r);
                    }
                    let mut y_next = DVector::zeros(k_tot);
                    for i in 0..n {
                        for j in 0..m {
                            let mut acc = dom[i][(j, 0)];
                            for lag in 0..p {
                                let past = &window[p - 1 - lag];
                                for v in 0..m {
                                    acc += dom[i][(j, 1 + lag * m + v)] * past[i * m + v];
                                }
                                let mut col = lag * (n - 1) * m;
                                for other in 0..n {
                                    if other == i {
                                        continue;
                                    }
                                    for v in 0..m {
                                        acc += fr[i][(j, col)] * past[other * m + v];
                                        col += 1;
                                    }
                                }
                            }
                            let mut val: f64 = acc + eps[i * m + j];
                            if val.abs() > PATH_CAP {
                                OVERFLOW_INCIDENTS.fetch_add(1, Ordering::Relaxed);
                                val = val.clamp(-PATH_CAP, PATH_CAP);
                            }
                            y_next[i * m + j] = val;
                        }
                    }
                    window.rotate_left(1);
                    let last = window.len() - 1;
                    window[last] = y_next.clone();
                    if let Some(pos) = horizons.iter().position(|&hh| hh == step) {
                        out[pos].extend(y_next.iter().cloned());
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let mut flat: Vec<Vec<f64>> = vec![Vec::new(); horizons.len()];
    for s in samples {
        let s = s?;
        for (hpos, vals) in s.into_iter().enumerate() {
            flat[hpos].extend(vals);
        }
    }

    let n_samp = store.len() * paths_per_draw;
    horizons
        .iter()
        .enumerate()
        .map(|(hpos, &h)| {
            summarize(&flat[hpos], k_tot, n_samp, h, joint_idx)
        })
        .collect()
}

fn summarize(
    flat: &[f64],
    k_tot: usize,
    n_samp: usize,
    horizon: usize,
    joint_idx: &[usize],
) -> Result<PredictiveSummary> {
    if n_samp < 2 {
        return Err(Error::InsufficientDraws { need: 2, got: n_samp });
    }
    let mut mean = DVector::zeros(k_tot);
    for s in 0..n_samp {
        for kk in 0..k_tot {
            mean[kk] += flat[s * k_tot + kk];
        }
    }
    mean /= n_samp as f64;
    let mut var = DVector::zeros(k_tot);
    for s in 0..n_samp {
        for kk in 0..k_tot {
            let d = flat[s * k_tot + kk] - mean[kk];
            var[kk] += d * d;
        }
    }
    var /= (n_samp - 1) as f64;
    for v in var.iter_mut() {
        *v = v.max(1e-30);
    }

    let jn = joint_idx.len();
    let joint_mean = DVector::from_fn(jn, |a, _| mean[joint_idx[a]]);
    let mut joint_cov = DMatrix::zeros(jn, jn);
    for s in 0..n_samp {
        for a in 0..jn {
            let da = flat[s * k_tot + joint_idx[a]] - joint_mean[a];
            for b in 0..jn {
                let db = flat[s * k_tot + joint_idx[b]] - joint_mean[b];
                joint_cov[(a, b)] += da * db;
            }
        }
    }
    joint_cov /= (n_samp - 1) as f64;
    for a in 0..jn {
        joint_cov[(a, a)] = joint_cov[(a, a)].max(1e-30);
    }
    let summary = PredictiveSummary {
        horizon,
        mean,
        var,
        joint_idx: joint_idx.to_vec(),
        joint_mean,
        joint_cov,
        n_draws: n_samp,
    };
    summary.validate()?;
    Ok(summary)
}

/// Single-horizon convenience wrapper over [`predict_multi`].
pub fn predict(
    store: &DrawStore,
    panel: &PanelData,
    horizon: usize,
    joint_idx: &[usize],
    paths_per_draw: usize,
    rng: &RngStream,
) -> Result<PredictiveSummary> {
    Ok(predict_multi(store, panel, &[horizon], joint_idx, paths_per_draw, rng)?
        .into_iter()
        .next()
        .unwrap())
}

/// Forward simulation for the univariate benchmark: one store per series.
pub fn predict_ar1(
    stores: &[Ar1Store],
    panel: &PanelData,
    horizons: &[usize],
    joint_idx: &[usize],
    paths_per_draw: usize,
    rng: &RngStream,
) -> Result<Vec<PredictiveSummary>> {
    let k_tot = panel.k();
    if stores.len() != k_tot {
        return Err(Error::DimensionMismatch(
            "one univariate store per series required".into(),
        ));
    }
    let h_max = *horizons.iter().max().unwrap_or(&0);
    let t = panel.len();
    let y = panel.observations();
    let n_draws = stores[0].draws.len();
    let n_samp = n_draws * paths_per_draw;

    // samples[hpos][s * k + series]
    let mut flat: Vec<Vec<f64>> = vec![vec![0.0; n_samp * k_tot]; horizons.len()];
    for (series, store) in stores.iter().enumerate() {
        for (di, d) in store.draws.iter().enumerate() {
            for path_i in 0..paths_per_draw {
                let mut r = rng.substream(
                    0xa0_0000 + (series * 65_536 + di * 16 + path_i) as u64,
                );
                let mut prev = y[(t - 1, series)];
                let mut om = d.omega_last;
                for step in 1..=h_max {
                    om = d.sv.mean
                        + d.sv.persistence * (om - d.sv.mean)
                        + d.sv.vol * dist::sample_std_normal(&mut r);
                    let mut val = d.intercept
                        + d.slope * prev
                        + (0.5 * om).exp() * dist::sample_std_normal(&mut r);
                    if val.abs() > PATH_CAP {
                        OVERFLOW_INCIDENTS.fetch_add(1, Ordering::Relaxed);
                        val = val.clamp(-PATH_CAP, PATH_CAP);
                    }
                    prev = val;
                    if let Some(pos) = horizons.iter().position(|&hh| hh == step) {
                        flat[pos][(di * paths_per_draw + path_i) * k_tot + series] = val;
                    }
                }
            }
        }
    }
    horizons
        .iter()
        .enumerate()
        .map(|(hpos, &h)| summarize(&flat[hpos], k_tot, n_samp, h, joint_idx))
        .collect()
}

/// Models entering the recursive comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForecastModel {
    PvarMix { components: usize, n_factors: usize },
    VarNg { n_factors: usize },
    Ar1Sv,
}

impl ForecastModel {
    pub fn label(&self) -> String {
        match self {
            ForecastModel::PvarMix { components, .. } => format!("pvar-g{components}"),
            ForecastModel::VarNg { .. } => "var-ng".into(),
            ForecastModel::Ar1Sv => "ar1-sv".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub chain_len: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub horizons: Vec<usize>,
    /// Variable index whose cross-country block forms the joint score.
    pub joint_variable: usize,
    pub paths_per_draw: usize,
    /// Re-use the previous origin's final state to start the next chain.
    pub warm_start: bool,
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            chain_len: 3000,
            burn_in: 1500,
            thinning: 1,
            seed: 1,
            horizons: vec![1, 3],
            joint_variable: 0,
            paths_per_draw: 1,
            warm_start: true,
            threads: 0,
        }
    }
}

/// One scored forecast: per-origin relative absolute error and log-score
/// difference against the benchmark.
#[derive(Clone, Debug)]
pub struct ScoreRow {
    pub model: String,
    pub country: String,
    pub horizon: usize,
    pub origin: usize,
    pub rmse_rel: f64,
    pub lps_diff: f64,
}

/// Aggregate per model, country and horizon: relative RMSE over origins and
/// the average log-score difference (values below one, respectively above
/// zero, favor the model).
#[derive(Clone, Debug)]
pub struct AggregateRow {
    pub model: String,
    pub country: String,
    pub horizon: usize,
    pub rmse_rel: f64,
    pub lps_diff: f64,
}

#[derive(Clone, Debug)]
pub struct JointRow {
    pub model: String,
    pub horizon: usize,
    /// Average joint log predictive score difference against the benchmark.
    pub joint_lps_diff: f64,
    /// Average joint log predictive score of the model itself.
    pub joint_lps: f64,
}

#[derive(Clone, Debug)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub aggregate: Vec<AggregateRow>,
    pub joint: Vec<JointRow>,
}

impl ScoreTable {
    pub fn write_csv(&self, scores: &std::path::Path, aggregate: &std::path::Path) -> Result<()> {
        let err = |e: csv::Error| Error::NumericFailure(format!("csv write: {e}"));
        let mut w = csv::Writer::from_path(scores).map_err(err)?;
        w.write_record(["model", "country", "horizon", "origin", "rmse_rel", "lps_diff"])
            .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.country.clone(),
                r.horizon.to_string(),
                r.origin.to_string(),
                format!("{}", r.rmse_rel),
                format!("{}", r.lps_diff),
            ])
            .map_err(err)?;
        }
        w.flush()?;

        let mut a = csv::Writer::from_path(aggregate).map_err(err)?;
        a.write_record(["model", "country", "horizon", "rmse_rel", "lps_diff"])
            .map_err(err)?;
        for r in &self.aggregate {
            a.write_record([
                r.model.clone(),
                r.country.clone(),
                r.horizon.to_string(),
                format!("{}", r.rmse_rel),
                format!("{}", r.lps_diff),
            ])
            .map_err(err)?;
        }
        for j in &self.joint {
            a.write_record([
                j.model.clone(),
                "joint".to_string(),
                j.horizon.to_string(),
                String::new(),
                format!("{}", j.joint_lps_diff),
            ])
            .map_err(err)?;
        }
        a.flush()?;
        Ok(())
    }
}

struct OriginForecast {
    /// per horizon position
    summaries: Vec<PredictiveSummary>,
}

fn fit_and_predict(
    model: &ForecastModel,
    panel_fit: &PanelData,
    cfg: &EvalConfig,
    origin: usize,
    warm: &mut Option<crate::state::ParameterState>,
    horizons: &[usize],
    joint_idx: &[usize],
) -> Result<OriginForecast> {
    let seed = cfg.seed ^ fnv(&format!("{}:{origin}", model.label()));
    let pred_rng = RngStream::new(seed, 0xfe);
    match model {
        ForecastModel::PvarMix {
            components,
            n_factors,
        } => {
            let mut mc = ModelConfig::new(panel_fit.n_countries(), panel_fit.n_vars());
            mc.lags = 1;
            mc.n_factors = *n_factors;
            mc.n_components = *components;
            mc.chain_len = cfg.chain_len;
            mc.burn_in = cfg.burn_in;
            mc.thinning = cfg.thinning;
            mc.seed = seed;
            mc.threads = 0;
            let store = if cfg.warm_start {
                match warm.take() {
                    Some(mut state) => {
                        extend_state_paths(&mut state, panel_fit.len() - mc.lags);
                        let st = crate::sampler::run_chain_from(&mut state, panel_fit, &mc, None)?;
                        *warm = Some(state);
                        st
                    }
                    None => {
                        let mut rng = RngStream::new(seed, 0);
                        let mut state = crate::sampler::initialize_state(panel_fit, &mc, &mut rng)?;
                        let st = crate::sampler::run_chain_from(&mut state, panel_fit, &mc, None)?;
                        *warm = Some(state);
                        st
                    }
                }
            } else {
                crate::sampler::run_chain(panel_fit, &mc)?
            };
            Ok(OriginForecast {
                summaries: predict_multi(&store, panel_fit, horizons, joint_idx, cfg.paths_per_draw, &pred_rng)?,
            })
        }
        ForecastModel::VarNg { n_factors } => {
            let mut vc = VarNgConfig::new(1, *n_factors);
            vc.chain_len = cfg.chain_len;
            vc.burn_in = cfg.burn_in;
            vc.thinning = cfg.thinning;
            vc.seed = seed;
            let store = fit_var_ng(panel_fit, &vc)?;
            Ok(OriginForecast {
                summaries: predict_multi(&store, panel_fit, horizons, joint_idx, cfg.paths_per_draw, &pred_rng)?,
            })
        }
        ForecastModel::Ar1Sv => {
            let mut stores = Vec::with_capacity(panel_fit.k());
            for series in 0..panel_fit.k() {
                let ys: Vec<f64> = (0..panel_fit.len())
                    .map(|t| panel_fit.observations()[(t, series)])
                    .collect();
                let ac = Ar1Config {
                    chain_len: cfg.chain_len.min(2000),
                    burn_in: (cfg.chain_len.min(2000)) / 2,
                    thinning: 1,
                    seed: seed ^ series as u64,
                    coef_prior_var: 100.0,
                };
                stores.push(fit_ar1_sv(&ys, &ac)?);
            }
            Ok(OriginForecast {
                summaries: predict_ar1(&stores, panel_fit, horizons, joint_idx, cfg.paths_per_draw, &pred_rng)?,
            })
        }
    }
}

fn extend_state_paths(state: &mut crate::state::ParameterState, new_t_eff: usize) {
    let old = state.factors.nrows();
    if new_t_eff <= old {
        return;
    }
    let grow = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(new_t_eff, m.ncols());
        out.view_mut((0, 0), (old, m.ncols())).copy_from(m);
        for t in old..new_t_eff {
            for c in 0..m.ncols() {
                out[(t, c)] = if old > 0 { m[(old - 1, c)] } else { 0.0 };
            }
        }
        out
    };
    state.factors = grow(&state.factors);
    state.h_path = grow(&state.h_path);
    state.omega_path = grow(&state.omega_path);
}

fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Recursive evaluation: estimate each model on an expanding window, score
/// every horizon against the realization, and aggregate relative to the
/// benchmark (first entry of `models` plays no special role; the benchmark
/// is always the univariate volatility model).
pub fn recursive_evaluation(
    panel: &PanelData,
    models: &[ForecastModel],
    training_end: usize,
    cfg: &EvalConfig,
) -> Result<ScoreTable> {
    let h_max = *cfg
        .horizons
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidParameter("no horizons".into()))?;
    if training_end + h_max > panel.len() {
        return Err(Error::DimensionMismatch(format!(
            "training end {training_end} plus horizon {h_max} exceeds panel length {}",
            panel.len()
        )));
    }
    let joint_idx: Vec<usize> = (0..panel.n_countries())
        .map(|i| panel.column(i, cfg.joint_variable))
        .collect();
    let origins: Vec<usize> = (training_end..=panel.len() - h_max).collect();
    let benchmark = ForecastModel::Ar1Sv;

    // benchmark forecasts per origin (sequential; cheap chains)
    let mut bench: Vec<OriginForecast> = Vec::with_capacity(origins.len());
    {
        let mut warm = None;
        for &origin in &origins {
            let panel_fit = panel.truncate(origin)?;
            bench.push(
                fit_and_predict(&benchmark, &panel_fit, cfg, origin, &mut warm, &cfg.horizons, &joint_idx)
                    .map_err(|e| e.at_origin(origin))?,
            );
        }
    }

    let run_model = |model: &ForecastModel| -> Result<Vec<OriginForecast>> {
        if *model == benchmark {
            // identical specification: reuse the benchmark forecasts so
            // self-comparison is exact
            return Ok(origins
                .iter()
                .enumerate()
                .map(|(oi, _)| OriginForecast {
                    summaries: bench[oi].summaries.clone(),
                })
                .collect());
        }
        let mut out = Vec::with_capacity(origins.len());
        let mut warm = None;
        for &origin in &origins {
            let panel_fit = panel.truncate(origin)?;
            out.push(
                fit_and_predict(model, &panel_fit, cfg, origin, &mut warm, &cfg.horizons, &joint_idx)
                    .map_err(|e| e.at_origin(origin))?,
            );
        }
        Ok(out)
    };

    let forecasts: Vec<Result<Vec<OriginForecast>>> = if cfg.threads == 1 || models.len() == 1 {
        models.iter().map(run_model).collect()
    } else {
        models.par_iter().map(run_model).collect()
    };

    let y = panel.observations();
    let mut rows = Vec::new();
    let mut aggregate = Vec::new();
    let mut joint = Vec::new();
    for (mi, fc) in forecasts.into_iter().enumerate() {
        let fc = fc?;
        let label = models[mi].label();
        for (hpos, &h) in cfg.horizons.iter().enumerate() {
            // per-country aggregation
            for i in 0..panel.n_countries() {
                let col = panel.column(i, cfg.joint_variable);
                let mut se_model = 0.0;
                let mut se_bench = 0.0;
                let mut lps_model = 0.0;
                let mut lps_bench = 0.0;
                for (oi, &origin) in origins.iter().enumerate() {
                    let realized = y[(origin + h - 1, col)];
                    let sm = &fc[oi].summaries[hpos];
                    let sb = &bench[oi].summaries[hpos];
                    let em = realized - sm.mean[col];
                    let eb = realized - sb.mean[col];
                    let lm = lps_gaussian(sm.mean[col], sm.var[col], realized)?;
                    let lb = lps_gaussian(sb.mean[col], sb.var[col], realized)?;
                    se_model += em * em;
                    se_bench += eb * eb;
                    lps_model += lm;
                    lps_bench += lb;
                    rows.push(ScoreRow {
                        model: label.clone(),
                        country: panel.countries()[i].clone(),
                        horizon: h,
                        origin,
                        rmse_rel: em.abs() / eb.abs().max(1e-300),
                        lps_diff: lm - lb,
                    });
                }
                let n_o = origins.len() as f64;
                aggregate.push(AggregateRow {
                    model: label.clone(),
                    country: panel.countries()[i].clone(),
                    horizon: h,
                    rmse_rel: (se_model / n_o).sqrt() / (se_bench / n_o).sqrt().max(1e-300),
                    lps_diff: (lps_model - lps_bench) / n_o,
                });
            }
            // joint block
            let mut jl_model = 0.0;
            let mut jl_bench = 0.0;
            for (oi, &origin) in origins.iter().enumerate() {
                let realized = DVector::from_fn(joint_idx.len(), |a, _| {
                    y[(origin + h - 1, joint_idx[a])]
                });
                let sm = &fc[oi].summaries[hpos];
                let sb = &bench[oi].summaries[hpos];
                jl_model += joint_lps(&sm.joint_mean, &sm.joint_cov, &realized)?;
                jl_bench += joint_lps(&sb.joint_mean, &sb.joint_cov, &realized)?;
            }
            let n_o = origins.len() as f64;
            joint.push(JointRow {
                model: label.clone(),
                horizon: h,
                joint_lps_diff: (jl_model - jl_bench) / n_o,
                joint_lps: jl_model / n_o,
            });
        }
    }
    Ok(ScoreTable {
        rows,
        aggregate,
        joint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::ModelConfig;
    use crate::sampler;
    use crate::store::{DrawStore, StoreMeta};

    fn degenerate_store(
        n: usize,
        m: usize,
        q: usize,
        dom: &[f64],
        fr: &[f64],
        load: &[f64],
        sv: &[f64],
        h_last: &[f64],
        omega_last: &[f64],
        draws: usize,
    ) -> DrawStore {
        let mut cfg = ModelConfig::new(n, m);
        cfg.n_factors = q;
        cfg.n_components = 1;
        cfg.chain_len = 2;
        cfg.burn_in = 1;
        let panel = crate::panel::PanelData::new(
            nalgebra::DMatrix::zeros(4, n * m),
            (0..n).map(|i| format!("C{i}")).collect(),
            (0..m).map(|v| format!("V{v}")).collect(),
            (0..4).map(|d| format!("d{d}")).collect(),
        )
        .unwrap();
        let mut store = DrawStore::new(StoreMeta::new(&cfg, &panel));
        let m_dom = m * (m + 1);
        let k_for = m * m * (n - 1);
        for _ in 0..draws {
            store.push_raw(crate::store::StateDraw {
                domestic: dom.to_vec(),
                foreign: fr.to_vec(),
                loadings: load.to_vec(),
                sv: sv.to_vec(),
                weights: vec![1.0],
                indicators: vec![0; n],
                centers: vec![0.0; m_dom],
                common_var: vec![1.0; m_dom],
                lambda: vec![1.0; m_dom],
                mu0: vec![0.0; m_dom],
                p0: 1.0,
                r2: vec![1.0; m_dom],
                xi: vec![1.0; n],
                tau2: vec![1.0; n * k_for],
                h_last: h_last.to_vec(),
                omega_last: omega_last.to_vec(),
                h_path: None,
                omega_path: None,
                factors: None,
            });
        }
        store
    }

    #[test]
    fn lps_values() {
        assert!((lps_gaussian(0.0, 1.0, 0.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!(
            (lps_gaussian(0.0, 1.0, 2.0).unwrap() - (-0.918_938_533_204_672_7 - 2.0)).abs()
                < 1e-12
        );
        assert!(lps_gaussian(0.0, 0.0, 1.0).is_err());
        assert!(lps_gaussian(0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn joint_lps_factorizes_and_matches_dense_formula() {
        // diagonal covariance: sum of univariate scores
        let mean = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5]));
        let x = DVector::from_vec(vec![0.0, 0.0, 2.5]);
        let joint = joint_lps(&mean, &cov, &x).unwrap();
        let sum: f64 = (0..3)
            .map(|i| lps_gaussian(mean[i], cov[(i, i)], x[i]).unwrap())
            .sum();
        assert!((joint - sum).abs() < 1e-12);

        // identity covariance, zero mean and realization: -(n/2) log 2 pi
        let z = DVector::zeros(3);
        let id = DMatrix::identity(3, 3);
        let v = joint_lps(&z, &id, &z).unwrap();
        assert!((v + 1.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);

        // dense 3-d case against the closed form with an explicit inverse
        let cov3 = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0],
        );
        let m3 = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let x3 = DVector::from_vec(vec![0.3, 0.4, -0.2]);
        let got = joint_lps(&m3, &cov3, &x3).unwrap();
        let inv = cov3.clone().try_inverse().unwrap();
        let det: f64 = cov3.determinant();
        let d = &x3 - &m3;
        let want = -0.5
            * (3.0 * (2.0 * std::f64::consts::PI).ln() + det.ln() + (d.transpose() * inv * d)[0]);
        assert!((got - want).abs() < 1e-12);

        // one-dimensional selection equals the univariate score
        let m1 = DVector::from_vec(vec![0.7]);
        let c1 = DMatrix::from_vec(1, 1, vec![1.3]);
        let x1 = DVector::from_vec(vec![0.2]);
        assert!(
            (joint_lps(&m1, &c1, &x1).unwrap() - lps_gaussian(0.7, 1.3, 0.2).unwrap()).abs()
                < 1e-15
        );

        // non positive definite covariance rejected
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(joint_lps(&DVector::zeros(2), &bad, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn predictive_zero_coefficients_match_noise_moments() {
        // all coefficients zero, loadings zero, omega pinned: mean 0,
        // variance e^omega
        let (n, m, q) = (2usize, 1usize, 1usize);
        let dom = vec![0.0; n * m * (m + 1)];
        let fr = vec![0.0; n * m * m * (n - 1)];
        let load = vec![0.0; n * m * q];
        // frozen volatility: persistence 0, vol ~ 0 keeps omega at its mean
        let sv = vec![
            0.0, 0.0, 1e-12, // factor series
            -1.0, 0.0, 1e-12, // idio 1
            0.5, 0.0, 1e-12, // idio 2
        ];
        let store = degenerate_store(
            n, m, q, &dom, &fr, &load, &sv, &[0.0], &[-1.0, 0.5], 400,
        );
        let panel = crate::panel::PanelData::new(
            nalgebra::DMatrix::zeros(4, 2),
            vec!["A".into(), "B".into()],
            vec!["u".into()],
            (0..4).map(|d| format!("d{d}")).collect(),
        )
        .unwrap();
        let rng = RngStream::new(3, 0);
        let s = predict(&store, &panel, 1, &[0, 1], 25, &rng).unwrap();
        assert!(s.mean[0].abs() < 0.02, "mean {}", s.mean[0]);
        assert!((s.var[0] - (-1.0f64).exp()).abs() < 0.02);
        assert!((s.var[1] - 0.5f64.exp()).abs() < 0.1);
    }

    #[test]
    fn predictive_zero_noise_is_deterministic_iterate() {
        // h=1 with suppressed process noise: the mean equals the lag
        // recursion applied to the last observation
        let (n, m, q) = (2usize, 1usize, 1usize);
        // equation: y_i = 0.5 + 0.8 y_i(t-1) + 0.1 y_other(t-1)
        let dom = vec![0.5, 0.8, 0.5, 0.8];
        let fr = vec![0.1, 0.1];
        let load = vec![0.0; 2];
        let sv = vec![
            -60.0, 0.0, 1e-12, 
            -60.0, 0.0, 1e-12, 
            -60.0, 0.0, 1e-12,
        ];
        let store = degenerate_store(
            n, m, q, &dom, &fr, &load, &sv, &[-60.0], &[-60.0, -60.0], 50,
        );
        let mut y = nalgebra::DMatrix::zeros(4, 2);
        y[(3, 0)] = 1.0;
        y[(3, 1)] = 2.0;
        let panel = crate::panel::PanelData::new(
            y,
            vec!["A".into(), "B".into()],
            vec!["u".into()],
            (0..4).map(|d| format!("d{d}")).collect(),
        )
        .unwrap();
        let rng = RngStream::new(4, 0);
        let s = predict(&store, &panel, 1, &[0], 1, &rng).unwrap();
        assert!((s.mean[0] - (0.5 + 0.8 * 1.0 + 0.1 * 2.0)).abs() < 1e-9);
        assert!((s.mean[1] - (0.5 + 0.8 * 2.0 + 0.1 * 1.0)).abs() < 1e-9);
    }

    #[test]
    fn predictive_moments_match_bruteforce_simulation_oracle() {
        // one fixed parameter draw: compare the sampled predictive moments
        // against an independent large-sample forward simulation
        let (n, m, q) = (2usize, 1usize, 1usize);
        let dom = vec![0.2, 0.5, -0.1, 0.4];
        let fr = vec![0.2, -0.3];
        let load = vec![1.0, 0.7];
        let sv = vec![
            -1.0, 0.6, 0.25, 
            -2.0, 0.5, 0.2, 
            -1.5, 0.4, 0.3,
        ];
        let h_last = [-0.8];
        let omega_last = [-1.9, -1.2];
        let store = degenerate_store(
            n, m, q, &dom, &fr, &load, &sv, &h_last, &omega_last, 2000,
        );
        let mut y = nalgebra::DMatrix::zeros(4, 2);
        y[(3, 0)] = 0.6;
        y[(3, 1)] = -0.4;
        let panel = crate::panel::PanelData::new(
            y,
            vec!["A".into(), "B".into()],
            vec!["u".into()],
            (0..4).map(|d| format!("d{d}")).collect(),
        )
        .unwrap();
        let rng = RngStream::new(5, 0);
        let h = 3;
        let s = predict(&store, &panel, h, &[0, 1], 50, &rng).unwrap(); // 100k paths

        // independent oracle: plain forward simulation, separate generator
        let mut or = RngStream::new(6, 99);
        let n_paths = 1_000_000;
        let mut acc = [0.0f64; 2];
        let mut acc2 = [0.0f64; 2];
        for _ in 0..n_paths {
            let mut prev = [0.6, -0.4];
            let mut hs = h_last[0];
            let mut oms = omega_last;
            for _ in 0..h {
                hs = -1.0 + 0.6 * (hs + 1.0) + 0.25 * dist::sample_std_normal(&mut or);
                oms[0] = -2.0 + 0.5 * (oms[0] + 2.0) + 0.2 * dist::sample_std_normal(&mut or);
                oms[1] = -1.5 + 0.4 * (oms[1] + 1.5) + 0.3 * dist::sample_std_normal(&mut or);
                let f = (0.5 * hs).exp() * dist::sample_std_normal(&mut or);
                let e0 = 1.0 * f + (0.5 * oms[0]).exp() * dist::sample_std_normal(&mut or);
                let e1 = 0.7 * f + (0.5 * oms[1]).exp() * dist::sample_std_normal(&mut or);
                let y0 = 0.2 + 0.5 * prev[0] + 0.2 * prev[1] + e0;
                let y1 = -0.1 + 0.4 * prev[1] - 0.3 * prev[0] + e1;
                prev = [y0, y1];
            }
            acc[0] += prev[0];
            acc[1] += prev[1];
            acc2[0] += prev[0] * prev[0];
            acc2[1] += prev[1] * prev[1];
        }
        for kk in 0..2 {
            let mean_o = acc[kk] / n_paths as f64;
            let var_o = acc2[kk] / n_paths as f64 - mean_o * mean_o;
            let mc_se = (var_o / n_paths as f64).sqrt() + (var_o / s.n_draws as f64).sqrt();
            assert!(
                (s.mean[kk] - mean_o).abs() < 4.0 * mc_se,
                "mean[{kk}] {} vs oracle {mean_o}",
                s.mean[kk]
            );
            assert!(
                (s.var[kk] - var_o).abs() / var_o < 0.05,
                "var[{kk}] {} vs oracle {var_o}",
                s.var[kk]
            );
        }
    }

    #[test]
    fn predictive_invariant_to_label_permutation() {
        // permuting the mixture blocks of every draw leaves the predictive
        // summary unchanged: it is a functional of the lag recursion only
        let panel = {
            let mut rng = RngStream::new(31, 0);
            crate::panel::PanelData::new(
                nalgebra::DMatrix::from_fn(30, 2, |_, _| dist::sample_std_normal(&mut rng)),
                vec!["A".into(), "B".into()],
                vec!["u".into()],
                (0..30).map(|d| format!("d{d}")).collect(),
            )
            .unwrap()
        };
        let mut cfg = ModelConfig::new(2, 1);
        cfg.n_factors = 1;
        cfg.n_components = 2;
        cfg.chain_len = 60;
        cfg.burn_in = 30;
        cfg.seed = 21;
        let store = sampler::run_chain(&panel, &cfg).unwrap();
        let mut permuted = store.clone();
        permuted.permute_mixture_labels_for_test();
        let rng = RngStream::new(77, 0);
        let a = predict(&store, &panel, 2, &[0, 1], 2, &rng).unwrap();
        let b = predict(&permuted, &panel, 2, &[0, 1], 2, &rng).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.var, b.var);
        assert_eq!(a.joint_cov, b.joint_cov);
    }

    #[test]
    fn recursive_evaluation_bookkeeping_and_self_consistency() {
        // 2 origins, 1 horizon, benchmark vs itself: one row per
        // model-country-horizon-origin, ratio one and difference zero
        let mut rng = RngStream::new(41, 0);
        let t = 40;
        let mut y = nalgebra::DMatrix::zeros(t, 2);
        for ti in 1..t {
            y[(ti, 0)] = 0.3 + 0.7 * y[(ti - 1, 0)] + 0.3 * dist::sample_std_normal(&mut rng);
            y[(ti, 1)] = -0.2 + 0.5 * y[(ti - 1, 1)] + 0.2 * dist::sample_std_normal(&mut rng);
        }
        let panel = crate::panel::PanelData::new(
            y,
            vec!["A".into(), "B".into()],
            vec!["u".into()],
            (0..t).map(|d| format!("d{d}")).collect(),
        )
        .unwrap();
        let cfg = EvalConfig {
            chain_len: 200,
            burn_in: 100,
            horizons: vec![1],
            seed: 5,
            warm_start: false,
            ..Default::default()
        };
        let table =
            recursive_evaluation(&panel, &[ForecastModel::Ar1Sv], t - 2, &cfg).unwrap();
        // origins: t-2 and t-1 with h=1 -> 2 origins x 2 countries
        assert_eq!(table.rows.len(), 4);
        for r in &table.rows {
            assert!((r.rmse_rel - 1.0).abs() < 1e-12, "ratio {}", r.rmse_rel);
            assert!(r.lps_diff.abs() < 1e-12, "diff {}", r.lps_diff);
        }
        for a in &table.aggregate {
            assert!((a.rmse_rel - 1.0).abs() < 1e-12);
            assert!(a.lps_diff.abs() < 1e-12);
        }
        for j in &table.joint {
            assert!(j.joint_lps_diff.abs() < 1e-12);
        }
    }
}
