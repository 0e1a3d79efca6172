//! Persisted sequence of retained draws.
//!
//! On disk a store is a directory holding `meta.json` plus one little-endian
//! binary file per parameter block (magic `PVMX`, version, dimension header,
//! then `f64` data, draw-major). A flattened CSV export is available for
//! plotting.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture;
use crate::panel::{Identification, ModelConfig, PanelData};
use crate::state::ParameterState;

const MAGIC: &[u8; 4] = b"PVMX";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoreMeta {
    pub config_hash: String,
    pub seed: u64,
    pub chain_len: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub n_countries: usize,
    pub n_vars: usize,
    pub lags: usize,
    pub n_factors: usize,
    pub n_components: usize,
    pub t_len: usize,
    pub store_paths: bool,
    #[serde(default)]
    pub p0_acceptance_rate: f64,
    #[serde(default)]
    pub mh_step_final: f64,
    #[serde(default)]
    pub gig_clamp_events: u64,
}

impl StoreMeta {
    pub fn new(config: &ModelConfig, panel: &PanelData) -> Self {
        Self {
            config_hash: config_hash(config),
            seed: config.seed,
            chain_len: config.chain_len,
            burn_in: config.burn_in,
            thinning: config.thinning,
            n_countries: config.n_countries,
            n_vars: config.n_vars,
            lags: config.lags,
            n_factors: config.n_factors,
            n_components: config.n_components,
            t_len: panel.len(),
            store_paths: config.store_paths,
            p0_acceptance_rate: f64::NAN,
            mh_step_final: f64::NAN,
            gig_clamp_events: 0,
        }
    }
}

/// FNV-1a over the canonical JSON encoding of the configuration.
pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_string(config).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// One retained draw, flattened. Coefficient blocks are country-major;
/// matrices are stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDraw {
    pub domestic: Vec<f64>,
    pub foreign: Vec<f64>,
    pub loadings: Vec<f64>,
    /// mean, persistence, vol per factor series then per idiosyncratic series.
    pub sv: Vec<f64>,
    pub weights: Vec<f64>,
    pub indicators: Vec<u32>,
    pub centers: Vec<f64>,
    pub common_var: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu0: Vec<f64>,
    pub p0: f64,
    pub r2: Vec<f64>,
    pub xi: Vec<f64>,
    pub tau2: Vec<f64>,
    /// Final log-variance states, needed to start predictive simulation.
    pub h_last: Vec<f64>,
    pub omega_last: Vec<f64>,
    pub h_path: Option<Vec<f64>>,
    pub omega_path: Option<Vec<f64>>,
    pub factors: Option<Vec<f64>>,
}

impl StateDraw {
    pub fn from_state(state: &ParameterState, store_paths: bool) -> Self {
        let n = state.coeffs.len();
        let mut domestic = Vec::new();
        let mut foreign = Vec::new();
        for i in 0..n {
            domestic.extend_from_slice(state.domestic_vec(i).as_slice());
            foreign.extend_from_slice(state.foreign_vec(i).as_slice());
        }
        let loadings: Vec<f64> = (0..state.loadings.nrows())
            .flat_map(|r| (0..state.loadings.ncols()).map(move |c| (r, c)))
            .map(|(r, c)| state.loadings[(r, c)])
            .collect();
        let mut sv = Vec::new();
        for p in state.sv_factor.iter().chain(state.sv_idio.iter()) {
            sv.extend_from_slice(&[p.mean, p.persistence, p.vol]);
        }
        let t_eff = state.h_path.nrows();
        let h_last = if t_eff > 0 {
            state.h_path.row(t_eff - 1).iter().cloned().collect()
        } else {
            vec![]
        };
        let omega_last = if t_eff > 0 {
            state.omega_path.row(t_eff - 1).iter().cloned().collect()
        } else {
            vec![]
        };
        let row_major = |mat: &nalgebra::DMatrix<f64>| -> Vec<f64> {
            (0..mat.nrows())
                .flat_map(|r| (0..mat.ncols()).map(move |c| (r, c)))
                .map(|(r, c)| mat[(r, c)])
                .collect()
        };
        Self {
            domestic,
            foreign,
            loadings,
            sv,
            weights: state.mixture.weights.clone(),
            indicators: state.mixture.indicators.iter().map(|&d| d as u32).collect(),
            centers: state
                .mixture
                .centers
                .iter()
                .flat_map(|c| c.iter().cloned())
                .collect(),
            common_var: state.mixture.common_var.iter().cloned().collect(),
            lambda: state.mixture.lambda.iter().cloned().collect(),
            mu0: state.mixture.mu0.iter().cloned().collect(),
            p0: state.mixture.p0,
            r2: state.mixture.r2.iter().cloned().collect(),
            xi: state.shrinkage.xi.clone(),
            tau2: (0..state.shrinkage.tau2.nrows())
                .flat_map(|r| (0..state.shrinkage.tau2.ncols()).map(move |c| (r, c)))
                .map(|(r, c)| state.shrinkage.tau2[(r, c)])
                .collect(),
            h_last,
            omega_last,
            h_path: store_paths.then(|| row_major(&state.h_path)),
            omega_path: store_paths.then(|| row_major(&state.omega_path)),
            factors: store_paths.then(|| row_major(&state.factors)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DrawStore {
    pub meta: StoreMeta,
    draws: Vec<StateDraw>,
}

impl DrawStore {
    pub fn new(meta: StoreMeta) -> Self {
        Self {
            meta,
            draws: Vec::new(),
        }
    }

    pub fn push(&mut self, state: &ParameterState, store_paths: bool) {
        self.draws.push(StateDraw::from_state(state, store_paths));
    }

    /// Appends an already-flattened draw (deserialization, tests).
    pub fn push_raw(&mut self, draw: StateDraw) {
        self.draws.push(draw);
    }

    /// Cyclically relabels the mixture blocks of every draw; used to check
    /// that label-invariant functionals do not move.
    #[cfg(test)]
    pub(crate) fn permute_mixture_labels_for_test(&mut self) {
        let g = self.meta.n_components;
        if g < 2 {
            return;
        }
        let m = self.meta.n_vars * (self.meta.n_vars * self.meta.lags + 1);
        for d in self.draws.iter_mut() {
            d.weights.rotate_left(1);
            d.centers.rotate_left(m);
            for ind in d.indicators.iter_mut() {
                *ind = (*ind + g as u32 - 1) % g as u32;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draws(&self) -> &[StateDraw] {
        &self.draws
    }

    /// Chain of one domestic coefficient (country `i`, flat coordinate `j`).
    pub fn domestic_chain(&self, i: usize, j: usize) -> Vec<f64> {
        let m = self.meta.n_vars * (self.meta.n_vars * self.meta.lags + 1);
        self.draws.iter().map(|d| d.domestic[i * m + j]).collect()
    }

    /// Chain of one cross-country coefficient.
    pub fn foreign_chain(&self, i: usize, j: usize) -> Vec<f64> {
        let k = self.meta.lags * self.meta.n_vars * self.meta.n_vars * (self.meta.n_countries - 1);
        self.draws.iter().map(|d| d.foreign[i * k + j]).collect()
    }

    /// Posterior medians of all lag coefficients, country-major, domestic
    /// block first.
    pub fn coefficient_medians(&self) -> (Vec<f64>, Vec<f64>) {
        let nd = self.draws[0].domestic.len();
        let nf = self.draws[0].foreign.len();
        let mut dom = Vec::with_capacity(nd);
        let mut fr = Vec::with_capacity(nf);
        for j in 0..nd {
            let mut xs: Vec<f64> = self.draws.iter().map(|d| d.domestic[j]).collect();
            dom.push(median_of(&mut xs));
        }
        for j in 0..nf {
            let mut xs: Vec<f64> = self.draws.iter().map(|d| d.foreign[j]).collect();
            fr.push(median_of(&mut xs));
        }
        (dom, fr)
    }

    /// Indicators of every retained draw, relabeled by the identification
    /// rule (active components ranked ascending).
    pub fn relabeled_indicators(&self, ident: Identification) -> Vec<Vec<usize>> {
        let m = self.meta.n_vars * (self.meta.n_vars * self.meta.lags + 1);
        let n = self.meta.n_countries;
        self.draws
            .iter()
            .map(|d| {
                let c = DMatrix::from_fn(n, m, |i, j| d.domestic[i * m + j]);
                let indicators: Vec<usize> = d.indicators.iter().map(|&x| x as usize).collect();
                mixture::relabel_draw(&d.weights, &c, &indicators, ident)
            })
            .collect()
    }

    /// Posterior mean allocation per country under relabeled draws.
    pub fn allocation_means(&self, ident: Identification) -> Vec<f64> {
        let rel = self.relabeled_indicators(ident);
        let n = self.meta.n_countries;
        let mut acc = vec![0.0; n];
        for row in &rel {
            for (i, &d) in row.iter().enumerate() {
                acc[i] += d as f64;
            }
        }
        for a in acc.iter_mut() {
            *a /= rel.len() as f64;
        }
        acc
    }

    /// Relative frequency of each active-component count across draws
    /// (index g holds the frequency of exactly g active components).
    pub fn active_cluster_distribution(&self) -> Vec<f64> {
        let g = self.meta.n_components;
        let mut counts = vec![0usize; g + 1];
        for d in &self.draws {
            let indicators: Vec<usize> = d.indicators.iter().map(|&x| x as usize).collect();
            counts[mixture::active_clusters(&indicators, g)] += 1;
        }
        counts
            .iter()
            .map(|&c| c as f64 / self.draws.len() as f64)
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta_json = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(dir.join("meta.json"), meta_json)?;

        let n = self.len();
        let write_f64 = |name: &str,
                         per_draw: usize,
                         get: &dyn Fn(&StateDraw) -> Vec<f64>|
         -> Result<()> {
            let mut buf = Vec::with_capacity(28 + 8 * n * per_draw);
            buf.extend_from_slice(MAGIC);
            buf.extend_from_slice(&VERSION.to_le_bytes());
            buf.extend_from_slice(&2u32.to_le_bytes());
            buf.extend_from_slice(&(n as u64).to_le_bytes());
            buf.extend_from_slice(&(per_draw as u64).to_le_bytes());
            for d in &self.draws {
                let vals = get(d);
                if vals.len() != per_draw {
                    return Err(Error::DimensionMismatch(format!(
                        "block {name} has irregular draw length"
                    )));
                }
                for v in vals {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            let mut f = std::fs::File::create(dir.join(format!("{name}.bin")))?;
            f.write_all(&buf)?;
            Ok(())
        };

        if n == 0 {
            return Ok(());
        }
        let d0 = &self.draws[0];
        write_f64("coeff_domestic", d0.domestic.len(), &|d| d.domestic.clone())?;
        write_f64("coeff_foreign", d0.foreign.len(), &|d| d.foreign.clone())?;
        write_f64("loadings", d0.loadings.len(), &|d| d.loadings.clone())?;
        write_f64("sv_params", d0.sv.len(), &|d| d.sv.clone())?;
        write_f64("mixture_weights", d0.weights.len(), &|d| d.weights.clone())?;
        write_f64("mixture_indicators", d0.indicators.len(), &|d| {
            d.indicators.iter().map(|&x| x as f64).collect()
        })?;
        write_f64("mixture_centers", d0.centers.len(), &|d| d.centers.clone())?;
        write_f64("mixture_common_var", d0.common_var.len(), &|d| {
            d.common_var.clone()
        })?;
        write_f64("mixture_lambda", d0.lambda.len(), &|d| d.lambda.clone())?;
        write_f64("mixture_mu0", d0.mu0.len(), &|d| d.mu0.clone())?;
        write_f64("mixture_p0", 1, &|d| vec![d.p0])?;
        write_f64("mixture_r2", d0.r2.len(), &|d| d.r2.clone())?;
        write_f64("shrink_xi", d0.xi.len(), &|d| d.xi.clone())?;
        write_f64("shrink_tau2", d0.tau2.len(), &|d| d.tau2.clone())?;
        write_f64("h_last", d0.h_last.len(), &|d| d.h_last.clone())?;
        write_f64("omega_last", d0.omega_last.len(), &|d| d.omega_last.clone())?;
        if self.meta.store_paths {
            if let Some(h) = &d0.h_path {
                write_f64("h_path", h.len(), &|d| d.h_path.clone().unwrap_or_default())?;
            }
            if let Some(o) = &d0.omega_path {
                write_f64("omega_path", o.len(), &|d| {
                    d.omega_path.clone().unwrap_or_default()
                })?;
            }
            if let Some(f) = &d0.factors {
                write_f64("factors", f.len(), &|d| d.factors.clone().unwrap_or_default())?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<DrawStore> {
        let meta: StoreMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let read_block = |name: &str| -> Result<Option<(usize, usize, Vec<f64>)>> {
            let path = dir.join(format!("{name}.bin"));
            if !path.exists() {
                return Ok(None);
            }
            let mut buf = Vec::new();
            std::fs::File::open(path)?.read_to_end(&mut buf)?;
            if buf.len() < 28 || &buf[0..4] != MAGIC {
                return Err(Error::NumericFailure(format!("corrupt block {name}")));
            }
            let n = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
            let per = u64::from_le_bytes(buf[20..28].try_into().unwrap()) as usize;
            let mut data = Vec::with_capacity(n * per);
            for chunk in buf[28..].chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            if data.len() != n * per {
                return Err(Error::NumericFailure(format!(
                    "block {name} truncated: {} of {}",
                    data.len(),
                    n * per
                )));
            }
            Ok(Some((n, per, data)))
        };

        let (n, per_dom, dom_data) = read_block("coeff_domestic")?
            .ok_or_else(|| Error::NumericFailure("missing coefficient block".into()))?;
        let take = |blk: Option<(usize, usize, Vec<f64>)>| -> (usize, Vec<f64>) {
            match blk {
                Some((_, per, data)) => (per, data),
                None => (0, vec![]),
            }
        };
        let (per_for, for_data) = take(read_block("coeff_foreign")?);
        let (per_load, load_data) = take(read_block("loadings")?);
        let (per_sv, sv_data) = take(read_block("sv_params")?);
        let (per_w, w_data) = take(read_block("mixture_weights")?);
        let (per_ind, ind_data) = take(read_block("mixture_indicators")?);
        let (per_cent, cent_data) = take(read_block("mixture_centers")?);
        let (per_cv, cv_data) = take(read_block("mixture_common_var")?);
        let (per_lam, lam_data) = take(read_block("mixture_lambda")?);
        let (per_mu0, mu0_data) = take(read_block("mixture_mu0")?);
        let (_, p0_data) = take(read_block("mixture_p0")?);
        let (per_r2, r2_data) = take(read_block("mixture_r2")?);
        let (per_xi, xi_data) = take(read_block("shrink_xi")?);
        let (per_tau, tau_data) = take(read_block("shrink_tau2")?);
        let (per_hl, hl_data) = take(read_block("h_last")?);
        let (per_ol, ol_data) = take(read_block("omega_last")?);

        let slice = |data: &[f64], per: usize, i: usize| -> Vec<f64> {
            if per == 0 {
                vec![]
            } else {
                data[i * per..(i + 1) * per].to_vec()
            }
        };
        let mut draws = Vec::with_capacity(n);
        for i in 0..n {
            draws.push(StateDraw {
                domestic: slice(&dom_data, per_dom, i),
                foreign: slice(&for_data, per_for, i),
                loadings: slice(&load_data, per_load, i),
                sv: slice(&sv_data, per_sv, i),
                weights: slice(&w_data, per_w, i),
                indicators: slice(&ind_data, per_ind, i)
                    .iter()
                    .map(|&x| x as u32)
                    .collect(),
                centers: slice(&cent_data, per_cent, i),
                common_var: slice(&cv_data, per_cv, i),
                lambda: slice(&lam_data, per_lam, i),
                mu0: slice(&mu0_data, per_mu0, i),
                p0: p0_data.get(i).cloned().unwrap_or(f64::NAN),
                r2: slice(&r2_data, per_r2, i),
                xi: slice(&xi_data, per_xi, i),
                tau2: slice(&tau_data, per_tau, i),
                h_last: slice(&hl_data, per_hl, i),
                omega_last: slice(&ol_data, per_ol, i),
                h_path: None,
                omega_path: None,
                factors: None,
            });
        }
        Ok(DrawStore { meta, draws })
    }

    /// One row per retained draw, flattened named columns.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let d0 = match self.draws.first() {
            Some(d) => d,
            None => return Ok(()),
        };
        let mut header: Vec<String> = vec!["draw".into()];
        let blocks: Vec<(&str, usize)> = vec![
            ("c", d0.domestic.len()),
            ("b", d0.foreign.len()),
            ("load", d0.loadings.len()),
            ("sv", d0.sv.len()),
            ("w", d0.weights.len()),
            ("delta", d0.indicators.len()),
            ("mu", d0.centers.len()),
            ("v", d0.common_var.len()),
            ("lambda", d0.lambda.len()),
            ("mu0", d0.mu0.len()),
            ("p0", 1),
            ("r2", d0.r2.len()),
            ("xi", d0.xi.len()),
            ("tau2", d0.tau2.len()),
        ];
        for (name, len) in &blocks {
            for j in 0..*len {
                header.push(format!("{name}{j}"));
            }
        }
        w.write_record(&header).map_err(csv_err)?;
        for (i, d) in self.draws.iter().enumerate() {
            let mut row: Vec<String> = vec![i.to_string()];
            let mut push_all = |vals: &[f64]| {
                for v in vals {
                    row.push(format!("{v}"));
                }
            };
            push_all(&d.domestic);
            push_all(&d.foreign);
            push_all(&d.loadings);
            push_all(&d.sv);
            push_all(&d.weights);
            let ind: Vec<f64> = d.indicators.iter().map(|&x| x as f64).collect();
            push_all(&ind);
            push_all(&d.centers);
            push_all(&d.common_var);
            push_all(&d.lambda);
            push_all(&d.mu0);
            push_all(&[d.p0]);
            push_all(&d.r2);
            push_all(&d.xi);
            push_all(&d.tau2);
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::NumericFailure(format!("csv write: {e}"))
}

pub fn median_of(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Empirical quantile by linear interpolation on the sorted sample.
pub fn quantile_of(xs: &mut [f64], q: f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    xs[lo] * (1.0 - frac) + xs[hi] * frac
}
