//! Run configuration: flat key-value files with command-line overrides.
//!
//! A config file holds one `key = value` pair per line (`#` comments).
//! Unknown keys are rejected. Every key can also be set on the command line
//! through repeated `--set key=value` flags, which win over the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::panel::{Identification, ModelConfig};
use crate::simlab::DgpSpec;

/// Full run configuration. Defaults mirror the estimation design: chain
/// 30000/15000, hyperparameters (w0=w1=0.01, nu1=nu2=0.5, c0=10,
/// cc0=cc1=0.01, theta=0.1), and the synthetic design for simulation.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: usize,

    // model block
    pub lags: usize,
    pub n_factors: usize,
    pub n_components: usize,
    pub w0: f64,
    pub w1: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub c0: f64,
    pub cc0: f64,
    pub cc1: f64,
    pub theta: f64,
    pub chain_len: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub ident_coefficient: Option<usize>,
    pub store_paths: bool,
    pub export_draws_csv: bool,
    pub literal_xi_rate: bool,

    // synthetic design block
    pub dgp_countries: usize,
    pub dgp_t_len: usize,
    pub dgp_sparsity: f64,
    pub dgp_replications: usize,
    pub run_experiment: bool,
    pub experiment_estimators: String,

    // forecasting block
    pub training_end: usize,
    pub horizons: Vec<usize>,
    pub joint_variable: usize,
    pub forecast_models: String,
    pub warm_start: bool,
    pub paths_per_draw: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: PathBuf::from("out"),
            seed: None,
            threads: 0,
            lags: 1,
            n_factors: 1,
            n_components: 8,
            w0: 0.01,
            w1: 0.01,
            nu1: 0.5,
            nu2: 0.5,
            c0: 10.0,
            cc0: 0.01,
            cc1: 0.01,
            theta: 0.1,
            chain_len: 30_000,
            burn_in: 15_000,
            thinning: 1,
            ident_coefficient: None,
            store_paths: false,
            export_draws_csv: false,
            literal_xi_rate: false,
            dgp_countries: 26,
            dgp_t_len: 80,
            dgp_sparsity: 0.3,
            dgp_replications: 50,
            run_experiment: false,
            experiment_estimators: "pvar-g8,pvar-g1,var-ng,var-ols".into(),
            training_end: 0,
            horizons: vec![1, 3],
            joint_variable: 0,
            forecast_models: "pvar-g8,pvar-g1,ar1-sv".into(),
            warm_start: true,
            paths_per_draw: 1,
        }
    }
}

impl RunConfig {
    /// Applies `key = value` pairs; unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let parse_usize =
            |v: &str| v.parse::<usize>().map_err(|_| bad(key, v, "an integer"));
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|_| bad(key, v, "a number"));
        let parse_bool = |v: &str| match v {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad(key, v, "a boolean")),
        };
        match key {
            "data" => self.data = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = Some(v.parse().map_err(|_| bad(key, v, "an integer"))?),
            "threads" => self.threads = parse_usize(v)?,
            "lags" => self.lags = parse_usize(v)?,
            "factors" => self.n_factors = parse_usize(v)?,
            "components" => self.n_components = parse_usize(v)?,
            "w0" => self.w0 = parse_f64(v)?,
            "w1" => self.w1 = parse_f64(v)?,
            "nu1" => self.nu1 = parse_f64(v)?,
            "nu2" => self.nu2 = parse_f64(v)?,
            "c0" => self.c0 = parse_f64(v)?,
            "cc0" => self.cc0 = parse_f64(v)?,
            "cc1" => self.cc1 = parse_f64(v)?,
            "theta" => self.theta = parse_f64(v)?,
            "chain" => self.chain_len = parse_usize(v)?,
            "burn" => self.burn_in = parse_usize(v)?,
            "thin" => self.thinning = parse_usize(v)?,
            "ident-coefficient" => {
                self.ident_coefficient = if v.is_empty() || v == "weight" {
                    None
                } else {
                    Some(parse_usize(v)?)
                }
            }
            "store-paths" => self.store_paths = parse_bool(v)?,
            "export-draws-csv" => self.export_draws_csv = parse_bool(v)?,
            "literal-xi-rate" => self.literal_xi_rate = parse_bool(v)?,
            "dgp-countries" => self.dgp_countries = parse_usize(v)?,
            "dgp-t" => self.dgp_t_len = parse_usize(v)?,
            "dgp-sparsity" => self.dgp_sparsity = parse_f64(v)?,
            "dgp-replications" => self.dgp_replications = parse_usize(v)?,
            "experiment" => self.run_experiment = parse_bool(v)?,
            "experiment-estimators" => self.experiment_estimators = v.to_string(),
            "training-end" => self.training_end = parse_usize(v)?,
            "horizons" => {
                self.horizons = v
                    .split(',')
                    .map(|h| h.trim().parse::<usize>().map_err(|_| bad(key, v, "a list of integers")))
                    .collect::<Result<_>>()?
            }
            "joint-variable" => self.joint_variable = parse_usize(v)?,
            "forecast-models" => self.forecast_models = v.to_string(),
            "warm-start" => self.warm_start = parse_bool(v)?,
            "paths-per-draw" => self.paths_per_draw = parse_usize(v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// All keys with their current values, in file syntax.
    pub fn dump(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert(
            "data",
            self.data
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        map.insert("out", self.out.display().to_string());
        map.insert(
            "seed",
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
        );
        map.insert("threads", self.threads.to_string());
        map.insert("lags", self.lags.to_string());
        map.insert("factors", self.n_factors.to_string());
        map.insert("components", self.n_components.to_string());
        map.insert("w0", self.w0.to_string());
        map.insert("w1", self.w1.to_string());
        map.insert("nu1", self.nu1.to_string());
        map.insert("nu2", self.nu2.to_string());
        map.insert("c0", self.c0.to_string());
        map.insert("cc0", self.cc0.to_string());
        map.insert("cc1", self.cc1.to_string());
        map.insert("theta", self.theta.to_string());
        map.insert("chain", self.chain_len.to_string());
        map.insert("burn", self.burn_in.to_string());
        map.insert("thin", self.thinning.to_string());
        map.insert(
            "ident-coefficient",
            self.ident_coefficient
                .map(|c| c.to_string())
                .unwrap_or_else(|| "weight".into()),
        );
        map.insert("store-paths", self.store_paths.to_string());
        map.insert("export-draws-csv", self.export_draws_csv.to_string());
        map.insert("literal-xi-rate", self.literal_xi_rate.to_string());
        map.insert("dgp-countries", self.dgp_countries.to_string());
        map.insert("dgp-t", self.dgp_t_len.to_string());
        map.insert("dgp-sparsity", self.dgp_sparsity.to_string());
        map.insert("dgp-replications", self.dgp_replications.to_string());
        map.insert("experiment", self.run_experiment.to_string());
        map.insert("experiment-estimators", self.experiment_estimators.clone());
        map.insert("training-end", self.training_end.to_string());
        map.insert(
            "horizons",
            self.horizons
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("joint-variable", self.joint_variable.to_string());
        map.insert("forecast-models", self.forecast_models.clone());
        map.insert("warm-start", self.warm_start.to_string());
        map.insert("paths-per-draw", self.paths_per_draw.to_string());
        map.iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }

    /// Estimation settings for a given panel shape.
    pub fn model_config(&self, n_countries: usize, n_vars: usize, seed: u64) -> ModelConfig {
        let mut cfg = ModelConfig::new(n_countries, n_vars);
        cfg.lags = self.lags;
        cfg.n_factors = self.n_factors;
        cfg.n_components = self.n_components;
        cfg.w0 = self.w0;
        cfg.w1 = self.w1;
        cfg.nu1 = self.nu1;
        cfg.nu2 = self.nu2;
        cfg.c0 = self.c0;
        cfg.cc0 = self.cc0;
        cfg.cc1 = self.cc1;
        cfg.theta = self.theta;
        cfg.chain_len = self.chain_len;
        cfg.burn_in = self.burn_in;
        cfg.thinning = self.thinning;
        cfg.seed = seed;
        cfg.threads = self.threads;
        cfg.store_paths = self.store_paths;
        cfg.literal_xi_rate = self.literal_xi_rate;
        cfg.identification = match self.ident_coefficient {
            Some(c) => Identification::ByCoefficient(c),
            None => Identification::ByWeight,
        };
        cfg
    }

    pub fn dgp_spec(&self, seed: u64) -> DgpSpec {
        let mut spec = DgpSpec::default();
        spec.n_countries = self.dgp_countries;
        spec.t_len = self.dgp_t_len;
        spec.sparsity = self.dgp_sparsity;
        spec.replications = self.dgp_replications;
        spec.seed = seed;
        spec
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("key `{key}`: `{value}` is not {want}"))
}
