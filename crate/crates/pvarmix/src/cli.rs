//! Command implementations behind the `pvarmix` binary.
//!
//! Four commands cover the workflow: `simulate` writes a synthetic panel
//! (optionally with the full estimator comparison), `fit` estimates the
//! mixture panel VAR and writes the draw store plus posterior summaries,
//! `forecast` exports h-step predictive moments, and `evaluate` runs the
//! recursive out-of-sample comparison. All randomized commands either take
//! an explicit seed or record the generated one in `meta.json`.

use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::forecast::{self, ForecastModel};
use crate::io;
use crate::panel::PanelData;
use crate::sampler;
use crate::simlab::{self, Estimator, ExperimentChain};
use crate::store::{median_of, quantile_of, DrawStore};

fn resolve_seed(cfg: &RunConfig) -> u64 {
    cfg.seed.unwrap_or_else(|| {
        use std::time::{SystemTime, UNIX_EPOCH};
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0x5eed)
    })
}

#[derive(Serialize)]
struct RunRecord {
    command: String,
    seed: u64,
    config: String,
}

fn write_run_record(out: &Path, command: &str, seed: u64, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let record = RunRecord {
        command: command.into(),
        seed,
        config: cfg.dump(),
    };
    std::fs::write(
        out.join("meta.json"),
        serde_json::to_string_pretty(&record)?,
    )?;
    Ok(())
}

#[derive(Serialize)]
struct TruthRecord {
    seed: u64,
    delta_true: Vec<usize>,
    domestic: Vec<f64>,
    foreign: Vec<f64>,
    equal_slots: Vec<usize>,
    w_true: Vec<f64>,
}

/// Synthetic data: panel CSV, truth record, optional estimator comparison.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let seed = resolve_seed(cfg);
    let spec = cfg.dgp_spec(seed);
    std::fs::create_dir_all(&cfg.out)?;
    write_run_record(&cfg.out, "simulate", seed, cfg)?;

    let mut rng = crate::rng::RngStream::new(seed, 0xd6);
    let (panel, truth) = simlab::generate_dgp(&spec, &mut rng)?;
    io::write_panel_csv(&panel, &cfg.out.join("panel.csv"))?;
    let record = TruthRecord {
        seed,
        delta_true: truth.delta_true.clone(),
        domestic: truth.domestic.clone(),
        foreign: truth.foreign.clone(),
        equal_slots: truth.equal_slots.clone(),
        w_true: truth.spec.w_true.clone(),
    };
    std::fs::write(
        cfg.out.join("truth.json"),
        serde_json::to_string_pretty(&record)?,
    )?;

    if cfg.run_experiment {
        let estimators = parse_estimators(&cfg.experiment_estimators)?;
        let chain = ExperimentChain {
            chain_len: cfg.chain_len,
            burn_in: cfg.burn_in,
            thinning: cfg.thinning,
            n_factors: cfg.n_factors,
            threads: cfg.threads,
        };
        let result = simlab::run_experiment(&spec, &estimators, &chain)?;
        result.write_csv(&cfg.out.join("results.csv"))?;
    }
    Ok(())
}

fn parse_estimators(spec: &str) -> Result<Vec<Estimator>> {
    spec.split(',')
        .map(|s| {
            let s = s.trim();
            if let Some(g) = s.strip_prefix("pvar-g") {
                let components: usize = g
                    .parse()
                    .map_err(|_| Error::Config(format!("bad estimator `{s}`")))?;
                Ok(Estimator::PvarMix { components })
            } else {
                match s {
                    "var-ng" => Ok(Estimator::VarNg),
                    "var-ols" => Ok(Estimator::VarOls),
                    _ => Err(Error::Config(format!("unknown estimator `{s}`"))),
                }
            }
        })
        .collect()
}

fn parse_models(spec: &str, n_factors: usize) -> Result<Vec<ForecastModel>> {
    spec.split(',')
        .map(|s| {
            let s = s.trim();
            if let Some(g) = s.strip_prefix("pvar-g") {
                let components: usize = g
                    .parse()
                    .map_err(|_| Error::Config(format!("bad model `{s}`")))?;
                Ok(ForecastModel::PvarMix {
                    components,
                    n_factors,
                })
            } else {
                match s {
                    "var-ng" => Ok(ForecastModel::VarNg { n_factors }),
                    "ar1-sv" => Ok(ForecastModel::Ar1Sv),
                    _ => Err(Error::Config(format!("unknown model `{s}`"))),
                }
            }
        })
        .collect()
}

fn load_panel(cfg: &RunConfig) -> Result<PanelData> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("`data` path required".into()))?;
    io::read_panel_csv(path)
}

/// Full estimation run: draw store on disk plus posterior summaries.
pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let seed = resolve_seed(cfg);
    let panel = load_panel(cfg)?;
    let model = cfg.model_config(panel.n_countries(), panel.n_vars(), seed);
    model.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    write_run_record(&cfg.out, "fit", seed, cfg)?;

    let store_dir = cfg.out.join("store");
    let store = sampler::run_chain_flushing(&panel, &model, Some(&store_dir))?;
    store.save(&store_dir)?;
    if cfg.export_draws_csv {
        store.export_csv(&cfg.out.join("draws.csv"))?;
    }
    write_fit_summaries(&store, &panel, &model, &cfg.out)?;
    Ok(())
}

fn write_fit_summaries(
    store: &DrawStore,
    panel: &PanelData,
    model: &crate::panel::ModelConfig,
    out: &Path,
) -> Result<()> {
    let err = |e: csv::Error| Error::NumericFailure(format!("csv write: {e}"));

    // scalar posterior summaries
    {
        let mut w = csv::Writer::from_path(out.join("summary.csv")).map_err(err)?;
        w.write_record(["parameter", "mean", "median", "q05", "q95"])
            .map_err(err)?;
        let mut write_block = |name: &str, chains: Vec<(String, Vec<f64>)>| -> Result<()> {
            for (label, mut xs) in chains {
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let q05 = quantile_of(&mut xs, 0.05);
                let q95 = quantile_of(&mut xs, 0.95);
                let med = median_of(&mut xs);
                w.write_record([
                    format!("{name}.{label}"),
                    format!("{mean}"),
                    format!("{med}"),
                    format!("{q05}"),
                    format!("{q95}"),
                ])
                .map_err(err)?;
            }
            Ok(())
        };
        let m_dom = model.m_domestic();
        let k_for = model.k_foreign();
        let mut coeff_chains = Vec::new();
        for i in 0..model.n_countries {
            for j in 0..m_dom {
                coeff_chains.push((
                    format!("{}[{j}]", panel.countries()[i]),
                    store.domestic_chain(i, j),
                ));
            }
        }
        write_block("c", coeff_chains)?;
        let mut foreign_chains = Vec::new();
        for i in 0..model.n_countries {
            for j in 0..k_for {
                foreign_chains.push((
                    format!("{}[{j}]", panel.countries()[i]),
                    store.foreign_chain(i, j),
                ));
            }
        }
        write_block("b", foreign_chains)?;
        write_block(
            "p0",
            vec![("value".into(), store.draws().iter().map(|d| d.p0).collect())],
        )?;
        let xi_chains: Vec<(String, Vec<f64>)> = (0..model.n_countries)
            .map(|i| {
                (
                    panel.countries()[i].clone(),
                    store.draws().iter().map(|d| d.xi[i]).collect(),
                )
            })
            .collect();
        write_block("xi", xi_chains)?;
        w.flush()?;
    }

    // posterior of the number of nonempty components
    {
        let dist = store.active_cluster_distribution();
        let mut w = csv::Writer::from_path(out.join("gstar.csv")).map_err(err)?;
        w.write_record(["g", "probability"]).map_err(err)?;
        for (g, p) in dist.iter().enumerate().skip(1) {
            w.write_record([g.to_string(), format!("{p}")]).map_err(err)?;
        }
        w.flush()?;
    }

    // per-coordinate log shrinkage-factor summaries (plot-ready)
    {
        let mut w = csv::Writer::from_path(out.join("lambda_summary.csv")).map_err(err)?;
        w.write_record(["coordinate", "log_lambda_q05", "log_lambda_median", "log_lambda_q95"])
            .map_err(err)?;
        for j in 0..model.m_domestic() {
            let mut xs: Vec<f64> = store.draws().iter().map(|d| d.lambda[j].ln()).collect();
            let q05 = quantile_of(&mut xs, 0.05);
            let q95 = quantile_of(&mut xs, 0.95);
            let med = median_of(&mut xs);
            w.write_record([
                j.to_string(),
                format!("{q05}"),
                format!("{med}"),
                format!("{q95}"),
            ])
            .map_err(err)?;
        }
        w.flush()?;
    }

    // relabeled allocation summaries (plot-ready)
    {
        let rel = store.relabeled_indicators(model.identification);
        let n = model.n_countries;
        let g = model.n_components;
        let mut freq = vec![vec![0.0f64; g]; n];
        for row in &rel {
            for (i, &d) in row.iter().enumerate() {
                freq[i][d] += 1.0;
            }
        }
        let means = store.allocation_means(model.identification);
        let mut w = csv::Writer::from_path(out.join("allocation.csv")).map_err(err)?;
        let mut header = vec!["country".to_string(), "posterior_mean".to_string()];
        for gg in 0..g {
            header.push(format!("p_component{}", gg + 1));
        }
        w.write_record(&header).map_err(err)?;
        for i in 0..n {
            let mut row = vec![panel.countries()[i].clone(), format!("{}", means[i])];
            for gg in 0..g {
                row.push(format!("{}", freq[i][gg] / rel.len() as f64));
            }
            w.write_record(&row).map_err(err)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Predictive moments at the end of the sample (or of `training-end`).
pub fn cmd_forecast(cfg: &RunConfig) -> Result<()> {
    let seed = resolve_seed(cfg);
    let full = load_panel(cfg)?;
    let panel = if cfg.training_end > 0 {
        full.truncate(cfg.training_end)?
    } else {
        full.clone()
    };
    let model = cfg.model_config(panel.n_countries(), panel.n_vars(), seed);
    std::fs::create_dir_all(&cfg.out)?;
    write_run_record(&cfg.out, "forecast", seed, cfg)?;

    let store = sampler::run_chain(&panel, &model)?;
    let joint_idx: Vec<usize> = (0..panel.n_countries())
        .map(|i| panel.column(i, cfg.joint_variable))
        .collect();
    let rng = crate::rng::RngStream::new(seed, 0xf0ca);
    let summaries = forecast::predict_multi(
        &store,
        &panel,
        &cfg.horizons,
        &joint_idx,
        cfg.paths_per_draw.max(1),
        &rng,
    )?;

    let err = |e: csv::Error| Error::NumericFailure(format!("csv write: {e}"));
    let mut w = csv::Writer::from_path(cfg.out.join("predictive.csv")).map_err(err)?;
    w.write_record(["horizon", "country", "variable", "mean", "variance"])
        .map_err(err)?;
    for s in &summaries {
        for i in 0..panel.n_countries() {
            for v in 0..panel.n_vars() {
                let col = panel.column(i, v);
                w.write_record([
                    s.horizon.to_string(),
                    panel.countries()[i].clone(),
                    panel.variables()[v].clone(),
                    format!("{}", s.mean[col]),
                    format!("{}", s.var[col]),
                ])
                .map_err(err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Recursive out-of-sample comparison against the univariate benchmark.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let seed = resolve_seed(cfg);
    let panel = load_panel(cfg)?;
    if cfg.training_end == 0 {
        return Err(Error::Config(
            "`training-end` must be set for evaluation".into(),
        ));
    }
    std::fs::create_dir_all(&cfg.out)?;
    write_run_record(&cfg.out, "evaluate", seed, cfg)?;

    let models = parse_models(&cfg.forecast_models, cfg.n_factors)?;
    let eval = forecast::EvalConfig {
        chain_len: cfg.chain_len,
        burn_in: cfg.burn_in,
        thinning: cfg.thinning,
        seed,
        horizons: cfg.horizons.clone(),
        joint_variable: cfg.joint_variable,
        paths_per_draw: cfg.paths_per_draw.max(1),
        warm_start: cfg.warm_start,
        threads: cfg.threads,
    };
    let table = forecast::recursive_evaluation(&panel, &models, cfg.training_end, &eval)?;
    table.write_csv(&cfg.out.join("scores.csv"), &cfg.out.join("aggregate.csv"))?;
    Ok(())
}

/// Summary of the posterior mixture allocation, used by examples.
pub fn allocation_report(store: &DrawStore, ident: crate::panel::Identification) -> Vec<String> {
    let dist = store.active_cluster_distribution();
    let mut out = Vec::new();
    for (g, p) in dist.iter().enumerate().skip(1) {
        if *p > 0.001 {
            out.push(format!("P(G* = {g}) = {p:.3}"));
        }
    }
    let means = store.allocation_means(ident);
    for (i, m) in means.iter().enumerate() {
        out.push(format!("country {i}: mean allocation {m:.3}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_and_model_parsing() {
        let ests = parse_estimators("pvar-g8, pvar-g1,var-ng,var-ols").unwrap();
        assert_eq!(ests.len(), 4);
        assert_eq!(ests[0], Estimator::PvarMix { components: 8 });
        assert!(parse_estimators("pvar-gX").is_err());
        assert!(parse_estimators("mystery").is_err());

        let models = parse_models("pvar-g8,ar1-sv", 2).unwrap();
        assert_eq!(
            models[0],
            ForecastModel::PvarMix {
                components: 8,
                n_factors: 2
            }
        );
        assert_eq!(models[1], ForecastModel::Ar1Sv);
    }

    #[test]
    fn simulate_fit_smoke_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.out = dir.path().join("sim");
        cfg.seed = Some(77);
        cfg.dgp_countries = 3;
        cfg.dgp_t_len = 30;
        cfg.apply("components", "2").unwrap();
        cmd_simulate(&cfg).unwrap();
        assert!(cfg.out.join("panel.csv").exists());
        assert!(cfg.out.join("truth.json").exists());
        assert!(cfg.out.join("meta.json").exists());

        // seed repeat: identical files
        let mut cfg2 = cfg.clone();
        cfg2.out = dir.path().join("sim2");
        cmd_simulate(&cfg2).unwrap();
        assert_eq!(
            std::fs::read_to_string(cfg.out.join("panel.csv")).unwrap(),
            std::fs::read_to_string(cfg2.out.join("panel.csv")).unwrap()
        );

        // fit the simulated panel with a tiny chain
        let mut fit_cfg = RunConfig::default();
        fit_cfg.data = Some(cfg.out.join("panel.csv"));
        fit_cfg.out = dir.path().join("fit");
        fit_cfg.seed = Some(5);
        fit_cfg.apply("chain", "40").unwrap();
        fit_cfg.apply("burn", "20").unwrap();
        fit_cfg.apply("components", "2").unwrap();
        fit_cfg.apply("factors", "1").unwrap();
        cmd_fit(&fit_cfg).unwrap();
        for f in [
            "store/meta.json",
            "store/coeff_domestic.bin",
            "summary.csv",
            "gstar.csv",
            "lambda_summary.csv",
            "allocation.csv",
        ] {
            assert!(fit_cfg.out.join(f).exists(), "{f} missing");
        }
        // the active-component table is a probability distribution
        let gstar = std::fs::read_to_string(fit_cfg.out.join("gstar.csv")).unwrap();
        let total: f64 = gstar
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn simulate_full_sparsity_zeroes_truth() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.out = dir.path().to_path_buf();
        cfg.seed = Some(3);
        cfg.dgp_countries = 3;
        cfg.dgp_t_len = 25;
        cfg.dgp_sparsity = 1.0;
        cmd_simulate(&cfg).unwrap();
        let truth: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(cfg.out.join("truth.json")).unwrap())
                .unwrap();
        let foreign = truth["foreign"].as_array().unwrap();
        assert!(foreign.iter().all(|v| v.as_f64().unwrap() == 0.0));
    }
}
