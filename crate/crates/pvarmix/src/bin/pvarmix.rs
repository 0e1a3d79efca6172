use clap::{Parser, Subcommand};
use pvarmix::config::RunConfig;

/// Bayesian panel VAR estimation with mixture pooling, cross-country
/// shrinkage and factor stochastic volatility.
#[derive(Parser)]
#[command(name = "pvarmix", version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,

    /// Input panel CSV (header: date,country,variable,value).
    #[arg(long, global = true)]
    data: Option<std::path::PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<std::path::PathBuf>,

    /// Random seed; omitted seeds are generated and recorded in meta.json.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Additional key=value overrides (repeatable); see --dump-config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel (optionally with the estimator comparison).
    Simulate,
    /// Estimate the mixture panel VAR and write posterior summaries.
    Fit,
    /// Export h-step predictive moments from a fit of the sample.
    Forecast,
    /// Recursive out-of-sample comparison against the univariate benchmark.
    Evaluate,
}

fn build_config(args: &Args) -> pvarmix::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.load_file(path)?;
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            pvarmix::Error::Config(format!("--set expects key=value, got `{kv}`"))
        })?;
        cfg.apply(k.trim(), v.trim())?;
    }
    if let Some(d) = &args.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn main() {
    let args = Args::parse();
    let cfg = match build_config(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    if args.dump_config {
        print!("{}", cfg.dump());
        return;
    }
    let result = match args.command {
        Command::Simulate => pvarmix::cli::cmd_simulate(&cfg),
        Command::Fit => pvarmix::cli::cmd_fit(&cfg),
        Command::Forecast => pvarmix::cli::cmd_forecast(&cfg),
        Command::Evaluate => pvarmix::cli::cmd_evaluate(&cfg),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
