//! Miniature estimator comparison: mixture panel VAR against a
//! single-component variant, a lag-wise shrinkage VAR and flat-prior least
//! squares, scored by coefficient RMSE against the generating values.
//!
//! ```sh
//! cargo run --release --example rmse_benchmark
//! ```

use pvarmix::simlab::{run_experiment, DgpSpec, Estimator, ExperimentChain};

fn main() -> pvarmix::Result<()> {
    let mut spec = DgpSpec::desk();
    spec.n_countries = 6;
    spec.t_len = 80;
    spec.replications = 2;
    spec.seed = 5;

    let estimators = [
        Estimator::PvarMix { components: 8 },
        Estimator::PvarMix { components: 1 },
        Estimator::VarNg,
        Estimator::VarOls,
    ];
    let chain = ExperimentChain {
        chain_len: 2000,
        burn_in: 1000,
        thinning: 1,
        n_factors: 2,
        threads: 0,
    };
    println!(
        "running {} replications x {} estimators ...",
        spec.replications,
        estimators.len()
    );
    let result = run_experiment(&spec, &estimators, &chain)?;
    for row in &result.rows {
        println!(
            "  rep {} {:<8} rmse {:.4} {}",
            row.replication,
            row.estimator,
            row.rmse,
            if row.qps.is_finite() {
                format!("qps {:.3}", row.qps)
            } else {
                String::new()
            }
        );
    }
    println!("\nmedian RMSE across replications:");
    for est in &estimators {
        println!("  {:<8} {:.4}", est.label(), result.median_rmse(&est.label()));
    }
    result.write_csv(std::path::Path::new("results.csv"))?;
    println!("wrote results.csv");
    Ok(())
}
