//! The generalized inverse Gaussian sampler and the special functions behind
//! the shrinkage machinery: sample moments against the analytic Bessel-ratio
//! moments, and the closed-form marginal prior of a block of cluster means.
//!
//! ```sh
//! cargo run --release --example gig_sampling
//! ```

use pvarmix::bessel::log_bessel_k;
use pvarmix::dist::{ng_marginal_logdensity, sample_gig};
use pvarmix::rng::RngStream;

fn main() -> pvarmix::Result<()> {
    let mut rng = RngStream::new(1, 0);
    let n = 200_000;

    println!("GIG sample means vs analytic Bessel-ratio moments:");
    for (a, b, c) in [(-0.5, 1.0, 1.0), (0.3, 2.0, 5.0), (2.0, 4.0, 1e-12), (-0.4, 0.1, 0.01)] {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += sample_gig(a, b, c, &mut rng)?;
        }
        let omega = (b * c).sqrt().max(1e-154);
        let analytic = if c > 1e-300 {
            (0.5 * (c / b).ln() + log_bessel_k(a + 1.0, omega)? - log_bessel_k(a, omega)?).exp()
        } else {
            2.0 * a / b // gamma limit
        };
        println!(
            "  (a={a:>4}, b={b}, c={c:.0e}): sample {:.4}, analytic {:.4}",
            acc / n as f64,
            analytic
        );
    }

    println!("\nmarginal log prior of a cluster-mean block as distance grows");
    println!("(heavy shrinkage concentrates mass at zero distance):");
    for e in [0.001, 0.01, 0.1, 0.5, 1.0, 4.0] {
        let d = (e / 2.0f64).sqrt();
        let lp = ng_marginal_logdensity(&[d, -d], 0.0, 1.0, 0.5, 0.5)?;
        println!("  distance e = {e:>5}: log density {lp:+.3}");
    }
    Ok(())
}
