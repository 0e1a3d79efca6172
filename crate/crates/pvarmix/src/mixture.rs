//! Sparse finite-mixture block over the domestic coefficient vectors.
//!
//! The mixture is deliberately overfitted: a shrinkage prior on the component
//! weights (a Gamma-distributed Dirichlet intensity) empties superfluous
//! components, and gamma-distributed scalings on the component-mean prior pull
//! cluster centers together coordinate by coordinate, so the coordinates that
//! actually drive the clustering can be read off the scaling posteriors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bessel::ln_gamma;
use crate::dist;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Weights, indicators, component means, common variance and the hierarchy
/// above the means.
#[derive(Clone, Debug)]
pub struct MixtureState {
    /// Component weights, simplex of length G.
    pub weights: Vec<f64>,
    /// Country allocations, 0-based component ids.
    pub indicators: Vec<usize>,
    /// Component means, G vectors of length m.
    pub centers: Vec<DVector<f64>>,
    /// Common diagonal variance of the coefficient distribution, length m.
    pub common_var: DVector<f64>,
    /// Cluster-distance scalings, length m.
    pub lambda: DVector<f64>,
    /// Top-level mean of the component means.
    pub mu0: DVector<f64>,
    /// Dirichlet intensity.
    pub p0: f64,
    /// Squared ranges of the coefficient draws, coordinate-wise.
    pub r2: DVector<f64>,
}

impl MixtureState {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Diagonal of the component-mean prior covariance: lambda_j * r2_j.
    pub fn q0_diag(&self) -> DVector<f64> {
        self.lambda.component_mul(&self.r2)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.weights.len();
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mixture weights do not form a simplex (sum {sum})"
            )));
        }
        if self.indicators.iter().any(|&d| d >= g) {
            return Err(Error::InvalidParameter("indicator out of range".into()));
        }
        if self.centers.len() != g {
            return Err(Error::DimensionMismatch("centers/weights length".into()));
        }
        if self
            .common_var
            .iter()
            .chain(self.lambda.iter())
            .chain(self.r2.iter())
            .any(|&v| !(v > 0.0))
        {
            return Err(Error::InvalidParameter(
                "mixture variance parameters must be positive".into(),
            ));
        }
        if !(self.p0 > 0.0) {
            return Err(Error::InvalidParameter("p0 must be positive".into()));
        }
        Ok(())
    }
}

/// Component occupation counts.
pub fn occupation_counts(indicators: &[usize], g: usize) -> Vec<usize> {
    let mut n = vec![0usize; g];
    for &d in indicators {
        n[d] += 1;
    }
    n
}

/// Step: weights from Dir(p0 + N_1, .., p0 + N_G).
pub fn draw_weights(
    indicators: &[usize],
    g: usize,
    p0: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let counts = occupation_counts(indicators, g);
    let alpha: Vec<f64> = counts.iter().map(|&n| p0 + n as f64).collect();
    dist::sample_dirichlet(&alpha, rng)
}

/// Step: allocations from the posterior component probabilities, computed in
/// log space with max subtraction.
pub fn draw_indicators(
    c: &DMatrix<f64>,
    weights: &[f64],
    centers: &[DVector<f64>],
    common_var: &DVector<f64>,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let n = c.nrows();
    let g = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut logp = vec![0.0f64; g];
    for i in 0..n {
        for (gg, lp) in logp.iter_mut().enumerate() {
            let mut acc = weights[gg].max(f64::MIN_POSITIVE).ln();
            for j in 0..c.ncols() {
                acc += dist::ln_normal_pdf(c[(i, j)], centers[gg][j], common_var[j]);
            }
            *lp = acc;
        }
        let m = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::NumericFailure(format!(
                "all component log-probabilities are -inf for unit {i}"
            )));
        }
        let probs: Vec<f64> = logp.iter().map(|&l| (l - m).exp()).collect();
        let total: f64 = probs.iter().sum();
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        out.push(dist::sample_categorical(&probs, rng)?);
    }
    Ok(out)
}

/// Step: component means; empty components draw from their prior.
pub fn draw_group_means(
    c: &DMatrix<f64>,
    indicators: &[usize],
    common_var: &DVector<f64>,
    mu0: &DVector<f64>,
    q0_diag: &DVector<f64>,
    g: usize,
    rng: &mut RngStream,
) -> Result<Vec<DVector<f64>>> {
    let m = c.ncols();
    let counts = occupation_counts(indicators, g);
    let mut centers = Vec::with_capacity(g);
    for gg in 0..g {
        let ng = counts[gg] as f64;
        let mut mu = DVector::zeros(m);
        if counts[gg] == 0 {
            for j in 0..m {
                mu[j] = dist::sample_normal(mu0[j], q0_diag[j].sqrt(), rng)?;
            }
        } else {
            let mut cbar = DVector::zeros(m);
            for (i, &d) in indicators.iter().enumerate() {
                if d == gg {
                    for j in 0..m {
                        cbar[j] += c[(i, j)];
                    }
                }
            }
            cbar /= ng;
            for j in 0..m {
                let post_prec = ng / common_var[j] + 1.0 / q0_diag[j];
                let post_var = 1.0 / post_prec;
                let post_mean =
                    post_var * (ng / common_var[j] * cbar[j] + mu0[j] / q0_diag[j]);
                mu[j] = dist::sample_normal(post_mean, post_var.sqrt(), rng)?;
            }
        }
        centers.push(mu);
    }
    Ok(centers)
}

/// Step: coordinate-wise common variances from their inverted-gamma full
/// conditionals.
pub fn draw_common_variance(
    c: &DMatrix<f64>,
    indicators: &[usize],
    centers: &[DVector<f64>],
    w0: f64,
    w1: f64,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let n = c.nrows();
    let m = c.ncols();
    let mut v = DVector::zeros(m);
    for j in 0..m {
        let ss: f64 = (0..n)
            .map(|i| (c[(i, j)] - centers[indicators[i]][j]).powi(2))
            .sum();
        v[j] = dist::sample_inverse_gamma(w0 + n as f64 / 2.0, w1 + 0.5 * ss, rng)?;
    }
    Ok(v)
}

/// Step: cluster-distance scalings from their GIG full conditionals; a zero
/// distance routes through the clamped path.
pub fn draw_lambda(
    centers: &[DVector<f64>],
    mu0: &DVector<f64>,
    r2: &DVector<f64>,
    nu1: f64,
    nu2: f64,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let g = centers.len() as f64;
    let m = mu0.len();
    let p_g = nu1 - g / 2.0;
    let d = 2.0 * nu2;
    let mut lambda = DVector::zeros(m);
    for j in 0..m {
        let e: f64 = centers.iter().map(|mu| (mu[j] - mu0[j]).powi(2)).sum::<f64>() / r2[j];
        lambda[j] = dist::sample_gig_clamped(p_g, d, e, rng)?;
    }
    Ok(lambda)
}

/// Step: top-level mean. With the default improper flat prior the full
/// conditional is N(mean of centers, Q0/G); a proper prior tightens it.
pub fn draw_mu0(
    centers: &[DVector<f64>],
    q0_diag: &DVector<f64>,
    prior: Option<(f64, f64)>,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let g = centers.len() as f64;
    let m = q0_diag.len();
    let mut out = DVector::zeros(m);
    for j in 0..m {
        let mean_centers: f64 = centers.iter().map(|mu| mu[j]).sum::<f64>() / g;
        let (post_mean, post_var) = match prior {
            None => (mean_centers, q0_diag[j] / g),
            Some((pm, pv)) => {
                let prec = g / q0_diag[j] + 1.0 / pv;
                let var = 1.0 / prec;
                (var * (g / q0_diag[j] * mean_centers + pm / pv), var)
            }
        };
        out[j] = dist::sample_normal(post_mean, post_var.sqrt(), rng)?;
    }
    Ok(out)
}

/// Log of the symmetric Dirichlet density at `w` with intensity `p0`.
fn ln_dirichlet_sym(w: &[f64], p0: f64) -> f64 {
    let g = w.len() as f64;
    ln_gamma(g * p0) - g * ln_gamma(p0)
        + (p0 - 1.0) * w.iter().map(|&x| x.max(f64::MIN_POSITIVE).ln()).sum::<f64>()
}

/// Step: random-walk update of the Dirichlet intensity on the log scale.
/// The target is Dir(w | p0) x Gamma(p0 | c0, c0 G); the proposal Jacobian
/// contributes the p0*/p0 factor. Returns the new value and the accept flag.
pub fn draw_p0(
    weights: &[f64],
    p0: f64,
    c0: f64,
    step: f64,
    rng: &mut RngStream,
) -> Result<(f64, bool)> {
    if !(p0 > 0.0) {
        return Err(Error::InvalidParameter("p0 must be positive".into()));
    }
    let g = weights.len() as f64;
    let z = dist::sample_normal(0.0, step.sqrt(), rng)?;
    let prop = p0 * z.exp();
    let log_target = |x: f64| -> f64 {
        ln_dirichlet_sym(weights, x) + (c0 - 1.0) * x.ln() - c0 * g * x
    };
    let log_alpha = log_target(prop) - log_target(p0) + prop.ln() - p0.ln();
    if rng.uniform_pos().ln() <= log_alpha {
        Ok((prop, true))
    } else {
        Ok((p0, false))
    }
}

/// Step: uniformly random relabeling of components, applied jointly to
/// weights, centers and indicators so the chain visits all symmetric modes.
pub fn permute_labels(state: &mut MixtureState, rng: &mut RngStream) {
    let g = state.n_components();
    let mut perm: Vec<usize> = (0..g).collect();
    // Fisher-Yates
    for i in (1..g).rev() {
        let j = (rng.uniform() * (i + 1) as f64) as usize;
        perm.swap(i, j.min(i));
    }
    let weights = state.weights.clone();
    let centers = state.centers.clone();
    for (new, &old) in perm.iter().enumerate() {
        state.weights[new] = weights[old];
        state.centers[new] = centers[old].clone();
    }
    // old label -> new label
    let mut inverse = vec![0usize; g];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    for d in state.indicators.iter_mut() {
        *d = inverse[*d];
    }
}

/// Number of nonempty components in a draw.
pub fn active_clusters(indicators: &[usize], g: usize) -> usize {
    g - occupation_counts(indicators, g)
        .iter()
        .filter(|&&n| n == 0)
        .count()
}

/// Half quadratic probability score between a true allocation and the
/// posterior mean allocation (identified labeling assumed).
pub fn qps(delta_true: &[usize], delta_post_mean: &[f64]) -> Result<f64> {
    if delta_true.len() != delta_post_mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "allocation lengths {} vs {}",
            delta_true.len(),
            delta_post_mean.len()
        )));
    }
    let n = delta_true.len() as f64;
    Ok(delta_true
        .iter()
        .zip(delta_post_mean)
        .map(|(&t, &m)| (t as f64 - m).powi(2))
        .sum::<f64>()
        / n)
}

/// Relabels one draw for reporting: nonempty components are ranked by the
/// identification key and indicators mapped to the ranks. Empty components
/// carry no allocations and are ignored.
///
/// The coefficient constraint ranks components by the member average of the
/// chosen coordinate of `c` rather than by the component-center parameter:
/// the member average stays anchored to the data during episodes in which
/// the zero-distance spike of the scaling prior temporarily glues the
/// centers of one coordinate together.
pub fn relabel_draw(
    weights: &[f64],
    c: &DMatrix<f64>,
    indicators: &[usize],
    ident: crate::panel::Identification,
) -> Vec<usize> {
    let g = weights.len();
    let counts = occupation_counts(indicators, g);
    let mut active: Vec<usize> = (0..g).filter(|&gg| counts[gg] > 0).collect();
    let key = |gg: usize| -> f64 {
        match ident {
            crate::panel::Identification::ByWeight => weights[gg],
            crate::panel::Identification::ByCoefficient(coord) => {
                let mut acc = 0.0;
                for (i, &d) in indicators.iter().enumerate() {
                    if d == gg {
                        acc += c[(i, coord)];
                    }
                }
                acc / counts[gg] as f64
            }
        }
    };
    active.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap());
    let mut rank = vec![usize::MAX; g];
    for (r, &gg) in active.iter().enumerate() {
        rank[gg] = r;
    }
    indicators.iter().map(|&d| rank[d]).collect()
}

/// Squared range of each coordinate of the stacked coefficient draws,
/// floored at 1e-10 to keep the component-mean prior invertible.
pub fn squared_ranges(c: &DMatrix<f64>) -> DVector<f64> {
    let m = c.ncols();
    DVector::from_fn(m, |j, _| {
        let col = c.column(j);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        ((max - min) * (max - min)).max(1e-10)
    })
}

/// Serializable mixture summary used in draw stores.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureHyper {
    pub w0: f64,
    pub w1: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub c0: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_state(g: usize, n: usize, m: usize) -> MixtureState {
        MixtureState {
            weights: vec![1.0 / g as f64; g],
            indicators: (0..n).map(|i| i % g).collect(),
            centers: (0..g).map(|gg| DVector::from_element(m, gg as f64)).collect(),
            common_var: DVector::from_element(m, 1.0),
            lambda: DVector::from_element(m, 1.0),
            mu0: DVector::zeros(m),
            p0: 0.5,
            r2: DVector::from_element(m, 1.0),
        }
    }

    #[test]
    fn weights_posterior_mean() {
        // N=4, delta=(0,0,0,1), p0=0.5, G=2 -> Dir(3.5, 1.5), mean w1 = 0.7
        let mut rng = RngStream::new(41, 0);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += draw_weights(&[0, 0, 0, 1], 2, 0.5, &mut rng).unwrap()[0];
        }
        assert!((acc / n as f64 - 0.7).abs() < 0.005);
    }

    #[test]
    fn weights_concentrate_when_others_empty() {
        let mut rng = RngStream::new(42, 0);
        let delta = vec![0usize; 30];
        let mut acc = 0.0;
        let n = 2000;
        for _ in 0..n {
            acc += draw_weights(&delta, 3, 1e-4, &mut rng).unwrap()[0];
        }
        assert!(acc / n as f64 > 0.999);
    }

    #[test]
    fn weights_match_analytic_means_overfitted_case() {
        // ten units in component 0, one in component 1, six empty, G = 8
        let mut delta = vec![0usize; 10];
        delta.push(1);
        let g = 8;
        let p0 = 0.1;
        let n_total = delta.len() as f64;
        let counts = occupation_counts(&delta, g);
        let mut rng = RngStream::new(43, 0);
        let reps = 200_000;
        let mut acc = vec![0.0; g];
        for _ in 0..reps {
            let w = draw_weights(&delta, g, p0, &mut rng).unwrap();
            for (a, v) in acc.iter_mut().zip(&w) {
                *a += v;
            }
        }
        for gg in 0..g {
            let want = (counts[gg] as f64 + p0) / (n_total + g as f64 * p0);
            assert!(
                (acc[gg] / reps as f64 - want).abs() < 0.003,
                "component {gg}"
            );
        }
    }

    #[test]
    fn indicators_degenerate_cases() {
        let mut rng = RngStream::new(44, 0);
        let m = 2;
        let centers = vec![
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![3.0, -1.0]),
        ];
        // tiny variance, c equals center 1 exactly -> always component 1
        let c = DMatrix::from_row_slice(1, m, &[3.0, -1.0]);
        let v = DVector::from_element(m, 1e-12);
        for _ in 0..50 {
            let d = draw_indicators(&c, &[0.5, 0.5], &centers, &v, &mut rng).unwrap();
            assert_eq!(d[0], 1);
        }
        // degenerate weights
        let v1 = DVector::from_element(m, 1.0);
        for _ in 0..50 {
            let d = draw_indicators(&c, &[1.0, 0.0], &centers, &v1, &mut rng).unwrap();
            assert_eq!(d[0], 0);
        }
    }

    #[test]
    fn group_means_formula_and_empty_prior() {
        let mut rng = RngStream::new(45, 0);
        // m=2, N_g=3 hand case
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 0.0, 3.0, 4.0]);
        let delta = vec![0, 0, 0];
        let v = DVector::from_vec(vec![0.5, 2.0]);
        let mu0 = DVector::from_vec(vec![0.0, 1.0]);
        let q0 = DVector::from_vec(vec![4.0, 1.0]);
        let reps = 200_000;
        let mut acc = DVector::zeros(2);
        let mut acc2 = DVector::zeros(2);
        for _ in 0..reps {
            let mu = &draw_group_means(&c, &delta, &v, &mu0, &q0, 1, &mut rng).unwrap()[0];
            acc += mu;
            acc2 += mu.map(|x| x * x);
        }
        let mean = acc / reps as f64;
        // dense-formula evaluation
        for j in 0..2 {
            let cbar = c.column(j).sum() / 3.0;
            let post_var = 1.0 / (3.0 / v[j] + 1.0 / q0[j]);
            let post_mean = post_var * (3.0 / v[j] * cbar + mu0[j] / q0[j]);
            assert!((mean[j] - post_mean).abs() < 0.01, "coordinate {j}");
            let var = acc2[j] / reps as f64 - mean[j] * mean[j];
            assert!((var - post_var).abs() < 0.01);
        }

        // empty component draws from the prior
        let mut acc_e = 0.0;
        let mut acc2_e = 0.0;
        for _ in 0..reps {
            let mu = &draw_group_means(&c, &delta, &v, &mu0, &q0, 2, &mut rng).unwrap()[1];
            acc_e += mu[0];
            acc2_e += mu[0] * mu[0];
        }
        let mean_e = acc_e / reps as f64;
        assert!((mean_e - mu0[0]).abs() < 0.02);
        assert!((acc2_e / reps as f64 - mean_e * mean_e - q0[0]).abs() < 0.08);
    }

    #[test]
    fn group_means_flat_prior_limit() {
        let mut rng = RngStream::new(46, 0);
        let c = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 2.0]);
        let delta = vec![0, 0, 0, 0];
        let v = DVector::from_element(1, 0.1);
        let mu0 = DVector::from_element(1, -50.0);
        let q0 = DVector::from_element(1, 1e12);
        let reps = 50_000;
        let mut acc = 0.0;
        for _ in 0..reps {
            acc += draw_group_means(&c, &delta, &v, &mu0, &q0, 1, &mut rng).unwrap()[0][0];
        }
        assert!((acc / reps as f64 - 2.0).abs() < 0.01);
    }

    #[test]
    fn common_variance_moments() {
        let mut rng = RngStream::new(47, 0);
        // w0=w1=0.01, N=4, SS_j=2 -> IG(2.01, 1.01) with mean 1.01/1.01 = 1;
        // that posterior is heavy-tailed (shape barely above 2), so the mean
        // is checked loosely and the well-behaved reciprocal mean tightly:
        // E[1/v] = shape/rate = 2.01/1.01
        let c = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 0.0, 0.0]);
        let centers = vec![DVector::from_vec(vec![0.0])];
        let delta = vec![0, 0, 0, 0];
        let reps = 400_000;
        let mut acc_inv = 0.0;
        let mut below_one = 0usize;
        let mut below_half = 0usize;
        for _ in 0..reps {
            let v = draw_common_variance(&c, &delta, &centers, 0.01, 0.01, &mut rng).unwrap()[0];
            acc_inv += 1.0 / v;
            if v <= 1.0 {
                below_one += 1;
            }
            if v <= 0.5 {
                below_half += 1;
            }
        }
        assert!((acc_inv / reps as f64 - 2.01 / 1.01).abs() < 0.01);
        // frozen CDF reference points of IG(2.01, 1.01)
        assert!((below_one as f64 / reps as f64 - 0.734_847_312_2).abs() < 0.005);
        assert!((below_half as f64 / reps as f64 - 0.403_544_538_8).abs() < 0.005);

        // a heavier-shape random instance meets the 1% mean tolerance
        let c2 = DMatrix::from_fn(40, 1, |i, _| (i as f64 * 0.37).sin());
        let centers2 = vec![DVector::from_vec(vec![0.1])];
        let delta2 = vec![0usize; 40];
        let ss: f64 = (0..40).map(|i| (c2[(i, 0)] - 0.1f64).powi(2)).sum();
        let want = (0.01 + 0.5 * ss) / (0.01 + 20.0 - 1.0);
        let mut acc2 = 0.0;
        for _ in 0..100_000 {
            acc2 += draw_common_variance(&c2, &delta2, &centers2, 0.01, 0.01, &mut rng).unwrap()[0];
        }
        assert!((acc2 / 100_000.0 - want).abs() < 0.01 * want.max(0.1));
    }

    #[test]
    fn common_variance_zero_ss_concentrates() {
        let mut rng = RngStream::new(48, 0);
        let c = DMatrix::from_element(50, 1, 3.0);
        let centers = vec![DVector::from_element(1, 3.0)];
        let delta = vec![0usize; 50];
        for _ in 0..200 {
            let v = draw_common_variance(&c, &delta, &centers, 0.01, 0.01, &mut rng).unwrap()[0];
            assert!(v < 0.05, "v = {v}");
        }
    }

    #[test]
    fn lambda_zero_distance_uses_clamp_and_stays_small() {
        crate::dist::reset_gig_clamp_count();
        let mut rng = RngStream::new(49, 0);
        let centers = vec![DVector::from_element(1, 2.0), DVector::from_element(1, 2.0)];
        let mu0 = DVector::from_element(1, 2.0);
        let r2 = DVector::from_element(1, 1.0);
        let mut small = 0usize;
        let reps = 2000;
        for _ in 0..reps {
            let l = draw_lambda(&centers, &mu0, &r2, 0.5, 0.5, &mut rng).unwrap()[0];
            assert!(l > 0.0);
            if l < 0.1 {
                small += 1;
            }
        }
        assert!(crate::dist::gig_clamp_count() >= reps as u64);
        assert!(small as f64 / reps as f64 > 0.8);
        crate::dist::reset_gig_clamp_count();
    }

    #[test]
    fn lambda_density_histogram_matches_target() {
        // draws vs the unnormalized density on a fixed grid (chi-square-ish check)
        let mut rng = RngStream::new(50, 0);
        let (nu1, nu2) = (0.5, 0.5);
        let centers = vec![
            DVector::from_element(1, 1.0),
            DVector::from_element(1, -0.2),
        ];
        let mu0 = DVector::from_element(1, 0.1);
        let r2 = DVector::from_element(1, 1.5);
        let g = 2.0;
        let p_g = nu1 - g / 2.0;
        let d = 2.0 * nu2;
        let e: f64 = centers
            .iter()
            .map(|mu| {
                let d: f64 = mu[0] - mu0[0];
                d * d
            })
            .sum::<f64>()
            / r2[0];

        let reps = 200_000;
        let mut draws = Vec::with_capacity(reps);
        for _ in 0..reps {
            draws.push(draw_lambda(&centers, &mu0, &r2, nu1, nu2, &mut rng).unwrap()[0]);
        }
        // numeric CDF of the target density on a grid
        let edges = [0.05, 0.15, 0.35, 0.8, 1.6];
        let dens = |x: f64| (p_g - 1.0) * x.ln() - 0.5 * (d * x + e / x);
        let grid_n = 40_000;
        let hi = 60.0;
        let h = hi / grid_n as f64;
        let mut cdf = vec![0.0; edges.len()];
        let mut total = 0.0;
        for i in 1..=grid_n {
            let x = i as f64 * h;
            let w = dens(x).exp() * h;
            total += w;
            for (b, &edge) in edges.iter().enumerate() {
                if x <= edge {
                    cdf[b] += w;
                }
            }
        }
        for b in 0..edges.len() {
            let want = cdf[b] / total;
            let got = draws.iter().filter(|&&x| x <= edges[b]).count() as f64 / reps as f64;
            assert!(
                (got - want).abs() < 0.01,
                "bin {b}: empirical {got}, target {want}"
            );
        }
    }

    #[test]
    fn mu0_special_cases() {
        let mut rng = RngStream::new(51, 0);
        // G=1: mean equals the single center, covariance Q0
        let centers = vec![DVector::from_vec(vec![1.5, -2.0])];
        let q0 = DVector::from_vec(vec![0.3, 0.7]);
        let reps = 200_000;
        let mut acc = DVector::zeros(2);
        let mut acc2 = DVector::zeros(2);
        for _ in 0..reps {
            let d = draw_mu0(&centers, &q0, None, &mut rng).unwrap();
            acc += &d;
            acc2 += d.map(|x| x * x);
        }
        for j in 0..2 {
            let mean = acc[j] / reps as f64;
            assert!((mean - centers[0][j]).abs() < 0.01);
            assert!((acc2[j] / reps as f64 - mean * mean - q0[j]).abs() < 0.01);
        }

        // identical centers: posterior mean equals that vector
        let same = vec![DVector::from_element(2, 4.0); 3];
        let mut acc_s = DVector::zeros(2);
        for _ in 0..reps {
            acc_s += draw_mu0(&same, &q0, None, &mut rng).unwrap();
        }
        assert!((acc_s[0] / reps as f64 - 4.0).abs() < 0.01);

        // m=1, G=3 hand values: mean (1+2+6)/3 = 3, var q0/3
        let three = vec![
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 2.0),
            DVector::from_element(1, 6.0),
        ];
        let q01 = DVector::from_element(1, 0.9);
        let mut acc3 = 0.0;
        let mut acc32 = 0.0;
        for _ in 0..reps {
            let d = draw_mu0(&three, &q01, None, &mut rng).unwrap()[0];
            acc3 += d;
            acc32 += d * d;
        }
        let mean3 = acc3 / reps as f64;
        assert!((mean3 - 3.0).abs() < 0.01);
        assert!((acc32 / reps as f64 - mean3 * mean3 - 0.3).abs() < 0.01);
    }

    #[test]
    fn p0_zero_step_always_accepts() {
        let mut rng = RngStream::new(52, 0);
        let w = [0.3, 0.7];
        for _ in 0..100 {
            let (v, acc) = draw_p0(&w, 0.4, 10.0, 1e-30, &mut rng).unwrap();
            assert!(acc);
            assert!((v - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn p0_kernel_matches_quadrature_of_conditional() {
        // long run of the Metropolis kernel alone, fixed w
        let mut rng = RngStream::new(53, 0);
        let w = [0.2, 0.05, 0.75];
        let c0 = 10.0;
        let g = 3.0;
        let mut p0 = 0.5;
        let reps = 400_000;
        let mut draws = Vec::with_capacity(reps);
        for _ in 0..reps {
            p0 = draw_p0(&w, p0, c0, 0.3, &mut rng).unwrap().0;
            draws.push(p0);
        }
        // quadrature of the unnormalized conditional
        let log_target = |x: f64| ln_dirichlet_sym(&w, x) + (c0 - 1.0) * x.ln() - c0 * g * x;
        let grid_n = 20_000;
        let hi = 3.0;
        let h = hi / grid_n as f64;
        let edges = [0.1, 0.2, 0.3, 0.45, 0.7];
        let mut cdf = vec![0.0; edges.len()];
        let mut total = 0.0;
        for i in 1..=grid_n {
            let x = i as f64 * h;
            let wgt = log_target(x).exp() * h;
            total += wgt;
            for (b, &edge) in edges.iter().enumerate() {
                if x <= edge {
                    cdf[b] += wgt;
                }
            }
        }
        for b in 0..edges.len() {
            let want = cdf[b] / total;
            let got =
                draws.iter().skip(1000).filter(|&&x| x <= edges[b]).count() as f64
                    / (reps - 1000) as f64;
            assert!(
                (got - want).abs() < 0.01,
                "bin {b}: chain {got}, quadrature {want}"
            );
        }
    }

    #[test]
    fn p0_prior_mean_is_one_over_g() {
        // redraw w | p0 then p0 | w: a Gibbs chain on the joint prior
        let mut rng = RngStream::new(54, 0);
        let g = 5usize;
        let c0 = 10.0;
        let mut p0 = 0.3;
        let mut acc = 0.0;
        let reps = 60_000;
        for _ in 0..reps {
            let alpha = vec![p0; g];
            let w = dist::sample_dirichlet(&alpha, &mut rng).unwrap();
            p0 = draw_p0(&w, p0, c0, 0.4, &mut rng).unwrap().0;
            acc += p0;
        }
        let mean = acc / reps as f64;
        assert!((mean - 1.0 / g as f64).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn permutation_uniform_and_consistent() {
        let mut rng = RngStream::new(55, 0);
        let mut counts = std::collections::HashMap::new();
        let reps = 10_000;
        for _ in 0..reps {
            let mut st = uniform_state(3, 6, 2);
            st.weights = vec![0.2, 0.3, 0.5];
            permute_labels(&mut st, &mut rng);
            // indicators stay consistent with relabeled centers
            for (i, &d) in st.indicators.iter().enumerate() {
                let orig = i % 3;
                assert_eq!(st.centers[d][0], orig as f64);
            }
            let key: Vec<u64> = st.weights.iter().map(|w| (w * 10.0) as u64).collect();
            *counts.entry(key).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for (_, &c) in counts.iter() {
            let f = c as f64 / reps as f64;
            assert!((f - 1.0 / 6.0).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn active_cluster_counts() {
        assert_eq!(active_clusters(&[0, 0, 0], 4), 1);
        assert_eq!(active_clusters(&[0, 1, 2, 3], 4), 4);
        assert_eq!(active_clusters(&[2, 2, 0], 5), 2);
    }

    #[test]
    fn qps_trivial_values() {
        assert_eq!(qps(&[0, 1, 0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let truth = [0usize, 1, 2];
        let shifted: Vec<f64> = truth.iter().map(|&t| t as f64 + 1.0).collect();
        assert_eq!(qps(&truth, &shifted).unwrap(), 1.0);
        assert!(qps(&[0, 1], &[0.0]).is_err());
    }

    #[test]
    fn relabeling_orders_active_components() {
        let weights = [0.01, 0.6, 0.09, 0.3];
        // unit coefficients: members of component 1 sit near -1, members of
        // component 3 near +2
        let c = DMatrix::from_column_slice(5, 1, &[-1.1, 2.2, -0.9, -1.0, 1.8]);
        let indicators = [1, 3, 1, 1, 3];
        // by weight: active components 1 (0.6) and 3 (0.3) -> ranks 1 and 0
        let by_w = relabel_draw(
            &weights,
            &c,
            &indicators,
            crate::panel::Identification::ByWeight,
        );
        assert_eq!(by_w, vec![1, 0, 1, 1, 0]);
        // by coefficient 0: member mean of comp 1 is -1, comp 3 is 2
        let by_c = relabel_draw(
            &weights,
            &c,
            &indicators,
            crate::panel::Identification::ByCoefficient(0),
        );
        assert_eq!(by_c, vec![0, 1, 0, 0, 1]);
    }

    #[test]
    fn squared_range_floor() {
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 4.0, 5.0, -2.0, 5.0]);
        let r2 = squared_ranges(&c);
        assert_eq!(r2[0], 36.0);
        assert_eq!(r2[1], 1e-10);
    }

    #[test]
    fn empty_component_draws_follow_prior_ks() {
        // Kolmogorov-Smirnov against the prior marginal on 1e4 draws at 1%
        let mut rng = RngStream::new(56, 0);
        let c = DMatrix::from_row_slice(2, 1, &[0.4, 0.6]);
        let delta = vec![0, 0];
        let v = DVector::from_element(1, 1.0);
        let mu0 = DVector::from_element(1, 1.25);
        let q0 = DVector::from_element(1, 2.25);
        let n = 10_000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| draw_group_means(&c, &delta, &v, &mu0, &q0, 2, &mut rng).unwrap()[1][0])
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, &x) in draws.iter().enumerate() {
            let z = (x - 1.25) / 1.5;
            let cdf = 0.5 * (1.0 + erf_approx(z / std::f64::consts::SQRT_2));
            ks = ks.max((cdf - i as f64 / n as f64).abs());
            ks = ks.max((cdf - (i + 1) as f64 / n as f64).abs());
        }
        // 1% critical value: 1.63 / sqrt(n)
        assert!(ks < 1.63 / (n as f64).sqrt(), "KS statistic {ks}");
    }

    fn erf_approx(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26, |err| < 1.5e-7
        let sign = x.signum();
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        sign * y
    }
}
