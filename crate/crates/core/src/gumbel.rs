//! Gumbel distribution kernel: evaluation, simulation, maximum-likelihood
//! fitting and the Anderson–Darling goodness-of-fit test.

use rand::Rng;
use rand_distr::{Distribution, Open01};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seeds::{self, Stream};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Iteration cap for the profile-likelihood solve.
pub const ML_MAX_ITER: usize = 200;
/// Relative tolerance on the scale parameter.
pub const ML_REL_TOL: f64 = 1e-10;

/// Default number of parametric bootstrap replicates.
pub const DEFAULT_N_BOOT: usize = 999;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelParams {
    mu: f64,
    sigma: f64,
}

impl GumbelParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::Domain(format!("Gumbel location must be finite, got {mu}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("Gumbel scale must be positive, got {sigma}")));
        }
        Ok(Self { mu, sigma })
    }

    /// Location.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Scale.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self) -> f64 {
        self.mu + EULER_GAMMA * self.sigma
    }

    pub fn variance(&self) -> f64 {
        std::f64::consts::PI.powi(2) * self.sigma * self.sigma / 6.0
    }

    pub fn cdf(&self, y: f64) -> f64 {
        gumbel_cdf(self, y)
    }

    pub fn quantile(&self, q: f64) -> Result<f64> {
        gumbel_quantile(self, q)
    }

    pub fn logpdf(&self, y: f64) -> f64 {
        gumbel_logpdf(self, y)
    }
}

pub fn gumbel_cdf(p: &GumbelParams, y: f64) -> f64 {
    if y == f64::INFINITY {
        return 1.0;
    }
    if y == f64::NEG_INFINITY {
        return 0.0;
    }
    let z = (y - p.mu) / p.sigma;
    (-(-z).exp()).exp()
}

/// Inverse CDF, `mu - sigma * ln(-ln q)`.
pub fn gumbel_quantile(p: &GumbelParams, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
    }
    Ok(p.mu - p.sigma * (-q.ln()).ln())
}

pub fn gumbel_logpdf(p: &GumbelParams, y: f64) -> f64 {
    let z = (y - p.mu) / p.sigma;
    -p.sigma.ln() - z - (-z).exp()
}

/// Inverse-transform draw from a uniform on the open unit interval.
pub fn gumbel_draw<R: Rng + ?Sized>(p: &GumbelParams, rng: &mut R) -> f64 {
    let u: f64 = Open01.sample(rng);
    p.mu - p.sigma * (-u.ln()).ln()
}

pub fn gumbel_sample<R: Rng + ?Sized>(p: &GumbelParams, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| gumbel_draw(p, rng)).collect()
}

/// Sum of the Gumbel log-likelihood over a sample.
pub fn gumbel_loglik(p: &GumbelParams, ys: &[f64]) -> f64 {
    ys.iter().map(|&y| gumbel_logpdf(p, y)).sum()
}

/// Gradient of the sample log-likelihood with respect to `(mu, sigma)`.
pub fn gumbel_loglik_grad(p: &GumbelParams, ys: &[f64]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for &y in ys {
        let z = (y - p.mu) / p.sigma;
        let e = (-z).exp();
        g[0] += (1.0 - e) / p.sigma;
        g[1] += (-1.0 + z * (1.0 - e)) / p.sigma;
    }
    g
}

fn validate_sample(ys: &[f64]) -> Result<()> {
    if let Some(bad) = ys.iter().find(|y| !y.is_finite()) {
        return Err(Error::Domain(format!("sample contains non-finite value {bad}")));
    }
    Ok(())
}

/// Maximum-likelihood estimate of `(mu, sigma)`.
///
/// Solves the profile equation `sigma = mean(y) - sum(y w) / sum(w)` with
/// `w = exp(-y / sigma)` by safeguarded Newton iteration, then sets the
/// location in closed form. The profile function is strictly increasing in
/// `sigma`, so the root is unique.
pub fn gumbel_ml_fit(ys: &[f64]) -> Result<GumbelParams> {
    validate_sample(ys)?;
    if ys.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "need at least 2 observations, got {}",
            ys.len()
        )));
    }
    if ys.len() < 5 {
        log::warn!("Gumbel ML fit on only {} observations", ys.len());
    }
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let d: Vec<f64> = ys.iter().map(|y| y - mean).collect();
    let d_min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let d_max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = d_max - d_min;
    if !(spread > 1e-12 * (1.0 + mean.abs())) {
        return Err(Error::DegenerateSample("all observations are equal".into()));
    }

    // g(sigma) = sigma + sum(d w) / sum(w); g' = 1 + Var_w(d) / sigma^2.
    let profile = |sigma: f64| -> (f64, f64) {
        let (mut sw, mut swd, mut swd2) = (0.0, 0.0, 0.0);
        for &di in &d {
            let w = (-(di - d_min) / sigma).exp();
            sw += w;
            swd += w * di;
            swd2 += w * di * di;
        }
        let m1 = swd / sw;
        let var = (swd2 / sw - m1 * m1).max(0.0);
        (sigma + m1, 1.0 + var / (sigma * sigma))
    };

    let sd = (d.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    let mut sigma = (sd * 6f64.sqrt() / std::f64::consts::PI).max(spread * 1e-3);
    // g(0+) = d_min < 0 and g(sigma) >= sigma + d_min, so the root lies in
    // (0, spread].
    let mut lo: f64 = 0.0;
    let mut hi = spread.max(sigma);
    let mut converged = false;
    for _ in 0..ML_MAX_ITER {
        let (g, dg) = profile(sigma);
        if g > 0.0 {
            hi = hi.min(sigma);
        } else {
            lo = lo.max(sigma);
        }
        let mut next = sigma - g / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - sigma).abs();
        sigma = next;
        if step <= ML_REL_TOL * sigma {
            converged = true;
            break;
        }
    }
    let mu = location_given_scale(&d, d_min, sigma) + mean;
    if !converged {
        return Err(Error::NoConvergence {
            iterations: ML_MAX_ITER,
            mu,
            sigma,
        });
    }
    GumbelParams::new(mu, sigma)
}

/// Closed-form ML location for fixed scale on centred data.
fn location_given_scale(d: &[f64], d_min: f64, sigma: f64) -> f64 {
    let n = d.len() as f64;
    let s: f64 = d.iter().map(|di| (-(di - d_min) / sigma).exp()).sum();
    // -sigma * ln(mean(exp(-d / sigma)))
    d_min - sigma * (s / n).ln()
}

/// Anderson–Darling A² of a sample against a fully specified Gumbel.
pub fn anderson_darling_statistic(ys: &[f64], p: &GumbelParams) -> f64 {
    let mut u: Vec<f64> = ys.iter().map(|&y| gumbel_cdf(p, y)).collect();
    u.sort_by(|a, b| a.total_cmp(b));
    let n = u.len();
    let nf = n as f64;
    let tiny = f64::MIN_POSITIVE;
    let mut acc = 0.0;
    for i in 0..n {
        let lo = u[i].max(tiny).ln();
        let hi = (-u[n - 1 - i]).ln_1p().max(f64::MIN);
        acc += (2.0 * (i as f64) + 1.0) * (lo + hi);
    }
    -nf - acc / nf
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GofResult {
    pub statistic: f64,
    pub p_value: f64,
    pub fitted: GumbelParams,
}

/// Anderson–Darling test of the composite Gumbel hypothesis.
///
/// The p-value comes from a parametric bootstrap: the fitted distribution
/// is resampled, refitted and the statistic recomputed `n_boot` times.
/// Replicates use independent substreams seeded from one draw of `rng`, so
/// the result is deterministic for a given stream regardless of thread
/// count.
pub fn anderson_darling_gumbel<R: Rng + ?Sized>(
    ys: &[f64],
    n_boot: usize,
    rng: &mut R,
) -> Result<GofResult> {
    if ys.len() < 5 {
        return Err(Error::Domain(format!(
            "goodness-of-fit test needs at least 5 observations, got {}",
            ys.len()
        )));
    }
    if n_boot < 99 {
        return Err(Error::Domain(format!("n_boot must be at least 99, got {n_boot}")));
    }
    let fitted = gumbel_ml_fit(ys)?;
    let statistic = anderson_darling_statistic(ys, &fitted);
    let base: u64 = rng.random();
    let n = ys.len();
    let exceed = (0..n_boot)
        .into_par_iter()
        .map(|b| -> Result<usize> {
            let mut r = seeds::substream(base, Stream::Bootstrap, b as u64);
            let sim = gumbel_sample(&fitted, n, &mut r);
            let refit = gumbel_ml_fit(&sim)?;
            Ok(usize::from(anderson_darling_statistic(&sim, &refit) >= statistic))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let p_value = (1 + exceed) as f64 / (n_boot + 1) as f64;
    Ok(GofResult {
        statistic,
        p_value,
        fitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from_seed;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gp(mu: f64, sigma: f64) -> GumbelParams {
        GumbelParams::new(mu, sigma).unwrap()
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(GumbelParams::new(0.0, 0.0).is_err());
        assert!(GumbelParams::new(0.0, -1.0).is_err());
        assert!(GumbelParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn cdf_examples() {
        assert_relative_eq!(gp(0.0, 1.0).cdf(0.0), (-1f64).exp(), epsilon = 1e-15);
        assert_eq!(gp(5.0, 2.0).cdf(f64::INFINITY), 1.0);
        assert_eq!(gp(5.0, 2.0).cdf(f64::NEG_INFINITY), 0.0);
        assert_eq!(gp(5.0, 2.0).cdf(1e308), 1.0);

        // median: analytic inversion against root-finding on the CDF
        let p = gp(3.0, 0.5);
        let analytic = 3.0 - 0.5 * 2f64.ln().ln();
        let root = bisect(|y| p.cdf(y) - 0.5, -10.0, 10.0);
        assert_relative_eq!(analytic, 3.1832, epsilon = 1e-4);
        assert_relative_eq!(root, analytic, epsilon = 1e-10);
        assert_relative_eq!(p.cdf(analytic), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn quantile_examples() {
        assert_relative_eq!(gp(0.0, 1.0).quantile((-1f64).exp()).unwrap(), 0.0, epsilon = 1e-15);

        let p = gp(0.0, 1.0);
        let root = bisect(|y| p.cdf(y) - 0.9, -10.0, 10.0);
        assert_relative_eq!(root, 2.250367, epsilon = 1e-6);
        assert_relative_eq!(p.quantile(0.9).unwrap(), root, epsilon = 1e-10);

        let p = gp(10.0, 3.0);
        let root = bisect(|y| p.cdf(y) - 0.5, -10.0, 40.0);
        assert_relative_eq!(root, 11.0996, epsilon = 1e-3);
        assert_relative_eq!(p.quantile(0.5).unwrap(), root, epsilon = 1e-10);

        for q in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(p.quantile(q), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn logpdf_examples() {
        assert_relative_eq!(gp(0.0, 1.0).logpdf(0.0), -1.0, epsilon = 1e-15);
        assert_relative_eq!(gp(0.0, 2.0).logpdf(0.0), -(2f64.ln()) - 1.0, epsilon = 1e-15);
        let p = gp(1.0, 1.5);
        let mass = adaptive_simpson(&|y| p.logpdf(y).exp(), -20.0, 40.0, 1e-12);
        assert_relative_eq!(mass, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn sample_moments() {
        let mut rng = rng_from_seed(11);
        let xs = gumbel_sample(&gp(0.0, 1.0), 100_000, &mut rng);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - EULER_GAMMA).abs() < 0.02, "mean {mean}");
        assert!((var - std::f64::consts::PI.powi(2) / 6.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn sample_is_deterministic() {
        let a = gumbel_sample(&gp(2.0, 3.0), 50, &mut rng_from_seed(5));
        let b = gumbel_sample(&gp(2.0, 3.0), 50, &mut rng_from_seed(5));
        assert_eq!(a, b);
    }

    #[test]
    fn ml_fit_consistency() {
        let mut rng = rng_from_seed(3);
        let xs = gumbel_sample(&gp(5.0, 2.0), 10_000, &mut rng);
        let fit = gumbel_ml_fit(&xs).unwrap();
        assert!((fit.mu() - 5.0).abs() < 0.1);
        assert!((fit.sigma() - 2.0).abs() < 0.1);
        let g = gumbel_loglik_grad(&fit, &xs);
        let scale = fit.sigma() / xs.len() as f64;
        assert!((g[0] * scale).hypot(g[1] * scale) < 1e-8);
    }

    #[test]
    fn ml_fit_two_point_profile_matches_grid() {
        let ys = [0.0, 1.0];
        let fit = gumbel_ml_fit(&ys).unwrap();
        // Grid oracle on the profile residual |sigma - mean + sum(y w)/sum(w)|.
        let resid = |s: f64| {
            let w: Vec<f64> = ys.iter().map(|y| (-y / s).exp()).collect();
            let sw: f64 = w.iter().sum();
            let swy: f64 = w.iter().zip(&ys).map(|(w, y)| w * y).sum();
            (s - 0.5 + swy / sw).abs()
        };
        let n = 100_000;
        let best = (0..=n)
            .map(|i| 0.01 + (10.0 - 0.01) * i as f64 / n as f64)
            .min_by(|a, b| resid(*a).total_cmp(&resid(*b)))
            .unwrap();
        assert!((fit.sigma() - best).abs() < 2e-4, "fit {} grid {}", fit.sigma(), best);
        assert!(resid(fit.sigma()) < 1e-10);
    }

    #[test]
    fn ml_fit_location_equivariance() {
        let xs = gumbel_sample(&gp(1.0, 0.7), 40, &mut rng_from_seed(9));
        let shifted: Vec<f64> = xs.iter().map(|x| x + 7.3).collect();
        let a = gumbel_ml_fit(&xs).unwrap();
        let b = gumbel_ml_fit(&shifted).unwrap();
        assert_relative_eq!(b.mu(), a.mu() + 7.3, epsilon = 1e-8);
        assert_relative_eq!(b.sigma(), a.sigma(), max_relative = 1e-8);
    }

    #[test]
    fn ml_fit_errors() {
        assert!(matches!(gumbel_ml_fit(&[3.0, 3.0, 3.0]), Err(Error::DegenerateSample(_))));
        assert!(matches!(gumbel_ml_fit(&[3.0]), Err(Error::DegenerateSample(_))));
        assert!(matches!(gumbel_ml_fit(&[1.0, f64::NAN]), Err(Error::Domain(_))));
    }

    #[test]
    fn ml_fit_matches_2d_grid_search() {
        let mut rng = rng_from_seed(21);
        let xs = gumbel_sample(&gp(2.0, 1.3), 20, &mut rng);
        let fit = gumbel_ml_fit(&xs).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let (mu_lo, mu_hi) = (mean - 2.0 * sd, mean + 2.0 * sd);
        let (s_lo, s_hi) = (0.1 * sd, 2.0 * sd);
        let k = 200;
        let (dmu, ds) = ((mu_hi - mu_lo) / k as f64, (s_hi - s_lo) / k as f64);
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..=k {
            for j in 0..=k {
                let (m, s) = (mu_lo + i as f64 * dmu, s_lo + j as f64 * ds);
                let ll = gumbel_loglik(&gp(m, s), &xs);
                if ll > best.0 {
                    best = (ll, m, s);
                }
            }
        }
        assert!((fit.mu() - best.1).abs() <= dmu);
        assert!((fit.sigma() - best.2).abs() <= ds);
        assert!(gumbel_loglik(&fit, &xs) >= best.0 - 1e-9);
    }

    #[test]
    fn ad_statistic_is_order_invariant() {
        let mut xs = gumbel_sample(&gp(0.0, 1.0), 30, &mut rng_from_seed(2));
        let a = anderson_darling_gumbel(&xs, 199, &mut rng_from_seed(8)).unwrap();
        xs.reverse();
        xs.swap(3, 17);
        let b = anderson_darling_gumbel(&xs, 199, &mut rng_from_seed(8)).unwrap();
        assert_relative_eq!(a.statistic, b.statistic, max_relative = 1e-10);
        assert_eq!(a.p_value, b.p_value);
    }

    #[test]
    fn ad_rejects_small_inputs() {
        let mut rng = rng_from_seed(1);
        assert!(anderson_darling_gumbel(&[1.0, 2.0, 3.0, 4.0], 199, &mut rng).is_err());
        assert!(anderson_darling_gumbel(&[1.0, 2.0, 3.0, 4.0, 5.5], 50, &mut rng).is_err());
    }

    #[test]
    fn ad_has_power_against_lognormal() {
        use rand_distr::LogNormal;
        let ln = LogNormal::new(0.0, 1.5).unwrap();
        let mut rng = rng_from_seed(77);
        let mut ps: Vec<f64> = (0..15)
            .map(|_| {
                let xs: Vec<f64> = (0..100).map(|_| ln.sample(&mut rng)).collect();
                anderson_darling_gumbel(&xs, 199, &mut rng).unwrap().p_value
            })
            .collect();
        ps.sort_by(|a, b| a.total_cmp(b));
        assert!(ps[ps.len() / 2] < 0.05, "median p {}", ps[ps.len() / 2]);
    }

    proptest! {
        #[test]
        fn cdf_quantile_round_trip(mu in -100.0f64..100.0, sigma in 0.01f64..50.0, k in 1u32..1000) {
            let p = gp(mu, sigma);
            let q = k as f64 / 1000.0;
            prop_assert!((p.cdf(p.quantile(q).unwrap()) - q).abs() < 1e-10);
        }

        #[test]
        fn density_is_cdf_derivative(mu in -5.0f64..5.0, sigma in 0.2f64..5.0, z in -2.0f64..5.0) {
            let p = gp(mu, sigma);
            let y = mu + z * sigma;
            let h = 1e-5 * sigma;
            let fd = (p.cdf(y + h) - p.cdf(y - h)) / (2.0 * h);
            prop_assert!((fd - p.logpdf(y).exp()).abs() < 1e-6);
        }

        #[test]
        fn ml_fit_scale_equivariance(seed in 0u64..1000, c in 0.1f64..20.0) {
            let xs = gumbel_sample(&gp(3.0, 1.0), 25, &mut rng_from_seed(seed));
            let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
            let a = gumbel_ml_fit(&xs).unwrap();
            let b = gumbel_ml_fit(&scaled).unwrap();
            prop_assert!((b.mu() - c * a.mu()).abs() < 1e-7 * c.max(1.0) * (1.0 + a.mu().abs()));
            prop_assert!((b.sigma() - c * a.sigma()).abs() < 1e-7 * c * a.sigma());
        }
    }
}
