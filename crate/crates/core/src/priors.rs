//! Priors for the regression coefficients, the seasonal random effects and
//! the standard-deviation hyperparameters.
//!
//! The standard deviations `psi_k`, `phi_k`, `sigma_eta` and `sigma_tau`
//! are flexibility parameters whose base model is zero. For a Gaussian
//! random effect the distance `sqrt(2 KLD)` from the base model is
//! proportional to the standard deviation itself, so a constant-rate
//! penalty on that distance is an exponential prior on the standard
//! deviation. The rate is set from a tail statement `P(sd > value) = 1 - q`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::SeasonalPrecision;
use crate::error::{Error, Result};
use crate::state::LatentState;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite()) || !mean.is_finite() {
            return Err(Error::Domain(format!("invalid normal prior N({mean}, {sd}^2)")));
        }
        Ok(Self { mean, sd })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        -0.5 * LN_2PI - self.sd.ln() - 0.5 * z * z
    }

    pub fn precision(&self) -> f64 {
        1.0 / (self.sd * self.sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialPrior {
    pub rate: f64,
}

impl ExponentialPrior {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Domain(format!("exponential rate must be positive, got {rate}")));
        }
        Ok(Self { rate })
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        self.rate.ln() - self.rate * x
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -(-self.rate * x).exp_m1()
        }
    }
}

/// Normal with equal tail mass `tail_mass` below `lower` and above `upper`.
pub fn elicit_normal_from_interval(lower: f64, upper: f64, tail_mass: f64) -> Result<NormalPrior> {
    if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
        return Err(Error::Domain(format!("invalid interval ({lower}, {upper})")));
    }
    if !(tail_mass > 0.0 && tail_mass < 0.5) {
        return Err(Error::Domain(format!("tail mass must lie in (0, 0.5), got {tail_mass}")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - tail_mass);
    NormalPrior::new(0.5 * (lower + upper), 0.5 * (upper - lower) / z)
}

/// Exponential whose `q` quantile is `value`.
pub fn elicit_exponential_from_quantile(q: f64, value: f64) -> Result<ExponentialPrior> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
    }
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::Domain(format!("quantile value must be positive, got {value}")));
    }
    ExponentialPrior::new(-(-q).ln_1p() / value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    pub beta: Vec<NormalPrior>,
    pub alpha: Vec<NormalPrior>,
    pub psi: Vec<ExponentialPrior>,
    pub phi: Vec<ExponentialPrior>,
    pub sigma_eta: ExponentialPrior,
    pub sigma_tau: ExponentialPrior,
}

/// Tail statements behind the default priors.
pub mod defaults {
    pub const INTERCEPT_MEAN: f64 = 0.0;
    /// Variance 1e4.
    pub const INTERCEPT_SD: f64 = 100.0;
    /// Slopes should fall in (0, 1) with 5% mass on either side.
    pub const SLOPE_INTERVAL: (f64, f64, f64) = (0.0, 1.0, 0.05);
    /// Monthly intercept deviations within a factor 100 either way.
    pub const PSI0_QUANTILE: (f64, f64) = (0.95, 2.35);
    /// Random slope standard deviation of 0.32 sits at the 99% quantile.
    pub const PSI_SLOPE_QUANTILE: (f64, f64) = (0.99, 0.32);
    /// Residual standard deviations below ten with 99% probability.
    pub const SIGMA_QUANTILE: (f64, f64) = (0.99, 10.0);
}

/// Shared settings used to assemble a [`PriorSet`]; the same priors apply
/// to the location (`beta`, `psi`) and scale (`alpha`, `phi`) models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSettings {
    pub intercept: NormalPrior,
    pub slope: NormalPrior,
    pub psi0: ExponentialPrior,
    pub psi_slope: ExponentialPrior,
    pub sigma: ExponentialPrior,
}

impl Default for PriorSettings {
    fn default() -> Self {
        use defaults::*;
        let (lo, hi, tail) = SLOPE_INTERVAL;
        Self {
            intercept: NormalPrior::new(INTERCEPT_MEAN, INTERCEPT_SD).unwrap(),
            slope: elicit_normal_from_interval(lo, hi, tail).unwrap(),
            psi0: elicit_exponential_from_quantile(PSI0_QUANTILE.0, PSI0_QUANTILE.1).unwrap(),
            psi_slope: elicit_exponential_from_quantile(PSI_SLOPE_QUANTILE.0, PSI_SLOPE_QUANTILE.1)
                .unwrap(),
            sigma: elicit_exponential_from_quantile(SIGMA_QUANTILE.0, SIGMA_QUANTILE.1).unwrap(),
        }
    }
}

impl PriorSettings {
    pub fn build(&self, p: usize) -> PriorSet {
        let coef: Vec<NormalPrior> = (0..=p)
            .map(|k| if k == 0 { self.intercept } else { self.slope })
            .collect();
        let sd: Vec<ExponentialPrior> = (0..=p)
            .map(|k| if k == 0 { self.psi0 } else { self.psi_slope })
            .collect();
        PriorSet {
            beta: coef.clone(),
            alpha: coef,
            psi: sd.clone(),
            phi: sd,
            sigma_eta: self.sigma,
            sigma_tau: self.sigma,
        }
    }
}

pub fn default_prior_set(p: usize) -> PriorSet {
    PriorSettings::default().build(p)
}

impl PriorSet {
    pub fn p(&self) -> usize {
        self.beta.len() - 1
    }
}

/// Log density of `x ~ N(0, sd^2 Q^-1)`.
pub fn seasonal_ln_pdf(x: &[f64], sd: f64, sp: &SeasonalPrecision) -> f64 {
    let m = x.len() as f64;
    -0.5 * m * (2.0 * PI).ln() + 0.5 * sp.log_det() - m * sd.ln() - 0.5 * sp.quad_form(x) / (sd * sd)
}

/// Per-component breakdown of the log prior.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogPriorTerms {
    pub coefficients: f64,
    pub seasonal: f64,
    pub hyper: f64,
}

impl LogPriorTerms {
    pub fn total(&self) -> f64 {
        self.coefficients + self.seasonal + self.hyper
    }
}

pub fn log_prior_terms(
    state: &LatentState,
    ps: &PriorSet,
    sp: &SeasonalPrecision,
) -> Result<LogPriorTerms> {
    let sds = state
        .psi
        .iter()
        .chain(state.phi.iter())
        .chain([&state.sigma_eta, &state.sigma_tau]);
    for &v in sds {
        if !(v > 0.0) {
            return Err(Error::Domain(format!(
                "standard deviation hyperparameters must be positive, got {v}"
            )));
        }
    }
    let n_coef = ps.beta.len();
    if state.beta.len() != n_coef || state.psi.len() != n_coef {
        return Err(Error::Dimension("state and prior set disagree on p".into()));
    }
    let m = sp.months();
    let mut t = LogPriorTerms::default();
    for k in 0..n_coef {
        t.coefficients += ps.beta[k].ln_pdf(state.beta[k]) + ps.alpha[k].ln_pdf(state.alpha[k]);
        t.seasonal += seasonal_ln_pdf(state.beta_star.rows(k * m, m).as_slice(), state.psi[k], sp);
        t.seasonal += seasonal_ln_pdf(state.alpha_star.rows(k * m, m).as_slice(), state.phi[k], sp);
        t.hyper += ps.psi[k].ln_pdf(state.psi[k]) + ps.phi[k].ln_pdf(state.phi[k]);
    }
    t.hyper += ps.sigma_eta.ln_pdf(state.sigma_eta) + ps.sigma_tau.ln_pdf(state.sigma_tau);
    Ok(t)
}

pub fn log_prior_density(state: &LatentState, ps: &PriorSet, sp: &SeasonalPrecision) -> Result<f64> {
    log_prior_terms(state, ps, sp).map(|t| t.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::seasonal_precision;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    #[test]
    fn normal_elicitation() {
        let p = elicit_normal_from_interval(0.0, 1.0, 0.05).unwrap();
        assert_eq!(p.mean, 0.5);
        assert!((p.sd - 0.304).abs() < 0.0005, "{}", p.sd);
        let wide = elicit_normal_from_interval(-1.0, 1.0, 0.05).unwrap();
        assert_eq!(wide.mean, 0.0);
        assert_relative_eq!(wide.sd, 2.0 * p.sd, epsilon = 1e-12);

        // Oracle: bisection for the 0.9 standard-normal quantile using erf.
        let phi = |x: f64| 0.5 * (1.0 + statrs::function::erf::erf(x / 2f64.sqrt()));
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) > 0.9 {
                hi = mid
            } else {
                lo = mid
            }
        }
        let p10 = elicit_normal_from_interval(0.0, 1.0, 0.10).unwrap();
        assert_relative_eq!(p10.sd, 0.5 / lo, epsilon = 1e-9);
        assert!((p10.sd - 0.39015).abs() < 1e-5);
    }

    #[test]
    fn normal_elicitation_errors() {
        assert!(elicit_normal_from_interval(1.0, 0.0, 0.05).is_err());
        assert!(elicit_normal_from_interval(0.0, 1.0, 0.5).is_err());
        assert!(elicit_normal_from_interval(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn exponential_elicitation() {
        let psi0 = elicit_exponential_from_quantile(0.95, 2.35).unwrap();
        assert!((psi0.rate - 1.275).abs() < 0.005 * 1.275);
        assert!((psi0.mean() - 0.784).abs() < 0.005 * 0.784);
        let slope = elicit_exponential_from_quantile(0.99, 0.32).unwrap();
        assert!((slope.rate - 14.4).abs() < 0.005 * 14.4);
        assert!((slope.mean() - 0.07).abs() < 0.005);
        let sigma = elicit_exponential_from_quantile(0.99, 10.0).unwrap();
        assert!((sigma.rate - 0.46).abs() < 0.005 * 0.46);
        assert!((sigma.mean() - 2.17).abs() < 0.005 * 2.17);
        assert!(elicit_exponential_from_quantile(1.0, 1.0).is_err());
        assert!(elicit_exponential_from_quantile(0.5, -1.0).is_err());
    }

    #[test]
    fn default_set() {
        let ps = default_prior_set(2);
        assert_eq!(ps.beta[0], NormalPrior { mean: 0.0, sd: 100.0 });
        assert!((ps.psi[1].rate - 14.4).abs() < 0.1);
        assert_eq!(ps.alpha, ps.beta);
        assert_eq!(ps.phi, ps.psi);
        assert_relative_eq!(ps.psi[0].ln_pdf(0.0).exp(), ps.psi[0].rate, epsilon = 1e-12);
        assert_eq!(ps.beta.len(), 3);
        assert_eq!(default_prior_set(4).beta[4], ps.beta[1]);
    }

    fn dense_mvn_ln_pdf(x: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let n = x.len() as f64;
        let chol = cov.clone().cholesky().unwrap();
        let sol = chol.solve(x);
        -0.5 * n * (2.0 * PI).ln() - 0.5 * cov.determinant().ln() - 0.5 * x.dot(&sol)
    }

    #[test]
    fn seasonal_density_matches_dense_oracle() {
        let sp = seasonal_precision(1.0, 12).unwrap();
        let qinv = sp.q.clone().try_inverse().unwrap();
        for (sd, x) in [
            (0.7, DVector::zeros(12)),
            (0.3, DVector::from_fn(12, |i, _| (i as f64).sin() * 0.2)),
        ] {
            let dense = dense_mvn_ln_pdf(&x, &(qinv.clone() * (sd * sd)));
            assert_relative_eq!(seasonal_ln_pdf(x.as_slice(), sd, &sp), dense, epsilon = 1e-9);
        }
        let zero = vec![0.0; 12];
        let diff = seasonal_ln_pdf(&zero, 1.4, &sp) - seasonal_ln_pdf(&zero, 0.7, &sp);
        assert_relative_eq!(diff, -12.0 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn full_prior_is_sum_of_components() {
        let sp = seasonal_precision(1.0, 12).unwrap();
        let ps = default_prior_set(2);
        let st = LatentState {
            eta: DVector::zeros(24),
            tau: DVector::zeros(24),
            beta: DVector::from_vec(vec![1.0, 0.6, 0.9]),
            beta_star: DVector::from_fn(36, |i, _| 0.05 * (i as f64).cos()),
            alpha: DVector::from_vec(vec![0.5, 0.7, 1.1]),
            alpha_star: DVector::from_fn(36, |i, _| 0.03 * (i as f64 * 0.5).sin()),
            psi: DVector::from_vec(vec![0.4, 0.05, 0.08]),
            phi: DVector::from_vec(vec![0.3, 0.06, 0.02]),
            sigma_eta: 0.5,
            sigma_tau: 0.4,
        };
        let qinv = sp.q.clone().try_inverse().unwrap();
        let mut expect = 0.0;
        for k in 0..3 {
            let norm = |x: f64, m: f64, s: f64| -0.5 * (2.0 * PI * s * s).ln() - (x - m).powi(2) / (2.0 * s * s);
            expect += norm(st.beta[k], ps.beta[k].mean, ps.beta[k].sd);
            expect += norm(st.alpha[k], ps.alpha[k].mean, ps.alpha[k].sd);
            let bs = st.beta_star.rows(k * 12, 12).into_owned();
            let as_ = st.alpha_star.rows(k * 12, 12).into_owned();
            expect += dense_mvn_ln_pdf(&bs, &(qinv.clone() * st.psi[k].powi(2)));
            expect += dense_mvn_ln_pdf(&as_, &(qinv.clone() * st.phi[k].powi(2)));
            expect += ps.psi[k].rate.ln() - ps.psi[k].rate * st.psi[k];
            expect += ps.phi[k].rate.ln() - ps.phi[k].rate * st.phi[k];
        }
        for s in [st.sigma_eta, st.sigma_tau] {
            expect += ps.sigma_eta.rate.ln() - ps.sigma_eta.rate * s;
        }
        assert_relative_eq!(log_prior_density(&st, &ps, &sp).unwrap(), expect, epsilon = 1e-10);

        let mut bad = st.clone();
        bad.psi[1] = 0.0;
        assert!(log_prior_density(&bad, &ps, &sp).is_err());
    }

    #[test]
    fn exponential_mode_is_at_zero() {
        let e = ExponentialPrior::new(14.4).unwrap();
        for x in [1e-6, 0.01, 0.1, 1.0] {
            assert!(e.ln_pdf(x) < e.ln_pdf(0.0));
        }
    }

    proptest! {
        #[test]
        fn interval_reflection(lo in -10.0f64..10.0, w in 0.01f64..10.0, tail in 0.001f64..0.49) {
            let a = elicit_normal_from_interval(lo, lo + w, tail).unwrap();
            let b = elicit_normal_from_interval(-(lo + w), -lo, tail).unwrap();
            prop_assert!((a.mean + b.mean).abs() < 1e-12);
            prop_assert!((a.sd - b.sd).abs() < 1e-12 * a.sd.max(1.0));
        }

        #[test]
        fn exponential_quantile_round_trip(q in 0.001f64..0.999, v in 0.001f64..100.0) {
            let e = elicit_exponential_from_quantile(q, v).unwrap();
            prop_assert!((e.cdf(v) - q).abs() < 1e-12);
        }
    }
}
