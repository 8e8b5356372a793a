use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::priors::{ExponentialPrior, NormalPrior};
use crate::state::LatentState;

use super::Model;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The two conditionally independent halves of the data-poor block:
/// the location model (`eta`, `beta`, `beta*`, `psi`, `sigma_eta`) and the
/// scale model (`tau`, `alpha`, `alpha*`, `phi`, `sigma_tau`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Location,
    Scale,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Location, Side::Scale];

    fn priors(self, model: &Model) -> (&[NormalPrior], &[ExponentialPrior], ExponentialPrior) {
        let p = &model.priors;
        match self {
            Side::Location => (&p.beta, &p.psi, p.sigma_eta),
            Side::Scale => (&p.alpha, &p.phi, p.sigma_tau),
        }
    }
}

/// Hyperparameters of one side: seasonal standard deviations and the
/// residual standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct SideHyper {
    pub seasonal_sd: DVector<f64>,
    pub sigma: f64,
}

impl SideHyper {
    pub fn from_state(state: &LatentState, side: Side) -> Self {
        match side {
            Side::Location => Self {
                seasonal_sd: state.psi.clone(),
                sigma: state.sigma_eta,
            },
            Side::Scale => Self {
                seasonal_sd: state.phi.clone(),
                sigma: state.sigma_tau,
            },
        }
    }

    fn ln_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.seasonal_sd.iter().map(|v| v.ln()).chain(std::iter::once(self.sigma.ln()))
    }

    fn ln_prior(&self, sd_priors: &[ExponentialPrior], sigma_prior: ExponentialPrior) -> f64 {
        self.seasonal_sd
            .iter()
            .zip(sd_priors)
            .map(|(v, p)| p.ln_pdf(*v))
            .sum::<f64>()
            + sigma_prior.ln_pdf(self.sigma)
    }
}

/// Gaussian in precision form with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianConditional {
    pub fn from_canonical(precision: DMatrix<f64>, shift: &DVector<f64>) -> Result<Self> {
        let chol = Cholesky::new(precision.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("data-poor conditional precision".into()))?;
        let mean = chol.solve(shift);
        Ok(Self {
            mean,
            precision,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn ln_det_precision(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `mean + L^-T z` with `P = L L^T`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        let lt = self.chol.l().transpose();
        let x = lt
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + x
    }
}

/// Conditional of one side together with the log marginal density of its
/// response given the hyperparameters.
#[derive(Debug, Clone)]
pub struct SideFit {
    pub conditional: GaussianConditional,
    pub log_marginal: f64,
}

/// Exact Gaussian conditional of `(coef, coef*)` given the response
/// (`eta` or `tau`) and the side's hyperparameters, plus the log density of
/// the response with the coefficients integrated out.
///
/// With prior precision `P0` and mean `m0`, `P = P0 + A'A / sigma^2` and
/// `P mean = P0 m0 + A'y / sigma^2`. Evaluating the identity
/// `p(y) = p(y | v) p(v) / p(v | y)` at `v = mean` gives the marginal.
pub fn side_fit(y: &DVector<f64>, hyper: &SideHyper, model: &Model, side: Side) -> Result<SideFit> {
    let (coef_priors, _, _) = side.priors(model);
    let k = model.n_coef();
    let m = model.months();
    let d = k * (m + 1);
    let n = y.len();
    if n != model.n_cells() {
        return Err(Error::Dimension(format!("response has {n} entries, expected {}", model.n_cells())));
    }
    if hyper.seasonal_sd.len() != k {
        return Err(Error::Dimension("one seasonal sd per covariate".into()));
    }
    if !(hyper.sigma > 0.0) || hyper.seasonal_sd.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("hyperparameters must be positive".into()));
    }
    let q = &model.precision.q;
    let inv_s2 = 1.0 / (hyper.sigma * hyper.sigma);

    let mut prec = &model.gram * inv_s2;
    let mut prior_mean = DVector::zeros(d);
    let mut ln_det_p0 = 0.0;
    for (i, pr) in coef_priors.iter().enumerate() {
        prec[(i, i)] += pr.precision();
        prior_mean[i] = pr.mean;
        ln_det_p0 -= 2.0 * pr.sd.ln();
    }
    let ln_det_q = model.precision.log_det();
    for kk in 0..k {
        let w = 1.0 / hyper.seasonal_sd[kk].powi(2);
        let off = k + kk * m;
        for a in 0..m {
            for b in 0..m {
                prec[(off + a, off + b)] += w * q[(a, b)];
            }
        }
        ln_det_p0 += ln_det_q - 2.0 * m as f64 * hyper.seasonal_sd[kk].ln();
    }
    let mut shift = model.full.tr_mul(y) * inv_s2;
    for (i, pr) in coef_priors.iter().enumerate() {
        shift[i] += pr.precision() * pr.mean;
    }
    let conditional = GaussianConditional::from_canonical(prec, &shift)?;
    let v = &conditional.mean;

    let resid = y - &model.full * v;
    let dv = v - &prior_mean;
    let mut prior_quad = 0.0;
    for (i, pr) in coef_priors.iter().enumerate() {
        prior_quad += pr.precision() * dv[i] * dv[i];
    }
    for kk in 0..k {
        let off = k + kk * m;
        let seg = dv.rows(off, m);
        prior_quad += (seg.transpose() * q * seg)[(0, 0)] / hyper.seasonal_sd[kk].powi(2);
    }
    let log_marginal = -0.5 * n as f64 * (LN_2PI + 2.0 * hyper.sigma.ln())
        - 0.5 * resid.norm_squared() * inv_s2
        - 0.5 * prior_quad
        + 0.5 * ln_det_p0
        - 0.5 * conditional.ln_det_precision();
    Ok(SideFit {
        conditional,
        log_marginal,
    })
}

/// Log density of one side's response given its hyperparameters, with the
/// regression coefficients and seasonal effects integrated out.
pub fn log_marginal(y: &DVector<f64>, hyper: &SideHyper, model: &Model, side: Side) -> Result<f64> {
    side_fit(y, hyper, model, side).map(|f| f.log_marginal)
}

/// Gaussian full conditionals of `(beta, beta*)` and `(alpha, alpha*)`.
/// The two are independent given `(eta, tau)`.
pub fn data_poor_gaussian_conditional(
    eta: &DVector<f64>,
    tau: &DVector<f64>,
    location: &SideHyper,
    scale: &SideHyper,
    model: &Model,
) -> Result<(GaussianConditional, GaussianConditional)> {
    let a = side_fit(eta, location, model, Side::Location)?;
    let b = side_fit(tau, scale, model, Side::Scale)?;
    Ok((a.conditional, b.conditional))
}

/// Outcome of one data-poor update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HyperStep {
    /// Hyperparameter acceptance for the location and scale sides.
    pub accepted: [bool; 2],
    /// Proposals rejected because the conditional precision failed to
    /// factorise.
    pub cholesky_failures: usize,
}

/// One-block update of the data-poor block.
///
/// For each side the hyperparameters are proposed by a Gaussian random walk
/// on the log scale with standard deviation `steps[side]` and accepted with
/// the marginal-likelihood ratio, the hyperprior ratio and the log-scale
/// Jacobian. The coefficients and seasonal effects are then drawn from
/// their exact conditional at the resulting hyperparameters.
pub fn data_poor_step<R: Rng + ?Sized>(
    state: &mut LatentState,
    model: &Model,
    steps: [f64; 2],
    rng: &mut R,
) -> Result<HyperStep> {
    let mut out = HyperStep::default();
    for (si, side) in Side::BOTH.into_iter().enumerate() {
        let (_, sd_priors, sigma_prior) = side.priors(model);
        let y = match side {
            Side::Location => state.eta.clone(),
            Side::Scale => state.tau.clone(),
        };
        let cur = SideHyper::from_state(state, side);
        let cur_fit = side_fit(&y, &cur, model, side)?;

        let step = steps[si];
        let prop = SideHyper {
            seasonal_sd: cur.seasonal_sd.map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v * (step * z).exp()
            }),
            sigma: {
                let z: f64 = StandardNormal.sample(rng);
                cur.sigma * (step * z).exp()
            },
        };
        let u: f64 = rng.random();

        let mut chosen = (cur, cur_fit);
        if step > 0.0 {
            match side_fit(&y, &prop, model, side) {
                Ok(prop_fit) => {
                    let log_ratio = prop_fit.log_marginal - chosen.1.log_marginal
                        + prop.ln_prior(sd_priors, sigma_prior)
                        - chosen.0.ln_prior(sd_priors, sigma_prior)
                        + prop.ln_values().sum::<f64>()
                        - chosen.0.ln_values().sum::<f64>();
                    if log_ratio.is_finite() && u.ln() < log_ratio {
                        chosen = (prop, prop_fit);
                        out.accepted[si] = true;
                    }
                }
                Err(Error::NotPositiveDefinite(_)) => out.cholesky_failures += 1,
                Err(e) => return Err(e),
            }
        }
        let (hyper, fit) = chosen;
        let draw = fit.conditional.sample(rng);
        let k = model.n_coef();
        let (coef, star) = (draw.rows(0, k).into_owned(), draw.rows(k, draw.len() - k).into_owned());
        match side {
            Side::Location => {
                state.psi = hyper.seasonal_sd;
                state.sigma_eta = hyper.sigma;
                state.beta = coef;
                state.beta_star = star;
            }
            Side::Scale => {
                state.phi = hyper.seasonal_sd;
                state.sigma_tau = hyper.sigma;
                state.alpha = coef;
                state.alpha_star = star;
            }
        }
    }
    Ok(out)
}
