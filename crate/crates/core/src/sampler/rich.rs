use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::seeds;
use crate::state::LatentState;

use super::Model;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Proposals with `tau` below this are rejected outright.
pub const TAU_FLOOR: f64 = -20.0;
/// Proposal standard deviation when the Hessian is not negative definite.
pub const FALLBACK_SD: f64 = 0.1;

/// Conditional target of one `(eta, tau)` pair given the data-poor block.
#[derive(Debug, Clone, Copy)]
pub struct CellTarget<'a> {
    pub ys: &'a [f64],
    pub eta_mean: f64,
    pub tau_mean: f64,
    pub sigma_eta: f64,
    pub sigma_tau: f64,
}

/// Log density, gradient and Hessian of a cell target at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalExpansion {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl CellTarget<'_> {
    fn gaussian_terms(&self, eta: f64, tau: f64) -> f64 {
        let de = (eta - self.eta_mean) / self.sigma_eta;
        let dt = (tau - self.tau_mean) / self.sigma_tau;
        -LN_2PI - self.sigma_eta.ln() - self.sigma_tau.ln() - 0.5 * (de * de + dt * dt)
    }

    pub fn log_density(&self, eta: f64, tau: f64) -> f64 {
        let mu = eta.exp();
        let inv_sigma = (-tau).exp();
        let mut ll = 0.0;
        for &y in self.ys {
            let z = (y - mu) * inv_sigma;
            ll += -tau - z - (-z).exp();
        }
        ll + self.gaussian_terms(eta, tau)
    }

    /// Value, gradient and Hessian in `(eta, tau)` coordinates.
    pub fn expand(&self, eta: f64, tau: f64) -> LocalExpansion {
        let mu = eta.exp();
        let inv_sigma = (-tau).exp();
        let r = mu * inv_sigma;
        let (mut v, mut ge, mut gt, mut hee, mut het, mut htt) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for &y in self.ys {
            let z = (y - mu) * inv_sigma;
            let e = (-z).exp();
            let one_m = 1.0 - e;
            let c = one_m + z * e;
            v += -tau - z - e;
            ge += r * one_m;
            gt += -1.0 + z * one_m;
            hee += r * one_m - r * r * e;
            het += -r * c;
            htt += -z * c;
        }
        let se2 = self.sigma_eta * self.sigma_eta;
        let st2 = self.sigma_tau * self.sigma_tau;
        v += self.gaussian_terms(eta, tau);
        ge -= (eta - self.eta_mean) / se2;
        gt -= (tau - self.tau_mean) / st2;
        hee -= 1.0 / se2;
        htt -= 1.0 / st2;
        LocalExpansion {
            value: v,
            grad: [ge, gt],
            hess: [[hee, het], [het, htt]],
        }
    }
}

pub fn cell_log_target(t: &CellTarget<'_>, eta: f64, tau: f64) -> f64 {
    t.log_density(eta, tau)
}

/// Bivariate Gaussian proposal built at a point: mean `x + S g` and
/// covariance `scale^2 S` with `S = (-H)^-1`, or an isotropic fallback
/// centred at `x` when `-H` is not positive definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RichProposal {
    pub mean: [f64; 2],
    /// Lower Cholesky factor of the proposal covariance.
    pub chol: [[f64; 2]; 2],
    pub newton: bool,
}

impl RichProposal {
    pub fn at(x: [f64; 2], ex: &LocalExpansion, scale: f64) -> Self {
        let a = -ex.hess[0][0];
        let b = -ex.hess[0][1];
        let d = -ex.hess[1][1];
        let det = a * d - b * b;
        if a > 0.0 && det > 0.0 && det.is_finite() {
            // S = (-H)^-1
            let s00 = d / det;
            let s01 = -b / det;
            let s11 = a / det;
            let mean = [
                x[0] + s00 * ex.grad[0] + s01 * ex.grad[1],
                x[1] + s01 * ex.grad[0] + s11 * ex.grad[1],
            ];
            let l00 = s00.sqrt();
            let l10 = s01 / l00;
            let l11 = (s11 - l10 * l10).max(0.0).sqrt();
            if mean.iter().all(|m| m.is_finite()) && l11 > 0.0 {
                return Self {
                    mean,
                    chol: [[scale * l00, 0.0], [scale * l10, scale * l11]],
                    newton: true,
                };
            }
        }
        Self {
            mean: x,
            chol: [[FALLBACK_SD, 0.0], [0.0, FALLBACK_SD]],
            newton: false,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        [
            self.mean[0] + self.chol[0][0] * z0,
            self.mean[1] + self.chol[1][0] * z0 + self.chol[1][1] * z1,
        ]
    }

    pub fn ln_density(&self, x: [f64; 2]) -> f64 {
        let d0 = x[0] - self.mean[0];
        let d1 = x[1] - self.mean[1];
        let u0 = d0 / self.chol[0][0];
        let u1 = (d1 - self.chol[1][0] * u0) / self.chol[1][1];
        -LN_2PI - self.chol[0][0].ln() - self.chol[1][1].ln() - 0.5 * (u0 * u0 + u1 * u1)
    }
}

/// One Metropolis–Hastings update of a single cell. Returns the new point
/// and whether the proposal was accepted. Cells without observations are
/// drawn exactly from their Gaussian conditional.
pub fn update_cell<R: Rng + ?Sized>(
    t: &CellTarget<'_>,
    current: [f64; 2],
    scale: f64,
    rng: &mut R,
) -> ([f64; 2], bool) {
    if t.ys.is_empty() {
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        return (
            [t.eta_mean + t.sigma_eta * z0, t.tau_mean + t.sigma_tau * z1],
            true,
        );
    }
    let ex = t.expand(current[0], current[1]);
    let fwd = RichProposal::at(current, &ex, scale);
    let prop = fwd.sample(rng);
    let u: f64 = rng.random();
    if prop[1] < TAU_FLOOR || !prop.iter().all(|v| v.is_finite()) {
        return (current, false);
    }
    let ex_new = t.expand(prop[0], prop[1]);
    let rev = RichProposal::at(prop, &ex_new, scale);
    let log_ratio = ex_new.value - ex.value + rev.ln_density(current) - fwd.ln_density(prop);
    if log_ratio.is_finite() && u.ln() < log_ratio {
        (prop, true)
    } else {
        (current, false)
    }
}

/// Per-cell random streams for the data-rich block of one chain.
pub fn cell_streams(chain_seed: u64, n_cells: usize) -> Vec<seeds::Rng> {
    (0..n_cells)
        .map(|c| seeds::substream(chain_seed, seeds::Stream::Cell, c as u64))
        .collect()
}

/// Updates every `(eta_jm, tau_jm)` pair given the data-poor block.
///
/// Cells are conditionally independent, so each uses its own stream and
/// the result does not depend on visiting order. Returns per-cell
/// acceptance flags.
pub fn data_rich_step(
    state: &mut LatentState,
    model: &Model,
    streams: &mut [seeds::Rng],
    scale: f64,
) -> Vec<bool> {
    let eta_mean = model.design.linear_predictor(&state.beta, &state.beta_star);
    let tau_mean = model.design.linear_predictor(&state.alpha, &state.alpha_star);
    let mut accepted = Vec::with_capacity(model.n_cells());
    for (c, rng) in streams.iter_mut().enumerate().take(model.n_cells()) {
        let t = CellTarget {
            ys: &model.cells.values[c],
            eta_mean: eta_mean[c],
            tau_mean: tau_mean[c],
            sigma_eta: state.sigma_eta,
            sigma_tau: state.sigma_tau,
        };
        let (x, acc) = update_cell(&t, [state.eta[c], state.tau[c]], scale, rng);
        state.eta[c] = x[0];
        state.tau[c] = x[1];
        accepted.push(acc);
    }
    accepted
}
