//! Two-block split sampler.
//!
//! The latent field is split into a data-rich block, the per-cell
//! `(eta_jm, tau_jm)` pairs that enter the Gumbel likelihood, and a
//! data-poor block holding the regression coefficients, seasonal effects
//! and standard deviations. Each sweep updates every data-rich pair with a
//! Newton-type Metropolis–Hastings move and then updates the data-poor
//! block with a one-block move: hyperparameters are proposed on the log
//! scale, accepted using the Gaussian marginal of `(eta, tau)`, and the
//! coefficients are drawn from their exact Gaussian conditional.

mod chain;
mod diagnostics;
mod init;
mod poor;
mod rich;

use serde::{Deserialize, Serialize};

use crate::data::CellData;
use crate::design::{DesignMatrices, SeasonalPrecision};
use crate::error::{Error, Result};
use crate::priors::PriorSet;

pub use chain::{run_chain, run_chains, ChainSamples, Layout, PosteriorSamples, SweepState};
pub use diagnostics::{
    diagnostics, effective_sample_size, split_rhat, DiagnosticsReport, ParamDiagnostics,
};
pub(crate) use diagnostics::sorted_quantile;
pub use init::initialize_state;
pub use poor::{
    data_poor_gaussian_conditional, data_poor_step, log_marginal, GaussianConditional, HyperStep,
    Side, SideHyper,
};
pub use rich::{cell_log_target, data_rich_step, update_cell, CellTarget, RichProposal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Initial standard deviation of the log-scale hyperparameter walk.
    pub rw_step_hyper: f64,
    pub target_accept_hyper: f64,
    /// Warn when the data-rich acceptance rate after burn-in falls below
    /// this. The Newton proposal is used at its natural scale.
    pub target_accept_rich: f64,
    /// Adapt the hyperparameter step during burn-in; frozen afterwards.
    pub adapt: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iter: 30_000,
            n_burnin: 10_000,
            thin: 1,
            n_chains: 4,
            seed: 20_160_101,
            rw_step_hyper: 0.1,
            target_accept_hyper: 0.3,
            target_accept_rich: 0.2,
            adapt: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_burnin >= self.n_iter {
            return Err(Error::Config(format!(
                "sampler.n_burnin ({}) must be below sampler.n_iter ({})",
                self.n_burnin, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("sampler.thin must be at least 1".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("sampler.n_chains must be at least 1".into()));
        }
        if !(self.rw_step_hyper > 0.0) {
            return Err(Error::Config("sampler.rw_step_hyper must be positive".into()));
        }
        for (k, v) in [
            ("target_accept_hyper", self.target_accept_hyper),
            ("target_accept_rich", self.target_accept_rich),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("sampler.{k} must lie in (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.n_burnin).div_ceil(self.thin)
    }
}

/// Fixed inputs of a fit: design, seasonal precision, priors and data.
#[derive(Debug, Clone)]
pub struct Model {
    pub design: DesignMatrices,
    pub precision: SeasonalPrecision,
    pub priors: PriorSet,
    pub cells: CellData,
    /// `[X Z]` and its Gram matrix, shared by both data-poor subsystems.
    pub(crate) full: nalgebra::DMatrix<f64>,
    pub(crate) gram: nalgebra::DMatrix<f64>,
}

impl Model {
    pub fn new(
        design: DesignMatrices,
        precision: SeasonalPrecision,
        priors: PriorSet,
        cells: CellData,
    ) -> Result<Self> {
        let n_cells = design.n_stations * design.months;
        if cells.n_cells() != n_cells || cells.months != design.months {
            return Err(Error::Dimension(format!(
                "data has {} cells, design expects {n_cells}",
                cells.n_cells()
            )));
        }
        if precision.months() != design.months {
            return Err(Error::Dimension("seasonal precision and design disagree on M".into()));
        }
        if priors.beta.len() != design.n_coef() || priors.psi.len() != design.n_coef() {
            return Err(Error::Dimension(format!(
                "prior set is for {} coefficients, design has {}",
                priors.beta.len(),
                design.n_coef()
            )));
        }
        for (i, c) in cells.values.iter().enumerate() {
            if c.iter().any(|y| !y.is_finite()) {
                return Err(Error::Domain(format!("non-finite observation in cell {i}")));
            }
        }
        let full = design.full();
        let gram = full.transpose() * &full;
        Ok(Self {
            design,
            precision,
            priors,
            cells,
            full,
            gram,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.n_cells()
    }

    pub fn n_coef(&self) -> usize {
        self.design.n_coef()
    }

    pub fn months(&self) -> usize {
        self.design.months
    }
}

/// Standard Gumbel log-likelihood plus the latent Gaussian terms and the
/// prior: the full unnormalised log posterior of a state.
pub fn log_posterior(model: &Model, state: &crate::state::LatentState) -> Result<f64> {
    let prior = crate::priors::log_prior_density(state, &model.priors, &model.precision)?;
    let eta_mean = model.design.linear_predictor(&state.beta, &state.beta_star);
    let tau_mean = model.design.linear_predictor(&state.alpha, &state.alpha_star);
    let mut lp = prior;
    for c in 0..model.n_cells() {
        let t = CellTarget {
            ys: &model.cells.values[c],
            eta_mean: eta_mean[c],
            tau_mean: tau_mean[c],
            sigma_eta: state.sigma_eta,
            sigma_tau: state.sigma_tau,
        };
        lp += t.log_density(state.eta[c], state.tau[c]);
    }
    Ok(lp)
}
