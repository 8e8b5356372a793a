//! Assembling a [`Model`] from raw tables.

use crate::data::ObservationTable;
use crate::design::{
    build_design, center_log_covariates, seasonal_precision, Centering, CovariateTable, RawCovariateRow,
};
use crate::error::{Error, Result};
use crate::priors::PriorSettings;
use crate::sampler::{run_chains, Model, PosteriorSamples, SamplerConfig};

/// Everything besides the data that determines a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSetup {
    pub months: usize,
    pub kappa: f64,
    pub priors: PriorSettings,
    pub sampler: SamplerConfig,
}

impl Default for FitSetup {
    fn default() -> Self {
        Self {
            months: crate::design::DEFAULT_MONTHS,
            kappa: crate::design::DEFAULT_KAPPA,
            priors: PriorSettings::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedFit {
    pub model: Model,
    pub table: CovariateTable,
    pub centering: Centering,
}

impl PreparedFit {
    pub fn stations(&self) -> &[String] {
        &self.table.stations
    }
}

/// Centres the covariates and builds the model. Stations are taken from the
/// covariate table in order of first appearance; stations without
/// observations get empty cells, observations without covariates are an
/// error.
pub fn prepare(obs: &ObservationTable, raw: &[RawCovariateRow], setup: &FitSetup) -> Result<PreparedFit> {
    if obs.records.is_empty() {
        return Err(Error::DegenerateSample("no observations".into()));
    }
    let (table, centering) = center_log_covariates(raw, setup.months)?;
    let cells = obs.cells(&table.stations, setup.months)?;
    let design = build_design(&table)?;
    let precision = seasonal_precision(setup.kappa, setup.months)?;
    let priors = setup.priors.build(table.p());
    let model = Model::new(design, precision, priors, cells)?;
    Ok(PreparedFit {
        model,
        table,
        centering,
    })
}

pub fn fit(obs: &ObservationTable, raw: &[RawCovariateRow], setup: &FitSetup) -> Result<(PreparedFit, PosteriorSamples)> {
    let prepared = prepare(obs, raw, setup)?;
    let samples = run_chains(&prepared.model, &setup.sampler, &prepared.table.stations)?;
    Ok((prepared, samples))
}
