use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ObservationTable;
use crate::design::{apply_centering, RawCovariateRow};
use crate::error::{Error, Result};
use crate::sampler::run_chains;
use crate::seeds::{self, Stream};
use crate::setup::{prepare, FitSetup};
use crate::stats::{empirical_quantile, spearman};

use super::quantiles::{predictive_quantiles, PredictOptions, QuantileSummary};

/// Highest sample quantile compared against predictions by default; with
/// around fifty points per cell higher empirical quantiles are too noisy.
pub const MAX_EMPIRICAL_QUANTILE: f64 = 0.9;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvOptions {
    pub predict: PredictOptions,
    /// Allow empirical comparison quantiles above 0.9.
    pub allow_high_quantiles: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvMonth {
    pub month: usize,
    pub predicted: Vec<QuantileSummary>,
    /// Sample quantiles of the held-out data, `None` for empty months.
    pub observed: Vec<Option<f64>>,
    pub n_points: usize,
    pub points: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub station: String,
    pub seed: u64,
    pub training_stations: Vec<String>,
    pub training_cells: usize,
    pub training_observations: usize,
    /// SHA-256 over the training records as fed to the model.
    pub training_digest: String,
    pub months: Vec<CvMonth>,
    /// Spearman correlation over months of predicted and sample medians
    /// (first requested level).
    pub rank_correlation: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub probs: Vec<f64>,
    pub folds: Vec<FoldResult>,
    /// Stations whose fold failed, with the error message.
    pub failures: Vec<(String, String)>,
}

fn digest(obs: &ObservationTable) -> String {
    let mut h = Sha256::new();
    for r in &obs.records {
        h.update(format!("{},{},{},{}\n", r.station_id, r.year, r.month, r.flow.to_bits()).as_bytes());
    }
    hex::encode(h.finalize())
}

fn run_fold(
    j: usize,
    station: &str,
    obs: &ObservationTable,
    raw: &[RawCovariateRow],
    setup: &FitSetup,
    opts: &CvOptions,
) -> Result<FoldResult> {
    let train_obs = obs.without_station(station);
    let train_raw: Vec<RawCovariateRow> = raw.iter().filter(|r| r.station_id != station).cloned().collect();
    let held_raw: Vec<RawCovariateRow> = raw.iter().filter(|r| r.station_id == station).cloned().collect();

    let mut fold_setup = setup.clone();
    let seed = seeds::derive_seed(setup.sampler.seed, Stream::Fold, j as u64);
    fold_setup.sampler.seed = seed;
    let prepared = prepare(&train_obs, &train_raw, &fold_setup)?;
    if prepared.stations().iter().any(|s| s == station)
        || train_obs.records.iter().any(|r| r.station_id == station)
    {
        return Err(Error::Other(format!("training set of fold {station} contains the held-out river")));
    }
    let samples = run_chains(&prepared.model, &fold_setup.sampler, prepared.stations())?;

    let held_table = apply_centering(&held_raw, setup.months, &prepared.centering)?;
    let warnings: Vec<String> = prepared
        .centering
        .outside_support(&held_table)
        .into_iter()
        .map(|(s, m, name)| format!("{s} month {m}: {name} outside the training range"))
        .collect();
    for w in &warnings {
        log::warn!("cv fold {station}: {w}");
    }
    let pred = predictive_quantiles(
        &samples,
        &held_table,
        &opts.predict,
        seeds::derive_seed(seed, Stream::Predict, 0),
    )?;

    let mut months = Vec::with_capacity(setup.months);
    for m in 1..=setup.months {
        let mut points: Vec<f64> = obs
            .station_records(station)
            .filter(|r| r.month == m)
            .map(|r| r.flow)
            .collect();
        points.sort_by(f64::total_cmp);
        let observed = opts
            .predict
            .probs
            .iter()
            .map(|&q| empirical_quantile(&points, q).ok())
            .collect();
        let predicted = pred
            .cell(station, m)
            .ok_or_else(|| Error::Other(format!("no prediction for {station} month {m}")))?
            .quantiles
            .clone();
        months.push(CvMonth {
            month: m,
            predicted,
            observed,
            n_points: points.len(),
            points,
        });
    }
    let (pm, om): (Vec<f64>, Vec<f64>) = months
        .iter()
        .filter_map(|c| c.observed[0].map(|o| (c.predicted[0].median, o)))
        .unzip();
    Ok(FoldResult {
        station: station.to_string(),
        seed,
        training_stations: prepared.stations().to_vec(),
        training_cells: prepared.model.n_cells(),
        training_observations: prepared.model.cells.n_observations(),
        training_digest: digest(&train_obs),
        months,
        rank_correlation: spearman(&pm, &om),
        warnings,
    })
}

/// Leave-one-river-out cross-validation. Each fold refits the full model on
/// the remaining rivers, with covariates centred on the training rivers
/// only, and predicts the held-out river from its covariates. Folds run
/// concurrently with seeds derived from the master sampler seed and the
/// fold index. A failing fold is logged and reported, not fatal.
pub fn cross_validate(
    obs: &ObservationTable,
    raw: &[RawCovariateRow],
    setup: &FitSetup,
    opts: &CvOptions,
) -> Result<CvReport> {
    opts.predict.validate()?;
    if !opts.allow_high_quantiles {
        if let Some(q) = opts.predict.probs.iter().find(|q| **q > MAX_EMPIRICAL_QUANTILE) {
            return Err(Error::Config(format!(
                "empirical quantile {q} above {MAX_EMPIRICAL_QUANTILE} is too noisy for comparison; \
                 set allow_high_quantiles to override"
            )));
        }
    }
    let mut stations: Vec<String> = Vec::new();
    for r in raw {
        if !stations.contains(&r.station_id) {
            stations.push(r.station_id.clone());
        }
    }
    if stations.len() < 2 {
        return Err(Error::Domain("cross-validation needs at least two rivers".into()));
    }
    let results: Vec<(String, Result<FoldResult>)> = stations
        .par_iter()
        .enumerate()
        .map(|(j, s)| (s.clone(), run_fold(j, s, obs, raw, setup, opts)))
        .collect();
    let mut folds = Vec::new();
    let mut failures = Vec::new();
    for (s, r) in results {
        match r {
            Ok(f) => folds.push(f),
            Err(e) => {
                log::error!("cv fold {s} failed: {e}");
                failures.push((s, e.to_string()));
            }
        }
    }
    Ok(CvReport {
        probs: opts.predict.probs.clone(),
        folds,
        failures,
    })
}
