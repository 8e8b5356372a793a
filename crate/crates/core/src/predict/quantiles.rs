use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::CovariateTable;
use crate::error::{Error, Result};
use crate::sampler::{sorted_quantile, PosteriorSamples};
use crate::seeds::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictOptions {
    /// Quantile levels of the monthly maximum to predict.
    pub probs: Vec<f64>,
    /// Draw fresh residuals per posterior draw. When off, the latent
    /// regression surface alone is summarised.
    pub residuals: bool,
    /// Mass of the equal-tailed interval reported around the median.
    pub interval: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            probs: vec![0.5, 0.9],
            residuals: true,
            interval: 0.8,
        }
    }
}

impl PredictOptions {
    pub fn validate(&self) -> Result<()> {
        if self.probs.is_empty() {
            return Err(Error::Config("predict.probs must not be empty".into()));
        }
        if self.probs.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(Error::Config("predict.probs must lie in (0, 1)".into()));
        }
        if !(self.interval > 0.0 && self.interval < 1.0) {
            return Err(Error::Config("predict.interval must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSummary {
    pub prob: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellPrediction {
    pub station: String,
    /// 1-based.
    pub month: usize,
    pub quantiles: Vec<QuantileSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub probs: Vec<f64>,
    pub interval: f64,
    pub residuals: bool,
    pub cells: Vec<CellPrediction>,
    /// Covariates outside the training range, one message per cell.
    pub warnings: Vec<String>,
}

impl PredictiveSummary {
    pub fn cell(&self, station: &str, month: usize) -> Option<&CellPrediction> {
        self.cells.iter().find(|c| c.station == station && c.month == month)
    }
}

/// Predicted flow quantiles for one covariate row and month, one row per
/// posterior draw and one column per level in `probs`.
///
/// Residual noise for a draw is generated from a stream keyed on the
/// draw's values and `cell_key`, so the result does not depend on the
/// order of the posterior rows.
pub fn predictive_draws(
    samples: &PosteriorSamples,
    x: &[f64],
    month: usize,
    probs: &[f64],
    residuals: bool,
    seed: u64,
    cell_key: u64,
) -> Result<Vec<Vec<f64>>> {
    let l = samples.layout;
    if x.len() != l.n_coef {
        return Err(Error::Dimension(format!(
            "covariate row has {} entries, samples have {} coefficients",
            x.len(),
            l.n_coef
        )));
    }
    if month == 0 || month > l.months {
        return Err(Error::Domain(format!("month {month} outside 1..={}", l.months)));
    }
    let m = month - 1;
    let z: Vec<f64> = probs.iter().map(|q| -(-q.ln()).ln()).collect();
    let hyper = l.beta()..l.sigma_tau() + 1;
    let out = samples
        .rows()
        .map(|row| {
            let mut eta = 0.0;
            let mut tau = 0.0;
            for (k, xk) in x.iter().enumerate() {
                eta += (row[l.beta() + k] + row[l.beta_star() + k * l.months + m]) * xk;
                tau += (row[l.alpha() + k] + row[l.alpha_star() + k * l.months + m]) * xk;
            }
            if residuals {
                let key = seeds::hash_words(row[hyper.clone()].iter().map(|v| v.to_bits()));
                let mut rng = seeds::substream(seed, Stream::Predict, key ^ cell_key);
                let e1: f64 = StandardNormal.sample(&mut rng);
                let e2: f64 = StandardNormal.sample(&mut rng);
                eta += row[l.sigma_eta()] * e1;
                tau += row[l.sigma_tau()] * e2;
            }
            let (mu, sigma) = (eta.exp(), tau.exp());
            z.iter().map(|zq| mu + sigma * zq).collect()
        })
        .collect();
    Ok(out)
}

/// Posterior-predictive quantiles for every (station, month) row of a
/// centred covariate table, summarised by the posterior median and an
/// equal-tailed interval over draws.
pub fn predictive_quantiles(
    samples: &PosteriorSamples,
    table: &CovariateTable,
    opts: &PredictOptions,
    seed: u64,
) -> Result<PredictiveSummary> {
    opts.validate()?;
    if table.months != samples.layout.months {
        return Err(Error::Dimension(format!(
            "covariates have {} months, samples {}",
            table.months, samples.layout.months
        )));
    }
    if samples.total_draws() == 0 {
        return Err(Error::DegenerateSample("no posterior draws".into()));
    }
    let lo = (1.0 - opts.interval) / 2.0;
    let cells: Vec<(usize, usize)> = (0..table.n_stations())
        .flat_map(|j| (0..table.months).map(move |m| (j, m)))
        .collect();
    let cells = cells
        .into_par_iter()
        .map(|(j, m)| {
            let station = &table.stations[j];
            let key = seeds::hash_words([seeds::hash_str(station), m as u64]);
            let draws = predictive_draws(
                samples,
                &table.row(j, m),
                m + 1,
                &opts.probs,
                opts.residuals,
                seed,
                key,
            )?;
            let quantiles = opts
                .probs
                .iter()
                .enumerate()
                .map(|(qi, &prob)| {
                    let mut v: Vec<f64> = draws.iter().map(|d| d[qi]).collect();
                    v.sort_by(f64::total_cmp);
                    QuantileSummary {
                        prob,
                        median: sorted_quantile(&v, 0.5),
                        lower: sorted_quantile(&v, lo),
                        upper: sorted_quantile(&v, 1.0 - lo),
                    }
                })
                .collect();
            Ok(CellPrediction {
                station: station.clone(),
                month: m + 1,
                quantiles,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictiveSummary {
        probs: opts.probs.clone(),
        interval: opts.interval,
        residuals: opts.residuals,
        cells,
        warnings: Vec::new(),
    })
}
