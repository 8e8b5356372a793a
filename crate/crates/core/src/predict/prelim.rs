use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CellData, ObservationTable};
use crate::design::CovariateTable;
use crate::error::{Error, Result};
use crate::gumbel::{anderson_darling_gumbel, DEFAULT_N_BOOT};
use crate::seeds::{self, Stream};
use crate::stats::{ols, pearson};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrelimOptions {
    /// Bootstrap replicates for the Anderson–Darling p-values.
    pub n_boot: usize,
    /// Cells with fewer observations are skipped.
    pub min_obs: usize,
}

impl Default for PrelimOptions {
    fn default() -> Self {
        Self {
            n_boot: DEFAULT_N_BOOT,
            min_obs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrelimCellFit {
    pub station: String,
    pub month: usize,
    pub n: usize,
    pub mu: f64,
    pub sigma: f64,
    pub ad_statistic: f64,
    pub ad_p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    LogMu,
    LogSigma,
}

impl Response {
    pub const BOTH: [Response; 2] = [Response::LogMu, Response::LogSigma];

    pub fn name(self) -> &'static str {
        match self {
            Response::LogMu => "log_mu",
            Response::LogSigma => "log_sigma",
        }
    }
}

/// OLS fit of one response on a covariate subset (intercept always in).
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetModel {
    pub response: Response,
    pub covariates: Vec<String>,
    /// Intercept first, then the subset in order.
    pub coefficients: Vec<f64>,
    pub aic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseStep {
    pub response: Response,
    pub step: usize,
    /// `start`, `add <name>` or `drop <name>`.
    pub action: String,
    pub covariates: Vec<String>,
    pub aic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrelimReport {
    pub fits: Vec<PrelimCellFit>,
    /// Cells left out, with the reason.
    pub skipped: Vec<(String, usize, String)>,
    pub models: Vec<SubsetModel>,
    pub stepwise: Vec<StepwiseStep>,
    /// Selected subset per response, in [`Response::BOTH`] order.
    pub selected: Vec<SubsetModel>,
    /// Pairwise correlations of the candidate covariates over cells.
    pub correlations: Vec<(String, String, f64)>,
}

impl PrelimReport {
    pub fn selected(&self, r: Response) -> &SubsetModel {
        &self.selected[Response::BOTH.iter().position(|x| *x == r).unwrap()]
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.ad_p_value).collect()
    }
}

fn subset_fit(
    response: Response,
    subset: &[usize],
    cand: &[Vec<f64>],
    names: &[String],
    y: &[f64],
) -> Result<SubsetModel> {
    let x = DMatrix::from_fn(y.len(), subset.len() + 1, |r, c| if c == 0 { 1.0 } else { cand[subset[c - 1]][r] });
    let f = ols(&x, y)?;
    Ok(SubsetModel {
        response,
        covariates: subset.iter().map(|&k| names[k].clone()).collect(),
        coefficients: f.coefficients,
        aic: f.aic,
    })
}

/// Stepwise AIC search in both directions starting from the intercept-only
/// model. Ties keep the current model.
fn stepwise(
    response: Response,
    cand: &[Vec<f64>],
    names: &[String],
    y: &[f64],
    trace: &mut Vec<StepwiseStep>,
) -> Result<SubsetModel> {
    let mut current: Vec<usize> = Vec::new();
    let mut best = subset_fit(response, &current, cand, names, y)?;
    trace.push(StepwiseStep {
        response,
        step: 0,
        action: "start".into(),
        covariates: Vec::new(),
        aic: best.aic,
    });
    for step in 1..=2 * cand.len() + 1 {
        let mut moves: Vec<(String, Vec<usize>)> = Vec::new();
        for (k, name) in names.iter().enumerate().take(cand.len()) {
            if let Some(pos) = current.iter().position(|&c| c == k) {
                let mut s = current.clone();
                s.remove(pos);
                moves.push((format!("drop {name}"), s));
            } else {
                let mut s = current.clone();
                s.push(k);
                s.sort_unstable();
                moves.push((format!("add {}", names[k]), s));
            }
        }
        let mut improved: Option<(String, Vec<usize>, SubsetModel)> = None;
        for (action, s) in moves {
            let Ok(m) = subset_fit(response, &s, cand, names, y) else { continue };
            let bar = improved.as_ref().map_or(best.aic, |i| i.2.aic);
            if m.aic < bar {
                improved = Some((action, s, m));
            }
        }
        match improved {
            Some((action, s, m)) => {
                trace.push(StepwiseStep {
                    response,
                    step,
                    action,
                    covariates: m.covariates.clone(),
                    aic: m.aic,
                });
                current = s;
                best = m;
            }
            None => break,
        }
    }
    Ok(best)
}

/// Gumbel ML fit and Anderson–Darling bootstrap test for every cell with
/// at least `opts.min_obs` (and never fewer than five) observations. Cell
/// `c` bootstraps on its own substream. Cells with a nonpositive location
/// estimate are kept in the fits and also listed as skipped.
pub fn gof_cells(
    cells: &CellData,
    stations: &[String],
    opts: &PrelimOptions,
    seed: u64,
) -> (Vec<PrelimCellFit>, Vec<(String, usize, String)>) {
    let min_obs = opts.min_obs.max(5);
    let m = cells.months;
    let outcomes: Vec<std::result::Result<PrelimCellFit, String>> = (0..cells.n_cells())
        .into_par_iter()
        .map(|c| {
            let ys = &cells.values[c];
            if ys.len() < min_obs {
                return Err(format!("{} observations", ys.len()));
            }
            let mut rng = seeds::substream(seed, Stream::Bootstrap, c as u64);
            let gof = anderson_darling_gumbel(ys, opts.n_boot, &mut rng).map_err(|e| e.to_string())?;
            Ok(PrelimCellFit {
                station: stations[c / m].clone(),
                month: c % m + 1,
                n: ys.len(),
                mu: gof.fitted.mu(),
                sigma: gof.fitted.sigma(),
                ad_statistic: gof.statistic,
                ad_p_value: gof.p_value,
            })
        })
        .collect();
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for (c, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(f) => {
                if !(f.mu > 0.0) {
                    skipped.push((f.station.clone(), f.month, "nonpositive location estimate".into()));
                }
                fits.push(f);
            }
            Err(reason) => skipped.push((stations[c / m].clone(), c % m + 1, reason)),
        }
    }
    (fits, skipped)
}

/// Per-cell Gumbel ML fits with Anderson–Darling bootstrap p-values, then
/// log-linear regressions of `log mu` and `log sigma` on the covariates:
/// every subset with its AIC, a stepwise selection, and the pairwise
/// covariate correlations.
pub fn preliminary_analysis(
    data: &ObservationTable,
    table: &CovariateTable,
    opts: &PrelimOptions,
    seed: u64,
) -> Result<PrelimReport> {
    let cells = data.cells(&table.stations, table.months)?;
    let (fits, skipped) = gof_cells(&cells, &table.stations, opts, seed);
    let rows: Vec<usize> = fits
        .iter()
        .filter(|f| f.mu > 0.0)
        .map(|f| table.row_index(table.station_index(&f.station).unwrap(), f.month - 1))
        .collect();
    let names: Vec<String> = table.names[1..].to_vec();
    let cand: Vec<Vec<f64>> = (1..table.x.ncols())
        .map(|k| rows.iter().map(|&r| table.x[(r, k)]).collect())
        .collect();
    if rows.len() <= cand.len() + 1 {
        return Err(Error::DegenerateSample(format!(
            "only {} usable cells for the regression analysis",
            rows.len()
        )));
    }
    let fitted: Vec<&PrelimCellFit> = fits.iter().filter(|f| f.mu > 0.0).collect();
    let log_mu: Vec<f64> = fitted.iter().map(|f| f.mu.ln()).collect();
    let log_sigma: Vec<f64> = fitted.iter().map(|f| f.sigma.ln()).collect();

    let mut models = Vec::new();
    let mut stepwise_trace = Vec::new();
    let mut selected = Vec::new();
    for response in Response::BOTH {
        let y = match response {
            Response::LogMu => &log_mu,
            Response::LogSigma => &log_sigma,
        };
        for mask in 0..(1usize << cand.len()) {
            let subset: Vec<usize> = (0..cand.len()).filter(|k| mask >> k & 1 == 1).collect();
            match subset_fit(response, &subset, &cand, &names, y) {
                Ok(s) => models.push(s),
                Err(e) => log::warn!("{} on {:?}: {e}", response.name(), subset),
            }
        }
        selected.push(stepwise(response, &cand, &names, y, &mut stepwise_trace)?);
    }
    let mut correlations = Vec::new();
    for a in 0..cand.len() {
        for b in a + 1..cand.len() {
            if let Some(r) = pearson(&cand[a], &cand[b]) {
                correlations.push((names[a].clone(), names[b].clone(), r));
            }
        }
    }
    Ok(PrelimReport {
        fits,
        skipped,
        models,
        stepwise: stepwise_trace,
        selected,
        correlations,
    })
}
