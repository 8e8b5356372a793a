use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::sampler::PosteriorSamples;
use crate::stats::quantile_in_place;

/// Minimum number of observations for a fit report.
pub const MIN_FIT_OBS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct FitPoint {
    pub y: f64,
    /// Hazen plotting position `(i - 0.5) / n`.
    pub empirical: f64,
    /// Posterior mean of the model CDF at `y`.
    pub model: f64,
    /// Pointwise 95% band of the model CDF over draws.
    pub lower: f64,
    pub upper: f64,
}

/// Empirical against posterior CDF for one river-month, sorted by `y`.
/// The PP pairs are `(empirical, model)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFitReport {
    pub station: String,
    pub month: usize,
    pub points: Vec<FitPoint>,
}

pub fn cell_fit_report(
    samples: &PosteriorSamples,
    data: &ObservationTable,
    station: &str,
    month: usize,
) -> Result<CellFitReport> {
    let l = samples.layout;
    let j = samples
        .stations
        .iter()
        .position(|s| s == station)
        .ok_or_else(|| Error::Domain(format!("station {station} is not in the posterior samples")))?;
    if month == 0 || month > l.months {
        return Err(Error::Domain(format!("month {month} outside 1..={}", l.months)));
    }
    let mut ys: Vec<f64> = data
        .station_records(station)
        .filter(|r| r.month == month)
        .map(|r| r.flow)
        .collect();
    if ys.len() < MIN_FIT_OBS {
        return Err(Error::DegenerateSample(format!(
            "{station} month {month} has {} observations, need {MIN_FIT_OBS}",
            ys.len()
        )));
    }
    if samples.total_draws() == 0 {
        return Err(Error::DegenerateSample("no posterior draws".into()));
    }
    ys.sort_by(f64::total_cmp);
    let cell = j * l.months + month - 1;
    let params: Vec<(f64, f64)> = samples
        .rows()
        .map(|r| (r[l.eta() + cell].exp(), r[l.tau() + cell].exp()))
        .collect();
    let n = ys.len() as f64;
    let mut cdf = vec![0.0; params.len()];
    let points = ys
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            for (c, (mu, sigma)) in cdf.iter_mut().zip(&params) {
                *c = (-(-(y - mu) / sigma).exp()).exp();
            }
            let model = cdf.iter().sum::<f64>() / cdf.len() as f64;
            FitPoint {
                y,
                empirical: (i as f64 + 0.5) / n,
                model,
                lower: quantile_in_place(&mut cdf, 0.025),
                upper: quantile_in_place(&mut cdf, 0.975),
            }
        })
        .collect();
    Ok(CellFitReport {
        station: station.to_string(),
        month,
        points,
    })
}
