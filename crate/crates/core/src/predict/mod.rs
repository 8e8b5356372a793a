//! Posterior summaries and posterior-predictive checks: quantile
//! prediction for gauged or ungauged sites, per-cell fit reports,
//! leave-one-river-out cross-validation and the preliminary per-cell
//! analysis.

mod cv;
mod fit_report;
mod prelim;
mod quantiles;

pub use cv::{cross_validate, CvMonth, CvOptions, CvReport, FoldResult};
pub use fit_report::{cell_fit_report, CellFitReport, FitPoint};
pub use prelim::{
    gof_cells, preliminary_analysis, PrelimCellFit, PrelimOptions, PrelimReport, Response, StepwiseStep, SubsetModel,
};
pub use quantiles::{
    predictive_draws, predictive_quantiles, CellPrediction, PredictOptions, PredictiveSummary, QuantileSummary,
};

/// Column label for a quantile level: `median` for 0.5, otherwise `p90`
/// style percent labels.
pub fn prob_label(q: f64) -> String {
    if q == 0.5 {
        "median".to_string()
    } else {
        let pct = q * 100.0;
        if (pct - pct.round()).abs() < 1e-9 {
            format!("p{}", pct.round() as i64)
        } else {
            format!("p{pct}")
        }
    }
}
