use nalgebra::{DMatrix, DVector};

use crate::gumbel::gumbel_ml_fit;
use crate::state::LatentState;

use super::Model;

/// Least squares of `y` on the rows of `x` flagged in `use_row`. Falls back
/// to `fallback` when too few rows are available or the system is singular.
fn least_squares(x: &DMatrix<f64>, y: &[f64], use_row: &[bool], fallback: DVector<f64>) -> DVector<f64> {
    let rows: Vec<usize> = (0..x.nrows()).filter(|&r| use_row[r]).collect();
    if rows.len() < x.ncols() {
        return fallback;
    }
    let xs = x.select_rows(&rows);
    let ys = DVector::from_iterator(rows.len(), rows.iter().map(|&r| y[r]));
    let xtx = xs.tr_mul(&xs);
    let xty = xs.tr_mul(&ys);
    match xtx.cholesky() {
        Some(c) => c.solve(&xty),
        None => fallback,
    }
}

/// Starting point for a chain.
///
/// Cells with at least two distinct observations start at the log of their
/// Gumbel ML estimates. `beta` and `alpha` are least-squares fits of those
/// estimates on `X`, and cells without a usable fit start at the fitted
/// regression value. Seasonal effects start at zero and standard deviations
/// at their prior means.
pub fn initialize_state(model: &Model) -> LatentState {
    let n = model.n_cells();
    let k = model.n_coef();
    let m = model.months();
    let mut eta = vec![0.0; n];
    let mut tau = vec![0.0; n];
    let mut fitted = vec![false; n];
    for c in 0..n {
        let ys = &model.cells.values[c];
        if ys.len() < 2 {
            continue;
        }
        if let Ok(p) = gumbel_ml_fit(ys) {
            if p.mu() > 0.0 {
                eta[c] = p.mu().ln();
                tau[c] = p.sigma().ln();
                fitted[c] = true;
            }
        }
    }
    let pr = &model.priors;
    let beta = least_squares(
        &model.design.x,
        &eta,
        &fitted,
        DVector::from_iterator(k, pr.beta.iter().map(|p| p.mean)),
    );
    let alpha = least_squares(
        &model.design.x,
        &tau,
        &fitted,
        DVector::from_iterator(k, pr.alpha.iter().map(|p| p.mean)),
    );
    let eta_fit = &model.design.x * &beta;
    let tau_fit = &model.design.x * &alpha;
    for c in 0..n {
        if !fitted[c] {
            eta[c] = eta_fit[c];
            tau[c] = tau_fit[c];
        }
    }
    LatentState {
        eta: DVector::from_vec(eta),
        tau: DVector::from_vec(tau),
        beta,
        beta_star: DVector::zeros(k * m),
        alpha,
        alpha_star: DVector::zeros(k * m),
        psi: DVector::from_iterator(k, pr.psi.iter().map(|p| p.mean())),
        phi: DVector::from_iterator(k, pr.phi.iter().map(|p| p.mean())),
        sigma_eta: pr.sigma_eta.mean(),
        sigma_tau: pr.sigma_tau.mean(),
    }
}
