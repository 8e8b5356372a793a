#![allow(dead_code)]

use floodmax::data::CellData;
use floodmax::design::{build_design, seasonal_precision, CovariateTable};
use floodmax::gumbel::{gumbel_sample, GumbelParams};
use floodmax::priors::default_prior_set;
use floodmax::sampler::{data_poor_gaussian_conditional, update_cell, CellTarget, Model, SideHyper};
use floodmax::seeds::rng_from_seed;
use nalgebra::{DMatrix, DVector};

/// Small model with one centred covariate and Gumbel cells of `n_obs`
/// observations each.
pub fn tiny_model(j: usize, m: usize, n_obs: usize, seed: u64) -> Model {
    let stations: Vec<String> = (0..j).map(|i| format!("R{i}")).collect();
    let col: Vec<f64> = (0..j * m)
        .map(|r| {
            let river = (r / m) as f64 - (j as f64 - 1.0) / 2.0;
            0.8 * river + 0.1 * ((r % m) as f64 - (m as f64 - 1.0) / 2.0)
        })
        .collect();
    let table = CovariateTable::from_centered(stations, m, vec!["intercept".into(), "x1".into()], &[col]).unwrap();
    let design = build_design(&table).unwrap();
    let precision = seasonal_precision(1.0, m).unwrap();
    let mut rng = rng_from_seed(seed);
    let values = (0..j * m)
        .map(|c| {
            let mu = 20.0 + 2.0 * (c % 7) as f64;
            gumbel_sample(&GumbelParams::new(mu, 5.0).unwrap(), n_obs, &mut rng)
        })
        .collect();
    let cells = CellData {
        n_stations: j,
        months: m,
        values,
    };
    Model::new(design, precision, default_prior_set(1), cells).unwrap()
}

/// Dense covariance of `x` (rows are draws).
pub fn sample_mean_cov(draws: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = draws.len() as f64;
    let d = draws[0].len();
    let mut mean = DVector::zeros(d);
    for x in draws {
        mean += x;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for x in draws {
        let c = x - &mean;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    (mean, cov)
}

pub fn ln_mvn(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let r = x - mean;
    let sol = chol.solve(&r);
    let ln_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + ln_det + r.dot(&sol))
}

pub fn hyper(sd: [f64; 2], sigma: f64) -> SideHyper {
    SideHyper {
        seasonal_sd: DVector::from_row_slice(&sd),
        sigma,
    }
}

/// Prior mean and covariance of `(coef, coef*)` built densely.
pub fn prior_moments(model: &Model, h: &SideHyper) -> (DVector<f64>, DMatrix<f64>) {
    let k = model.n_coef();
    let m = model.months();
    let d = k * (m + 1);
    let q_inv = model.precision.q.clone().try_inverse().unwrap();
    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..k {
        mean[i] = model.priors.beta[i].mean;
        cov[(i, i)] = model.priors.beta[i].sd.powi(2);
        let off = k + i * m;
        cov.view_mut((off, off), (m, m))
            .copy_from(&(&q_inv * h.seasonal_sd[i].powi(2)));
    }
    (mean, cov)
}

/// Compares the data-poor conditional against conditioning the dense joint
/// Gaussian of coefficients and response.
pub fn check_conditional(model: &Model, scale_from_prior: bool) {
    let a = model.design.full();
    let n = model.n_cells();
    let eta = DVector::from_fn(n, |i, _| 3.0 + 0.1 * (i as f64).sin());
    let tau = DVector::from_fn(n, |i, _| 1.0 + 0.05 * (i as f64).cos());
    let loc = hyper([0.4, 0.1], 0.3);
    let sca = hyper([0.2, 0.07], 0.25);
    let (cl, cs) = data_poor_gaussian_conditional(&eta, &tau, &loc, &sca, model).unwrap();
    for (y, h, c) in [(&eta, &loc, &cl), (&tau, &sca, &cs)] {
        let (m0, s0) = prior_moments(model, h);
        let s_yy = &a * &s0 * a.transpose() + DMatrix::identity(n, n) * h.sigma.powi(2);
        let s_vy = &s0 * a.transpose();
        let s_yy_inv = s_yy.try_inverse().unwrap();
        let mean = &m0 + &s_vy * &s_yy_inv * (y - &a * &m0);
        let cov = &s0 - &s_vy * &s_yy_inv * s_vy.transpose();
        let reference = if scale_from_prior { &s0 } else { &cov };
        let scale = reference.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
        assert!((&c.mean - &mean).amax() <= 1e-8 * mean.amax().max(1.0));
        assert!((c.covariance() - &cov).amax() <= 1e-8 * scale);
    }
}

/// Total variation between a frozen-target chain and grid quadrature of
/// the target on 100 x 100 cells spanning `half` curvature standard
/// deviations either side of the mode. Returns the distance on the full
/// grid and on 10 x 10 aggregated blocks.
pub fn rich_tv(t: &CellTarget<'_>, iters: usize, seed: u64, half: f64) -> (f64, f64) {
    let mut x = [t.eta_mean, t.tau_mean];
    for _ in 0..50 {
        let ex = t.expand(x[0], x[1]);
        let det = ex.hess[0][0] * ex.hess[1][1] - ex.hess[0][1] * ex.hess[1][0];
        x = [
            x[0] - (ex.hess[1][1] * ex.grad[0] - ex.hess[0][1] * ex.grad[1]) / det,
            x[1] - (-ex.hess[1][0] * ex.grad[0] + ex.hess[0][0] * ex.grad[1]) / det,
        ];
    }
    let ex = t.expand(x[0], x[1]);
    let det = ex.hess[0][0] * ex.hess[1][1] - ex.hess[0][1] * ex.hess[1][0];
    let sd = [(-ex.hess[1][1] / det).sqrt(), (-ex.hess[0][0] / det).sqrt()];
    let g = 100;
    let lo = [x[0] - half * sd[0], x[1] - half * sd[1]];
    let w = [2.0 * half * sd[0] / g as f64, 2.0 * half * sd[1] / g as f64];
    let mut dens = vec![0.0; g * g];
    for i in 0..g {
        for j in 0..g {
            dens[i * g + j] = t.log_density(lo[0] + (i as f64 + 0.5) * w[0], lo[1] + (j as f64 + 0.5) * w[1]);
        }
    }
    let top = dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for d in dens.iter_mut() {
        *d = (*d - top).exp();
        z += *d;
    }
    dens.iter_mut().for_each(|d| *d /= z);

    let mut rng = rng_from_seed(seed);
    let mut cur = x;
    for _ in 0..1000 {
        cur = update_cell(t, cur, 1.0, &mut rng).0;
    }
    let mut hist = vec![0.0; g * g];
    for _ in 0..iters {
        cur = update_cell(t, cur, 1.0, &mut rng).0;
        let i = ((cur[0] - lo[0]) / w[0]).floor();
        let j = ((cur[1] - lo[1]) / w[1]).floor();
        if (0.0..g as f64).contains(&i) && (0.0..g as f64).contains(&j) {
            hist[i as usize * g + j as usize] += 1.0 / iters as f64;
        }
    }
    let outside = 1.0 - hist.iter().sum::<f64>();
    let fine = 0.5 * (hist.iter().zip(&dens).map(|(a, b)| (a - b).abs()).sum::<f64>() + outside);
    let block = |v: &[f64]| {
        let mut b = vec![0.0; 100];
        for i in 0..g {
            for j in 0..g {
                b[(i / 10) * 10 + j / 10] += v[i * g + j];
            }
        }
        b
    };
    let (hb, db) = (block(&hist), block(&dens));
    let coarse = 0.5 * (hb.iter().zip(&db).map(|(a, b)| (a - b).abs()).sum::<f64>() + outside);
    (fine, coarse)
}
