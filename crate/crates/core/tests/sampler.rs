mod common;

use common::{check_conditional, hyper, ln_mvn, prior_moments, rich_tv, sample_mean_cov, tiny_model};
use floodmax::gumbel::{gumbel_ml_fit, gumbel_sample, GumbelParams};
use floodmax::sampler::{
    data_poor_gaussian_conditional, data_poor_step, data_rich_step, diagnostics, initialize_state,
    log_marginal, log_posterior, run_chain, update_cell, CellTarget, Model, SamplerConfig, Side, SideHyper,
};
use floodmax::seeds::{rng_from_seed, substream, Stream};
use floodmax::synth::{generate_synthetic, SynthSettings};
use floodmax::{fit, FitSetup};
use nalgebra::{DMatrix, DVector};

#[test]
fn data_poor_conditional_matches_dense_joint_conditioning() {
    let mut model = tiny_model(2, 5, 6, 11);
    // With the default intercept variance of 1e4 the covariance-form
    // oracle itself cancels to about 1e-12 of the prior scale.
    check_conditional(&model, true);
    for p in model.priors.beta.iter_mut().chain(model.priors.alpha.iter_mut()) {
        *p = floodmax::NormalPrior::new(p.mean, 1.0).unwrap();
    }
    check_conditional(&model, false);
}

#[test]
fn marginal_matches_dense_covariance() {
    let model = tiny_model(2, 5, 6, 12);
    let a = model.design.full();
    let n = model.n_cells();
    let y = DVector::from_fn(n, |i, _| 2.5 + 0.2 * ((i * 7 % 5) as f64 - 2.0));
    for h in [hyper([0.4, 0.1], 0.3), hyper([1.5, 0.02], 0.05), hyper([0.01, 0.5], 2.0)] {
        let (m0, s0) = prior_moments(&model, &h);
        let cov = &a * &s0 * a.transpose() + DMatrix::identity(n, n) * h.sigma.powi(2);
        let oracle = ln_mvn(&y, &(&a * &m0), &cov);
        for side in Side::BOTH {
            let got = log_marginal(&y, &h, &model, side).unwrap();
            assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
        }
    }
}

#[test]
fn conditional_draws_match_moments() {
    let model = tiny_model(2, 5, 6, 13);
    let n = model.n_cells();
    let eta = DVector::from_fn(n, |i, _| 3.0 + 0.1 * (i as f64).sin());
    let (c, _) = data_poor_gaussian_conditional(&eta, &eta, &hyper([0.4, 0.1], 0.3), &hyper([0.4, 0.1], 0.3), &model)
        .unwrap();
    let mut rng = rng_from_seed(5);
    let draws: Vec<DVector<f64>> = (0..100_000).map(|_| c.sample(&mut rng)).collect();
    let (mean, cov) = sample_mean_cov(&draws);
    let target = c.covariance();
    let rel = (&cov - &target).norm() / target.norm();
    assert!(rel < 0.05, "relative Frobenius error {rel}");
    for i in 0..mean.len() {
        let se = (target[(i, i)] / draws.len() as f64).sqrt();
        assert!((mean[i] - c.mean[i]).abs() < 3.5 * se, "component {i}");
    }
}

#[test]
fn frozen_hyperparameters_give_exact_gibbs_draws() {
    let model = tiny_model(2, 5, 6, 14);
    let mut state = initialize_state(&model);
    let loc = SideHyper::from_state(&state, Side::Location);
    let sca = SideHyper::from_state(&state, Side::Scale);
    let (c, _) = data_poor_gaussian_conditional(&state.eta, &state.tau, &loc, &sca, &model).unwrap();
    let mut rng = rng_from_seed(6);
    let n = 50_000;
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let out = data_poor_step(&mut state, &model, [0.0, 0.0], &mut rng).unwrap();
        assert_eq!(out.accepted, [false, false]);
        assert_eq!(state.psi, loc.seasonal_sd);
        assert_eq!(state.sigma_tau, sca.sigma);
        let mut v = state.beta.as_slice().to_vec();
        v.extend(state.beta_star.iter());
        draws.push(DVector::from_vec(v));
    }
    let (mean, cov) = sample_mean_cov(&draws);
    let target = c.covariance();
    assert!((&cov - &target).norm() / target.norm() < 0.05);
    for i in 0..mean.len() {
        let se = (target[(i, i)] / n as f64).sqrt();
        assert!((mean[i] - c.mean[i]).abs() < 3.5 * se, "component {i}");
    }
    let x: Vec<f64> = draws.iter().map(|d| d[0]).collect();
    let m = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    let lag1: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    assert!((lag1 / var).abs() < 0.02, "lag-1 autocorrelation {}", lag1 / var);
}

#[test]
fn frozen_target_rich_chain_matches_grid_quadrature() {
    let ys = gumbel_sample(&GumbelParams::new(30.0, 7.0).unwrap(), 30, &mut rng_from_seed(21));
    let t = CellTarget {
        ys: &ys,
        eta_mean: 3.3,
        tau_mean: 2.1,
        sigma_eta: 0.25,
        sigma_tau: 0.3,
    };
    let (fine, coarse) = rich_tv(&t, 100_000, 3, 6.0);
    assert!(coarse < 0.02, "block TV {coarse}");
    // The full-resolution distance is dominated by multinomial noise from
    // 1e5 draws over 1e4 cells.
    assert!(fine < 0.12, "grid TV {fine}");

    // Sparse data: a skewed, weakly identified target.
    let few = [12.0, 31.0, 18.0];
    let t = CellTarget {
        ys: &few,
        eta_mean: 3.0,
        tau_mean: 2.0,
        sigma_eta: 0.5,
        sigma_tau: 0.5,
    };
    // The skewed target mixes more slowly, so it gets a longer run on a
    // wider grid.
    let (_, coarse) = rich_tv(&t, 1_000_000, 4, 10.0);
    assert!(coarse < 0.02, "sparse block TV {coarse}");
}

#[test]
fn cell_updates_commute() {
    let model = tiny_model(3, 6, 8, 15);
    let state = initialize_state(&model);
    let seed = 99;
    let streams = |n: usize| (0..n).map(|c| substream(seed, Stream::Cell, c as u64)).collect::<Vec<_>>();

    let mut forward = state.clone();
    let mut s = streams(model.n_cells());
    let flags = data_rich_step(&mut forward, &model, &mut s, 1.0);

    let mut backward = state.clone();
    let mut s = streams(model.n_cells());
    let eta_mean = model.design.linear_predictor(&state.beta, &state.beta_star);
    let tau_mean = model.design.linear_predictor(&state.alpha, &state.alpha_star);
    for c in (0..model.n_cells()).rev() {
        let t = CellTarget {
            ys: &model.cells.values[c],
            eta_mean: eta_mean[c],
            tau_mean: tau_mean[c],
            sigma_eta: state.sigma_eta,
            sigma_tau: state.sigma_tau,
        };
        let (x, acc) = update_cell(&t, [state.eta[c], state.tau[c]], 1.0, &mut s[c]);
        backward.eta[c] = x[0];
        backward.tau[c] = x[1];
        assert_eq!(acc, flags[c]);
    }
    assert_eq!(forward, backward);
}

#[test]
fn initial_state_follows_ml_fits() {
    let mut model = tiny_model(2, 6, 10, 16);
    let s = initialize_state(&model);
    for c in 0..model.n_cells() {
        let p = gumbel_ml_fit(&model.cells.values[c]).unwrap();
        assert_eq!(s.eta[c], p.mu().ln());
        assert_eq!(s.tau[c], p.sigma().ln());
    }
    assert!(s.beta_star.iter().all(|v| *v == 0.0));
    assert!((s.sigma_eta - model.priors.sigma_eta.mean()).abs() < 1e-15);
    assert!(log_posterior(&model, &s).unwrap().is_finite());

    model.cells.values[3].clear();
    model.cells.values[7].truncate(1);
    let s = initialize_state(&model);
    let fitted = &model.design.x * &s.beta;
    assert_eq!(s.eta[3], fitted[3]);
    assert_eq!(s.eta[7], fitted[7]);
    assert!(log_posterior(&model, &s).unwrap().is_finite());
}

fn small_cfg(n_iter: usize, n_burnin: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        n_iter,
        n_burnin,
        seed,
        ..SamplerConfig::default()
    }
}

#[test]
fn chains_are_deterministic_and_sized() {
    let model = tiny_model(2, 5, 8, 17);
    let mut cfg = small_cfg(300, 100, 1);
    cfg.thin = 3;
    let a = run_chain(&model, &cfg, 42).unwrap();
    let b = run_chain(&model, &cfg, 42).unwrap();
    let c = run_chain(&model, &cfg, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.draws, c.draws);
    let width = a.draws.len() / cfg.n_retained();
    assert_eq!(a.draws.len() % width, 0);
    assert_eq!(cfg.n_retained(), 67);
}

#[test]
fn synthetic_fit_mixes_with_default_tuning() {
    let settings = SynthSettings {
        years: 30,
        ..SynthSettings::default()
    };
    let data = generate_synthetic(&settings, &mut rng_from_seed(2024)).unwrap();
    let setup = FitSetup {
        sampler: small_cfg(4000, 1500, 7),
        ..FitSetup::default()
    };
    let (_, samples) = fit(&data.observations, &data.covariates, &setup).unwrap();
    let report = diagnostics(&samples);
    for (rich, loc, sca, fails) in &report.acceptance {
        assert!(*rich > 0.2 && *rich < 0.9, "data-rich acceptance {rich}");
        assert!(*loc > 0.05 && *sca > 0.05, "hyper acceptance {loc} {sca}");
        assert_eq!(*fails, 0);
    }
    for k in 0..3 {
        for name in [format!("beta_{k}"), format!("alpha_{k}")] {
            let r = report.param(&name).unwrap().rhat.unwrap();
            assert!(r < 1.05, "{name}: R-hat {r}");
        }
    }
    let b1 = report.param("beta_1").unwrap();
    assert!((b1.mean - 0.75).abs() < 4.0 * b1.sd + 0.05);
}

#[test]
fn nonfinite_data_is_rejected_early() {
    let model = tiny_model(2, 5, 4, 18);
    let mut cells = model.cells.clone();
    cells.values[0][0] = f64::NAN;
    assert!(Model::new(model.design.clone(), model.precision.clone(), model.priors.clone(), cells).is_err());
}
