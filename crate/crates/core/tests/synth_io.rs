use floodmax::data::{load_covariates, load_observations, write_covariates, write_observations};
use floodmax::gumbel::gumbel_ml_fit;
use floodmax::seeds::rng_from_seed;
use floodmax::synth::{generate_synthetic, read_truth, SynthSettings, TrueParams};

#[test]
fn files_round_trip_and_reserialise_identically() {
    let data = generate_synthetic(
        &SynthSettings {
            years: 12,
            ..SynthSettings::default()
        },
        &mut rng_from_seed(1),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path()).unwrap();
    let obs = load_observations(&dir.path().join("observations.csv")).unwrap();
    let cov = load_covariates(&dir.path().join("covariates.csv")).unwrap();
    let truth = read_truth(&dir.path().join("truth.json")).unwrap();
    assert_eq!(obs, data.observations);
    assert_eq!(cov, data.covariates);
    assert_eq!(truth, data.truth);

    let again = tempfile::tempdir().unwrap();
    write_observations(&again.path().join("o.csv"), &obs).unwrap();
    write_covariates(&again.path().join("c.csv"), &cov).unwrap();
    let read = |d: &std::path::Path, n: &str| std::fs::read(d.join(n)).unwrap();
    assert_eq!(read(dir.path(), "observations.csv"), read(again.path(), "o.csv"));
    assert_eq!(read(dir.path(), "covariates.csv"), read(again.path(), "c.csv"));
}

#[test]
fn generator_shape_and_determinism() {
    let s = SynthSettings {
        years: 30,
        ..SynthSettings::default()
    };
    let a = generate_synthetic(&s, &mut rng_from_seed(9)).unwrap();
    let b = generate_synthetic(&s, &mut rng_from_seed(9)).unwrap();
    assert_eq!(a.observations, b.observations);
    assert_eq!(a.observations.records.len(), 8 * 12 * 30);
    assert_eq!(a.observations.stations().len(), 8);
    assert!(a.observations.records.iter().all(|r| r.flow > 0.0));
    assert_eq!(a.truth.eta.len(), 96);
    assert_eq!(a.truth.beta_star.len(), 36);
}

#[test]
fn zero_seasonal_spread_leaves_only_sampling_noise() {
    let s = SynthSettings {
        n_stations: 1,
        years: 80,
        precip_amplitude: 0.0,
        precip_noise_sd: 0.0,
        truth: TrueParams {
            psi: vec![0.0; 3],
            phi: vec![0.0; 3],
            sigma_eta: 0.0,
            sigma_tau: 0.0,
            ..TrueParams::default()
        },
        ..SynthSettings::default()
    };
    let data = generate_synthetic(&s, &mut rng_from_seed(3)).unwrap();
    assert!(data.truth.beta_star.iter().chain(&data.truth.alpha_star).all(|v| *v == 0.0));
    assert!(data.truth.eta.windows(2).all(|w| w[0] == w[1]));
    let mu = data.truth.eta[0].exp();
    let sigma = data.truth.tau[0].exp();
    // Large-sample standard error of the Gumbel location estimate.
    let se = sigma * (1.1087_f64 / 80.0).sqrt();
    for m in 1..=12 {
        let ys: Vec<f64> = data
            .observations
            .records
            .iter()
            .filter(|r| r.month == m)
            .map(|r| r.flow)
            .collect();
        let fit = gumbel_ml_fit(&ys).unwrap();
        assert!((fit.mu() - mu).abs() < 4.0 * se, "month {m}: {} vs {mu}", fit.mu());
    }
}

#[test]
fn invalid_settings_are_rejected() {
    let mut s = SynthSettings::default();
    s.truth.psi = vec![0.1, -0.1, 0.1];
    assert!(generate_synthetic(&s, &mut rng_from_seed(0)).is_err());
    let s = SynthSettings {
        years: 0,
        ..SynthSettings::default()
    };
    assert!(generate_synthetic(&s, &mut rng_from_seed(0)).is_err());
}
