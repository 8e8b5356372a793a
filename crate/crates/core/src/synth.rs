//! Synthetic datasets drawn from the model itself, with their ground truth.
//!
//! Catchment areas cycle through a realistic skeleton of eight Icelandic
//! catchments; monthly maximum daily precipitation gets a per-river level,
//! a shared autumn peak and a little noise.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{write_covariates, write_observations, ObservationRecord, ObservationTable};
use crate::design::{build_design, center_log_covariates, seasonal_precision, RawCovariateRow};
use crate::error::{Error, Result};
use crate::gumbel::{gumbel_draw, GumbelParams};
use crate::priors::PriorSettings;

/// Station identifiers and catchment areas (km²) of the skeleton.
pub const CATCHMENTS: [(&str, f64); 8] = [
    ("VHM10", 392.0),
    ("VHM19", 37.0),
    ("VHM26", 267.0),
    ("VHM45", 456.0),
    ("VHM51", 296.0),
    ("VHM198", 195.0),
    ("VHM200", 1094.0),
    ("VHM204", 103.0),
];

/// Redraw cap for nonpositive flows in a single cell.
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrueParams {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub sigma_eta: f64,
    pub sigma_tau: f64,
}

impl Default for TrueParams {
    fn default() -> Self {
        Self {
            beta: vec![3.5, 0.75, 0.9],
            alpha: vec![2.0, 0.75, 1.0],
            psi: vec![0.4, 0.05, 0.05],
            phi: vec![0.2, 0.05, 0.05],
            sigma_eta: 0.2,
            sigma_tau: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientSource {
    /// Use `truth.beta` and `truth.alpha` as given.
    Fixed,
    /// Keep the intercepts, draw the slopes from the slope prior.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub n_stations: usize,
    pub years: usize,
    pub first_year: i32,
    pub months: usize,
    pub kappa: f64,
    /// Median over rivers of the monthly maximum daily precipitation (mm).
    pub precip_level: f64,
    /// Log-scale spread of river precipitation levels.
    pub precip_river_sd: f64,
    /// Log-scale amplitude of the seasonal precipitation cycle.
    pub precip_amplitude: f64,
    /// Month of peak precipitation, 1-based.
    pub precip_peak_month: usize,
    pub precip_noise_sd: f64,
    pub coefficients: CoefficientSource,
    pub truth: TrueParams,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            n_stations: 8,
            years: 50,
            first_year: 1960,
            months: 12,
            kappa: 1.0,
            precip_level: 60.0,
            precip_river_sd: 0.3,
            precip_amplitude: 0.4,
            precip_peak_month: 10,
            precip_noise_sd: 0.1,
            coefficients: CoefficientSource::Fixed,
            truth: TrueParams::default(),
        }
    }
}

impl SynthSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_stations == 0 || self.years == 0 {
            return Err(Error::Config("synth.n_stations and synth.years must be positive".into()));
        }
        let t = &self.truth;
        let k = t.beta.len();
        if k != 3 || t.alpha.len() != k || t.psi.len() != k || t.phi.len() != k {
            return Err(Error::Config(
                "synth.truth needs three entries (intercept, log area, log precipitation) in beta, alpha, psi and phi"
                    .into(),
            ));
        }
        if t.psi.iter().chain(&t.phi).any(|v| !(*v >= 0.0)) || !(t.sigma_eta >= 0.0 && t.sigma_tau >= 0.0) {
            return Err(Error::Config("synth.truth standard deviations must be nonnegative".into()));
        }
        if !(self.precip_level > 0.0) || self.precip_peak_month == 0 || self.precip_peak_month > self.months {
            return Err(Error::Config("synth precipitation settings out of range".into()));
        }
        Ok(())
    }
}

/// Generating values of every latent quantity. Per-cell vectors are
/// river-major; seasonal effects are indexed `k * M + m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub stations: Vec<String>,
    pub months: usize,
    pub params: TrueParams,
    pub beta_star: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub eta: Vec<f64>,
    pub tau: Vec<f64>,
    /// Flows redrawn because the Gumbel draw was not positive.
    pub redrawn: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub observations: ObservationTable,
    pub covariates: Vec<RawCovariateRow>,
    pub truth: Truth,
}

impl SyntheticData {
    /// Writes `observations.csv`, `covariates.csv` and `truth.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_observations(&dir.join("observations.csv"), &self.observations)?;
        write_covariates(&dir.join("covariates.csv"), &self.covariates)?;
        let path = dir.join("truth.json");
        let json = serde_json::to_string_pretty(&self.truth).map_err(|e| Error::Other(e.to_string()))?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn read_truth(path: &Path) -> Result<Truth> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn station_name(j: usize) -> (String, f64) {
    let (id, area) = CATCHMENTS[j % CATCHMENTS.len()];
    if j < CATCHMENTS.len() {
        (id.to_string(), area)
    } else {
        // Later copies get a distinct name and a shifted area.
        let round = j / CATCHMENTS.len();
        (format!("{id}_{round}"), area * (1.0 + 0.37 * round as f64))
    }
}

/// Draws `sd * x` with `x ~ N(0, Q^-1)`.
fn seasonal_draw<R: Rng + ?Sized>(chol_l: &nalgebra::DMatrix<f64>, sd: f64, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(chol_l.nrows(), |_, _| StandardNormal.sample(rng));
    let x = chol_l.transpose().solve_upper_triangular(&z).expect("positive diagonal");
    x * sd
}

/// Draws a dataset from the model: covariates, coefficients (fixed or
/// partly from the prior), seasonal effects from `N(0, psi^2 Q^-1)`,
/// residuals and finally Gumbel monthly maxima. Nonpositive flows are
/// redrawn and counted in the truth.
pub fn generate_synthetic<R: Rng + ?Sized>(settings: &SynthSettings, rng: &mut R) -> Result<SyntheticData> {
    settings.validate()?;
    let m = settings.months;
    let j_n = settings.n_stations;

    let river_level = Normal::new(settings.precip_level.ln(), settings.precip_river_sd)
        .map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, settings.precip_noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut covariates = Vec::with_capacity(j_n * m);
    let mut stations = Vec::with_capacity(j_n);
    for j in 0..j_n {
        let (id, area) = station_name(j);
        let level = river_level.sample(rng);
        for mm in 1..=m {
            let phase = 2.0 * PI * (mm as f64 - settings.precip_peak_month as f64) / m as f64;
            let lp = level + settings.precip_amplitude * phase.cos() + noise.sample(rng);
            covariates.push(RawCovariateRow {
                station_id: id.clone(),
                month: mm,
                area_km2: area,
                max_daily_precip: lp.exp(),
            });
        }
        stations.push(id);
    }
    let (table, _) = center_log_covariates(&covariates, m)?;
    let design = build_design(&table)?;
    let sp = seasonal_precision(settings.kappa, m)?;
    let chol = sp
        .q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("seasonal precision".into()))?;
    let l = chol.l();

    let mut params = settings.truth.clone();
    if settings.coefficients == CoefficientSource::Prior {
        let slope = PriorSettings::default().slope;
        let d = Normal::new(slope.mean, slope.sd).map_err(|e| Error::Config(e.to_string()))?;
        for k in 1..params.beta.len() {
            params.beta[k] = d.sample(rng);
            params.alpha[k] = d.sample(rng);
        }
    }
    let k_n = params.beta.len();
    let mut beta_star = DVector::zeros(k_n * m);
    let mut alpha_star = DVector::zeros(k_n * m);
    for k in 0..k_n {
        beta_star.rows_mut(k * m, m).copy_from(&seasonal_draw(&l, params.psi[k], rng));
        alpha_star.rows_mut(k * m, m).copy_from(&seasonal_draw(&l, params.phi[k], rng));
    }
    let beta = DVector::from_vec(params.beta.clone());
    let alpha = DVector::from_vec(params.alpha.clone());
    let mut eta = design.linear_predictor(&beta, &beta_star);
    let mut tau = design.linear_predictor(&alpha, &alpha_star);
    for c in 0..eta.len() {
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        eta[c] += params.sigma_eta * e1;
        tau[c] += params.sigma_tau * e2;
    }

    let mut records = Vec::with_capacity(j_n * m * settings.years);
    let mut redrawn = 0;
    for (j, id) in stations.iter().enumerate() {
        for t in 0..settings.years {
            for mm in 0..m {
                let c = j * m + mm;
                let g = GumbelParams::new(eta[c].exp(), tau[c].exp())?;
                let mut y = gumbel_draw(&g, rng);
                let mut tries = 0;
                while y <= 0.0 {
                    tries += 1;
                    if tries > MAX_REDRAWS {
                        return Err(Error::DegenerateSample(format!(
                            "cell {id} month {} keeps producing nonpositive flows",
                            mm + 1
                        )));
                    }
                    redrawn += 1;
                    y = gumbel_draw(&g, rng);
                }
                records.push(ObservationRecord {
                    station_id: id.clone(),
                    year: settings.first_year + t as i32,
                    month: mm + 1,
                    flow: y,
                });
            }
        }
    }
    if redrawn > 0 {
        log::warn!("synthetic generator redrew {redrawn} nonpositive flows");
    }
    Ok(SyntheticData {
        observations: ObservationTable::new(records)?,
        covariates,
        truth: Truth {
            stations,
            months: m,
            params,
            beta_star: beta_star.iter().copied().collect(),
            alpha_star: alpha_star.iter().copied().collect(),
            eta: eta.iter().copied().collect(),
            tau: tau.iter().copied().collect(),
            redrawn,
        },
    })
}
