//! End-to-end runs: read inputs named in a [`RunConfig`], call the model,
//! write plot-ready CSV files.
//!
//! Every output file starts with a comment line carrying the configuration
//! digest and a digest of the input files, so identical inputs, settings
//! and seed give byte-identical outputs. Output paths are not part of the
//! digest. A lock file keeps concurrent runs out of one directory.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::{load_covariates, load_observations, ObservationTable};
use crate::design::{apply_centering, center_log_covariates, Centering};
use crate::error::{Error, Result};
use crate::predict::{
    cell_fit_report, cross_validate, gof_cells, predictive_quantiles, preliminary_analysis, prob_label,
    PredictiveSummary, PrelimCellFit,
};
use crate::priors::PriorSet;
use crate::sampler::{diagnostics, PosteriorSamples};
use crate::seeds::{self, Stream};
use crate::setup::fit;
use crate::stats::{gaussian_kde, ks_uniform_distance, quantile_in_place};
use crate::synth::generate_synthetic;

pub const LOCK_FILE: &str = ".floodmax.lock";
pub const CENTERING_FILE: &str = "centering.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
/// Draws used for density estimates are thinned to at most this many.
const KDE_MAX_DRAWS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Fit,
    Predict,
    Cv,
    Gof,
    Prelim,
    Synth,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Fit => "fit",
            Mode::Predict => "predict",
            Mode::Cv => "cv",
            Mode::Gof => "gof",
            Mode::Prelim => "prelim",
            Mode::Synth => "synth",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fit" => Mode::Fit,
            "predict" => Mode::Predict,
            "cv" => Mode::Cv,
            "gof" => Mode::Gof,
            "prelim" => Mode::Prelim,
            "synth" => Mode::Synth,
            other => return Err(Error::Config(format!("unknown mode {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub mode: Mode,
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Human-readable remarks such as failed folds or extrapolation.
    pub notes: Vec<String>,
}

struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory {} is in use by another run (remove {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn file_digest(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(&h.finalize()[..8]))
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str, mode: Mode) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("paths.{key} is required for {}", mode.name())))
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn write(&mut self, name: &str, provenance: &str, header: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let text = format!("# {provenance}\n{header}\n{body}");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.files.push(path.clone());
        Ok(path)
    }
}

/// Runs one mode. Inputs are read from `cfg.paths`; outputs go to
/// `cfg.paths.out`.
pub fn run(mode: Mode, cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = required(&cfg.paths.out, "out", mode)?.to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let _lock = DirLock::acquire(&out)?;
    let mut w = Writer {
        dir: out.clone(),
        files: Vec::new(),
    };
    let mut notes = Vec::new();
    match mode {
        Mode::Fit => run_fit(cfg, &mut w, &mut notes)?,
        Mode::Predict => run_predict(cfg, &mut w, &mut notes)?,
        Mode::Cv => run_cv(cfg, &mut w, &mut notes)?,
        Mode::Gof => run_gof(cfg, &mut w, &mut notes)?,
        Mode::Prelim => run_prelim(cfg, &mut w, &mut notes)?,
        Mode::Synth => run_synth(cfg, &mut w)?,
    }
    Ok(RunOutcome {
        mode,
        out_dir: out,
        files: w.files,
        notes,
    })
}

fn inputs(cfg: &RunConfig, mode: Mode) -> Result<(ObservationTable, Vec<crate::design::RawCovariateRow>, String)> {
    let op = required(&cfg.paths.observations, "observations", mode)?;
    let cp = required(&cfg.paths.covariates, "covariates", mode)?;
    let obs = load_observations(op)?;
    let raw = load_covariates(cp)?;
    let prov = format!("config={} data={}", cfg.digest(), file_digest(&[op, cp])?);
    Ok((obs, raw, prov))
}

pub fn chain_file_name(chain: usize) -> String {
    format!("samples_chain{chain}.csv")
}

fn write_centering(w: &mut Writer, c: &Centering, prov: &str) -> Result<()> {
    let mut body = String::new();
    for (k, name) in c.names.iter().enumerate() {
        let (lo, hi) = c.ranges.get(k).copied().unwrap_or((f64::NAN, f64::NAN));
        writeln!(body, "{name},{},{lo},{hi}", c.means[k]).unwrap();
    }
    w.write(CENTERING_FILE, prov, "name,mean,min,max", &body)?;
    Ok(())
}

pub fn read_centering(path: &Path) -> Result<Centering> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut c = Centering {
        names: Vec::new(),
        means: Vec::new(),
        ranges: Vec::new(),
    };
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let num = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Row {
                path: path.to_path_buf(),
                row: i + 1,
                message: format!("bad number {s:?}"),
            })
        };
        if f.len() != 4 {
            return Err(Error::Row {
                path: path.to_path_buf(),
                row: i + 1,
                message: "expected name,mean,min,max".into(),
            });
        }
        c.names.push(f[0].to_string());
        c.means.push(num(f[1])?);
        c.ranges.push((num(f[2])?, num(f[3])?));
    }
    Ok(c)
}

fn write_predictions(w: &mut Writer, s: &PredictiveSummary, prov: &str) -> Result<()> {
    let mut header = String::from("station,month");
    for &q in &s.probs {
        let l = prob_label(q);
        write!(header, ",pred_{l},pred_{l}_lower,pred_{l}_upper").unwrap();
    }
    let mut body = String::new();
    for c in &s.cells {
        write!(body, "{},{}", c.station, c.month).unwrap();
        for q in &c.quantiles {
            write!(body, ",{},{},{}", q.median, q.lower, q.upper).unwrap();
        }
        body.push('\n');
    }
    let prov = format!("{prov} interval={} residuals={}", s.interval, s.residuals);
    w.write(PREDICTIONS_FILE, &prov, &header, &body)?;
    Ok(())
}

/// Digest for prediction files: configuration plus the covariate file, so
/// `fit` and a later `predict` on the training covariates agree.
fn prediction_provenance(cfg: &RunConfig, cov: &Path) -> Result<String> {
    Ok(format!("config={} covariates={}", cfg.digest(), file_digest(&[cov])?))
}

fn prediction_seed(cfg: &RunConfig) -> u64 {
    seeds::derive_seed(cfg.sampler.seed, Stream::Predict, 0)
}

fn summary_body(samples: &PosteriorSamples) -> String {
    let w = samples.layout.width();
    let body: Vec<String> = (0..w)
        .into_par_iter()
        .map(|col| {
            let mut v: Vec<f64> = samples.rows().map(|r| r[col]).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let mut q = |p| quantile_in_place(&mut v, p);
            let (q025, q10, q50, q90, q975) = (q(0.025), q(0.1), q(0.5), q(0.9), q(0.975));
            format!("{},{mean},{q50},{sd},{q10},{q90},{q025},{q975}\n", samples.columns[col])
        })
        .collect();
    body.concat()
}

fn density_files(samples: &PosteriorSamples, priors: &PriorSet, points: usize) -> Vec<(String, String)> {
    let l = samples.layout;
    // (column, prior density, whether the column is on the log scale)
    type Entry = (usize, Box<dyn Fn(f64) -> f64 + Sync>, bool);
    let mut params: Vec<Entry> = Vec::new();
    for k in 0..l.n_coef {
        let (b, a) = (priors.beta[k], priors.alpha[k]);
        params.push((l.beta() + k, Box::new(move |x| b.ln_pdf(x).exp()), false));
        params.push((l.alpha() + k, Box::new(move |x| a.ln_pdf(x).exp()), false));
        let (p, f) = (priors.psi[k], priors.phi[k]);
        params.push((l.psi() + k, Box::new(move |x| p.ln_pdf(x).exp()), true));
        params.push((l.phi() + k, Box::new(move |x| f.ln_pdf(x).exp()), true));
    }
    let (se, st) = (priors.sigma_eta, priors.sigma_tau);
    params.push((l.sigma_eta(), Box::new(move |x| se.ln_pdf(x).exp()), true));
    params.push((l.sigma_tau(), Box::new(move |x| st.ln_pdf(x).exp()), true));
    let total = samples.total_draws();
    let stride = total.div_ceil(KDE_MAX_DRAWS).max(1);
    params
        .par_iter()
        .map(|(col, prior, positive)| {
            let draws: Vec<f64> = samples.rows().step_by(stride).map(|r| r[*col]).collect();
            let lo = draws.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = 0.25 * (hi - lo).max(1e-6);
            let start = if *positive { (lo - pad).max(0.0) } else { lo - pad };
            let end = hi + pad;
            let grid: Vec<f64> = (0..points)
                .map(|i| start + (end - start) * i as f64 / (points - 1) as f64)
                .collect();
            let post = gaussian_kde(&draws, &grid);
            let mut body = String::new();
            for (x, d) in grid.iter().zip(&post) {
                writeln!(body, "{x},{},{d}", prior(*x)).unwrap();
            }
            (samples.columns[*col].clone(), body)
        })
        .collect()
}

fn run_fit(cfg: &RunConfig, w: &mut Writer, notes: &mut Vec<String>) -> Result<()> {
    let (obs, raw, prov) = inputs(cfg, Mode::Fit)?;
    let setup = cfg.setup()?;
    let (prepared, samples) = fit(&obs, &raw, &setup)?;
    for c in 0..samples.chains.len() {
        let path = w.dir.join(chain_file_name(c));
        samples.write_chain_csv(c, &path, &prov)?;
        w.files.push(path);
    }
    let diag = diagnostics(&samples);
    let path = w.dir.join("diagnostics.csv");
    diag.write_csv(&path, &prov)?;
    w.files.push(path);
    let path = w.dir.join("acceptance.csv");
    diag.write_acceptance_csv(&path, &prov)?;
    w.files.push(path);
    for p in &diag.params {
        if p.rhat.is_some_and(|r| r > 1.1) && (p.name.starts_with("beta_") || p.name.starts_with("alpha_")) {
            notes.push(format!("{} has split-Rhat {:.3}", p.name, p.rhat.unwrap()));
        }
    }
    w.write(
        "summary.csv",
        &prov,
        "parameter,mean,median,sd,q10,q90,q025,q975",
        &summary_body(&samples),
    )?;
    write_centering(w, &prepared.centering, &prov)?;
    for (name, body) in density_files(&samples, &prepared.model.priors, cfg.fit.density_points) {
        w.write(&format!("prior_post_density_{name}.csv"), &prov, "x,prior,posterior", &body)?;
    }
    if cfg.fit.ppplots {
        let cells: Vec<(String, usize)> = prepared
            .stations()
            .iter()
            .flat_map(|s| (1..=setup.months).map(move |m| (s.clone(), m)))
            .collect();
        let reports: Vec<_> = cells
            .par_iter()
            .filter_map(|(s, m)| cell_fit_report(&samples, &obs, s, *m).ok())
            .collect();
        for r in reports {
            let mut body = String::new();
            for p in &r.points {
                writeln!(body, "{},{},{},{},{}", p.y, p.empirical, p.model, p.lower, p.upper).unwrap();
            }
            w.write(
                &format!("ppplot_{}_{}.csv", r.station, r.month),
                &prov,
                "flow,empirical_cdf,model_cdf,model_cdf_lower,model_cdf_upper",
                &body,
            )?;
        }
    }
    let pred = predictive_quantiles(&samples, &prepared.table, &cfg.predict, prediction_seed(cfg))?;
    let cov = required(&cfg.paths.covariates, "covariates", Mode::Fit)?;
    write_predictions(w, &pred, &prediction_provenance(cfg, cov)?)?;
    Ok(())
}

fn sample_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(idx) = name
            .strip_prefix("samples_chain")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|r| r.parse().ok())
        {
            found.push((idx, path));
        }
    }
    if found.is_empty() {
        return Err(Error::Config(format!("no sample files in {}", dir.display())));
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn run_predict(cfg: &RunConfig, w: &mut Writer, notes: &mut Vec<String>) -> Result<()> {
    let dir = required(&cfg.paths.samples, "samples", Mode::Predict)?;
    let cov = match &cfg.paths.predict_covariates {
        Some(p) => p.as_path(),
        None => required(&cfg.paths.covariates, "predict_covariates", Mode::Predict)?,
    };
    let samples = PosteriorSamples::read_csv(&sample_files(dir)?)?;
    let centering = read_centering(&dir.join(CENTERING_FILE))?;
    let raw = load_covariates(cov)?;
    let table = apply_centering(&raw, samples.layout.months, &centering)?;
    let mut pred = predictive_quantiles(&samples, &table, &cfg.predict, prediction_seed(cfg))?;
    for (s, m, name) in centering.outside_support(&table) {
        let msg = format!("{s} month {m}: {name} outside the training range");
        log::warn!("{msg}");
        pred.warnings.push(msg);
    }
    notes.extend(pred.warnings.iter().cloned());
    write_predictions(w, &pred, &prediction_provenance(cfg, cov)?)?;
    Ok(())
}

fn run_cv(cfg: &RunConfig, w: &mut Writer, notes: &mut Vec<String>) -> Result<()> {
    let (obs, raw, prov) = inputs(cfg, Mode::Cv)?;
    let report = cross_validate(&obs, &raw, &cfg.setup()?, &cfg.cv_options())?;
    let labels: Vec<String> = report.probs.iter().map(|q| prob_label(*q)).collect();
    let mut header = String::from("month");
    for l in &labels {
        write!(header, ",pred_{l}").unwrap();
    }
    for l in &labels {
        write!(header, ",data_{l}").unwrap();
    }
    header.push_str(",n_points");
    for l in &labels {
        write!(header, ",pred_{l}_lower,pred_{l}_upper").unwrap();
    }
    let mut summary = String::new();
    for f in &report.folds {
        let mut body = String::new();
        let mut points = String::new();
        for c in &f.months {
            write!(body, "{}", c.month).unwrap();
            for q in &c.predicted {
                write!(body, ",{}", q.median).unwrap();
            }
            for o in &c.observed {
                match o {
                    Some(v) => write!(body, ",{v}").unwrap(),
                    None => body.push_str(",NA"),
                }
            }
            write!(body, ",{}", c.n_points).unwrap();
            for q in &c.predicted {
                write!(body, ",{},{}", q.lower, q.upper).unwrap();
            }
            body.push('\n');
            for y in &c.points {
                writeln!(points, "{},{y}", c.month).unwrap();
            }
        }
        let fold_prov = format!("{prov} fold_seed={}", f.seed);
        w.write(&format!("cv_{}.csv", f.station), &fold_prov, &header, &body)?;
        w.write(&format!("cvpoints_{}.csv", f.station), &fold_prov, "month,flow", &points)?;
        writeln!(
            summary,
            "{},ok,{},{},{},{},{}",
            f.station,
            f.rank_correlation.map_or("NA".to_string(), |r| r.to_string()),
            f.training_stations.join(";"),
            f.training_observations,
            f.training_digest,
            f.seed
        )
        .unwrap();
        notes.extend(f.warnings.iter().map(|m| format!("fold {}: {m}", f.station)));
    }
    for (s, e) in &report.failures {
        writeln!(summary, "{s},failed,NA,,,,").unwrap();
        notes.push(format!("fold {s} failed: {e}"));
    }
    w.write(
        "crossval_summary.csv",
        &prov,
        "station,status,rank_correlation,training_stations,training_observations,training_digest,seed",
        &summary,
    )?;
    Ok(())
}

fn gof_body(fits: &[PrelimCellFit]) -> String {
    let mut body = String::new();
    for f in fits {
        writeln!(
            body,
            "{},{},{},{},{},{},{}",
            f.station, f.month, f.n, f.mu, f.sigma, f.ad_statistic, f.ad_p_value
        )
        .unwrap();
    }
    body
}

const GOF_HEADER: &str = "station,month,n,mu,sigma,ad_statistic,ad_p_value";

fn gof_seed(cfg: &RunConfig) -> u64 {
    seeds::derive_seed(cfg.sampler.seed, Stream::Bootstrap, 0)
}

fn run_gof(cfg: &RunConfig, w: &mut Writer, notes: &mut Vec<String>) -> Result<()> {
    let op = required(&cfg.paths.observations, "observations", Mode::Gof)?;
    let obs = load_observations(op)?;
    let prov = format!("config={} data={}", cfg.digest(), file_digest(&[op])?);
    let stations = obs.stations();
    let cells = obs.cells(&stations, cfg.model.months)?;
    let (fits, skipped) = gof_cells(&cells, &stations, &cfg.gof, gof_seed(cfg));
    w.write("gof.csv", &prov, GOF_HEADER, &gof_body(&fits))?;
    let p: Vec<f64> = fits.iter().map(|f| f.ad_p_value).collect();
    let mut hist = String::new();
    for b in 0..10 {
        let (lo, hi) = (b as f64 / 10.0, (b + 1) as f64 / 10.0);
        let n = p.iter().filter(|&&v| v >= lo && (v < hi || (b == 9 && v <= hi))).count();
        writeln!(hist, "{lo},{hi},{n}").unwrap();
    }
    w.write("gof_histogram.csv", &prov, "bin_lower,bin_upper,count", &hist)?;
    let ks = if p.is_empty() { f64::NAN } else { ks_uniform_distance(&p) };
    let below = p.iter().filter(|v| **v < 0.05).count();
    w.write(
        "gof_summary.csv",
        &prov,
        "cells_tested,cells_skipped,ks_distance_to_uniform,p_below_0.05",
        &format!("{},{},{ks},{below}\n", fits.len(), skipped.len()),
    )?;
    notes.extend(skipped.iter().map(|(s, m, r)| format!("{s} month {m} skipped: {r}")));
    Ok(())
}

fn run_prelim(cfg: &RunConfig, w: &mut Writer, notes: &mut Vec<String>) -> Result<()> {
    let (obs, raw, prov) = inputs(cfg, Mode::Prelim)?;
    let (table, _) = center_log_covariates(&raw, cfg.model.months)?;
    let r = preliminary_analysis(&obs, &table, &cfg.gof, gof_seed(cfg))?;
    w.write("prelim_fits.csv", &prov, GOF_HEADER, &gof_body(&r.fits))?;
    let mut body = String::new();
    for (s, m, reason) in &r.skipped {
        writeln!(body, "{s},{m},{reason}").unwrap();
        notes.push(format!("{s} month {m} skipped: {reason}"));
    }
    w.write("prelim_skipped.csv", &prov, "station,month,reason", &body)?;
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
    let mut body = String::new();
    for m in &r.models {
        writeln!(body, "{},{},{},{}", m.response.name(), m.covariates.join(";"), m.aic, join(&m.coefficients)).unwrap();
    }
    w.write("prelim_models.csv", &prov, "response,covariates,aic,coefficients", &body)?;
    let mut body = String::new();
    for s in &r.stepwise {
        writeln!(body, "{},{},{},{},{}", s.response.name(), s.step, s.action, s.covariates.join(";"), s.aic).unwrap();
    }
    w.write("prelim_stepwise.csv", &prov, "response,step,action,covariates,aic", &body)?;
    let mut body = String::new();
    for (a, b, c) in &r.correlations {
        writeln!(body, "{a},{b},{c}").unwrap();
    }
    w.write("prelim_correlations.csv", &prov, "covariate_a,covariate_b,correlation", &body)?;
    Ok(())
}

fn run_synth(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let mut rng = seeds::substream(cfg.sampler.seed, Stream::Synth, 0);
    let data = generate_synthetic(&cfg.synth, &mut rng)?;
    data.write(&w.dir)?;
    for name in ["observations.csv", "covariates.csv", "truth.json"] {
        w.files.push(w.dir.join(name));
    }
    Ok(())
}
