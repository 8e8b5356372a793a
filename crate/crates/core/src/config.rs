//! Run configuration read from TOML. Every key is optional and unknown keys
//! are rejected. Relative paths are resolved against the directory of the
//! configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{DEFAULT_KAPPA, DEFAULT_MONTHS};
use crate::error::{Error, Result};
use crate::predict::{CvOptions, PredictOptions, PrelimOptions};
use crate::priors::{ExponentialPrior, NormalPrior, PriorSettings};
use crate::sampler::SamplerConfig;
use crate::setup::FitSetup;
use crate::synth::SynthSettings;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub observations: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    /// Output directory of the run.
    pub out: Option<PathBuf>,
    /// Directory holding the sample files and centring constants of a
    /// previous fit, read by `predict`.
    pub samples: Option<PathBuf>,
    /// Raw covariates to predict for; defaults to `covariates`.
    pub predict_covariates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kappa: f64,
    pub months: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kappa: DEFAULT_KAPPA,
            months: DEFAULT_MONTHS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalSection {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSection {
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoefficientPriors {
    pub intercept: NormalSection,
    pub slope: NormalSection,
}

impl Default for CoefficientPriors {
    fn default() -> Self {
        PriorSection::default().beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    /// Shared by the location and scale coefficients.
    pub beta: CoefficientPriors,
    pub psi0: RateSection,
    pub psi_slope: RateSection,
    pub sigma: RateSection,
}

impl Default for PriorSection {
    fn default() -> Self {
        let d = PriorSettings::default();
        let n = |p: NormalPrior| NormalSection { mean: p.mean, sd: p.sd };
        let r = |p: ExponentialPrior| RateSection { rate: p.rate };
        Self {
            beta: CoefficientPriors {
                intercept: n(d.intercept),
                slope: n(d.slope),
            },
            psi0: r(d.psi0),
            psi_slope: r(d.psi_slope),
            sigma: r(d.sigma),
        }
    }
}

impl PriorSection {
    pub fn settings(&self) -> Result<PriorSettings> {
        let ctx = |key: &'static str| move |e: Error| Error::Config(format!("prior.{key}: {e}"));
        Ok(PriorSettings {
            intercept: NormalPrior::new(self.beta.intercept.mean, self.beta.intercept.sd)
                .map_err(ctx("beta.intercept"))?,
            slope: NormalPrior::new(self.beta.slope.mean, self.beta.slope.sd).map_err(ctx("beta.slope"))?,
            psi0: ExponentialPrior::new(self.psi0.rate).map_err(ctx("psi0.rate"))?,
            psi_slope: ExponentialPrior::new(self.psi_slope.rate).map_err(ctx("psi_slope.rate"))?,
            sigma: ExponentialPrior::new(self.sigma.rate).map_err(ctx("sigma.rate"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Write PP-plot data for every cell with enough observations.
    pub ppplots: bool,
    /// Grid points of the prior/posterior density files.
    pub density_points: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            ppplots: true,
            density_points: 200,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSection {
    pub allow_high_quantiles: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelSection,
    pub sampler: SamplerConfig,
    pub prior: PriorSection,
    pub fit: FitSection,
    pub predict: PredictOptions,
    pub cv: CvSection,
    pub gof: PrelimOptions,
    pub synth: SynthSettings,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.predict.validate()?;
        self.prior.settings()?;
        if !(self.model.kappa > 0.0) {
            return Err(Error::Config("model.kappa must be positive".into()));
        }
        if self.model.months < 5 {
            return Err(Error::Config("model.months must be at least 5".into()));
        }
        if self.fit.density_points < 2 {
            return Err(Error::Config("fit.density_points must be at least 2".into()));
        }
        Ok(())
    }

    pub fn setup(&self) -> Result<FitSetup> {
        Ok(FitSetup {
            months: self.model.months,
            kappa: self.model.kappa,
            priors: self.prior.settings()?,
            sampler: self.sampler.clone(),
        })
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            predict: self.predict.clone(),
            allow_high_quantiles: self.cv.allow_high_quantiles,
        }
    }

    fn resolve(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.observations,
            &mut p.covariates,
            &mut p.out,
            &mut p.samples,
            &mut p.predict_covariates,
        ] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }

    /// Short digest of every setting that can change results. Paths are
    /// excluded so a run is reproducible from another location; input
    /// contents are hashed separately.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        let text = toml::to_string(&c).expect("configuration serialises");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

/// Reads a configuration file; missing keys take their defaults.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = RunConfig::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.resolve(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}
