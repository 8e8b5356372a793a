use nalgebra::DVector;

/// Current values of every latent quantity and hyperparameter.
///
/// `eta` and `tau` are the log-location and log-scale per river-month in
/// river-major order. `beta_star` and `alpha_star` are stacked by
/// covariate: entry `k * M + m` is the seasonal effect of covariate `k` in
/// month `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub eta: DVector<f64>,
    pub tau: DVector<f64>,
    pub beta: DVector<f64>,
    pub beta_star: DVector<f64>,
    pub alpha: DVector<f64>,
    pub alpha_star: DVector<f64>,
    pub psi: DVector<f64>,
    pub phi: DVector<f64>,
    pub sigma_eta: f64,
    pub sigma_tau: f64,
}

impl LatentState {
    pub fn is_finite(&self) -> bool {
        [
            &self.eta,
            &self.tau,
            &self.beta,
            &self.beta_star,
            &self.alpha,
            &self.alpha_star,
            &self.psi,
            &self.phi,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()))
            && self.sigma_eta.is_finite()
            && self.sigma_tau.is_finite()
    }

    /// First offending field, for diagnostics.
    pub fn first_non_finite(&self) -> Option<String> {
        let fields: [(&str, &DVector<f64>); 8] = [
            ("eta", &self.eta),
            ("tau", &self.tau),
            ("beta", &self.beta),
            ("beta_star", &self.beta_star),
            ("alpha", &self.alpha),
            ("alpha_star", &self.alpha_star),
            ("psi", &self.psi),
            ("phi", &self.phi),
        ];
        for (name, v) in fields {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Some(format!("{name}[{i}] = {}", v[i]));
            }
        }
        for (name, v) in [("sigma_eta", self.sigma_eta), ("sigma_tau", self.sigma_tau)] {
            if !v.is_finite() {
                return Some(format!("{name} = {v}"));
            }
        }
        None
    }
}
