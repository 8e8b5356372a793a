use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::PosteriorSamples;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Within-chain variance `W` and between-chain `B / n` for equal-length
/// chains.
fn within_between(chains: &[&[f64]]) -> (f64, f64, usize) {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let w = chains.iter().map(|c| var(&c[..n])).sum::<f64>() / chains.len() as f64;
    let b_over_n = if chains.len() > 1 { var(&means) } else { 0.0 };
    (w, b_over_n, n)
}

/// Split-R̂. Each chain is cut in half and the halves treated as separate
/// chains. Returns `None` when the within-chain variance vanishes or there
/// are too few draws.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        if h < 2 {
            return None;
        }
        halves.push(&c[..h]);
        halves.push(&c[c.len() - h..]);
    }
    if halves.is_empty() {
        return None;
    }
    let (w, b_over_n, n) = within_between(&halves);
    if !(w > 0.0) {
        return None;
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    Some((var_plus / w).sqrt())
}

fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = mean(x);
    let mut s = 0.0;
    for i in 0..n - lag {
        s += (x[i] - m) * (x[i + lag] - m);
    }
    s / n as f64
}

/// Effective sample size over all chains, using the combined-chain
/// autocorrelation estimate truncated by Geyer's initial monotone
/// positive-pair sequence.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> Option<f64> {
    let n = chains.iter().map(|c| c.len()).min()?;
    if n < 4 || chains.is_empty() {
        return None;
    }
    let refs: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let (w, b_over_n, _) = within_between(&refs);
    if !(w > 0.0) {
        return None;
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    let rho = |t: usize| -> f64 {
        let acov = refs.iter().map(|c| autocovariance(c, t)).sum::<f64>() / refs.len() as f64;
        // Chain variance estimates use the n-1 convention, the
        // autocovariances the n convention.
        1.0 - (w * (n as f64 - 1.0) / n as f64 - acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let total = (n * chains.len()) as f64;
    Some(total / tau.max(1.0 / total.log10().max(1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub params: Vec<ParamDiagnostics>,
    /// Per chain: (data-rich acceptance, location hyper, scale hyper,
    /// Cholesky failures).
    pub acceptance: Vec<(f64, f64, f64, usize)>,
}

/// Linear-interpolation sample quantile of sorted data.
pub(crate) fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn diagnostics(samples: &PosteriorSamples) -> DiagnosticsReport {
    let params = samples
        .columns
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let traces = samples.traces(i);
            let mut all: Vec<f64> = traces.iter().flatten().copied().collect();
            let m = mean(&all);
            let sd = if all.len() > 1 { var(&all).sqrt() } else { f64::NAN };
            all.sort_by(|a, b| a.total_cmp(b));
            ParamDiagnostics {
                name: name.clone(),
                mean: m,
                sd,
                q05: sorted_quantile(&all, 0.05),
                q50: sorted_quantile(&all, 0.5),
                q95: sorted_quantile(&all, 0.95),
                rhat: if traces.len() >= 2 { split_rhat(&traces) } else { None },
                ess: effective_sample_size(&traces),
            }
        })
        .collect();
    let acceptance = samples
        .chains
        .iter()
        .map(|c| (c.accept_rich, c.accept_hyper[0], c.accept_hyper[1], c.cholesky_failures))
        .collect();
    DiagnosticsReport { params, acceptance }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl DiagnosticsReport {
    pub fn param(&self, name: &str) -> Option<&ParamDiagnostics> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn write_csv(&self, path: &Path, provenance: &str) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut s = format!("# {provenance}\nparameter,mean,sd,q05,q50,q95,rhat,ess\n");
        for p in &self.params {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                p.name,
                p.mean,
                p.sd,
                p.q05,
                p.q50,
                p.q95,
                fmt_opt(p.rhat),
                fmt_opt(p.ess)
            ));
        }
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn write_acceptance_csv(&self, path: &Path, provenance: &str) -> Result<()> {
        let mut s = format!("# {provenance}\nchain,accept_rich,accept_hyper_location,accept_hyper_scale,cholesky_failures\n");
        for (i, a) in self.acceptance.iter().enumerate() {
            s.push_str(&format!("{},{},{},{},{}\n", i, a.0, a.1, a.2, a.3));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}
