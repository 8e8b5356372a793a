use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seeds::{self, Stream};
use crate::state::LatentState;

use super::poor::data_poor_step;
use super::rich::{cell_streams, data_rich_step};
use super::{initialize_state, Model, SamplerConfig};

const HYPER_STEP_BOUNDS: (f64, f64) = (1e-3, 3.0);

/// Column layout of a flattened draw:
/// `beta_k`, `beta_star_k_m`, `alpha_k`, `alpha_star_k_m`, `psi_k`, `phi_k`,
/// `sigma_eta`, `sigma_tau`, `eta_j_m`, `tau_j_m`. Covariate indices `k`
/// start at 0; station indices `j` and months `m` start at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_coef: usize,
    pub months: usize,
    pub n_stations: usize,
}

impl Layout {
    pub fn n_cells(&self) -> usize {
        self.n_stations * self.months
    }

    fn star(&self) -> usize {
        self.n_coef * self.months
    }

    pub fn beta(&self) -> usize {
        0
    }
    pub fn beta_star(&self) -> usize {
        self.n_coef
    }
    pub fn alpha(&self) -> usize {
        self.beta_star() + self.star()
    }
    pub fn alpha_star(&self) -> usize {
        self.alpha() + self.n_coef
    }
    pub fn psi(&self) -> usize {
        self.alpha_star() + self.star()
    }
    pub fn phi(&self) -> usize {
        self.psi() + self.n_coef
    }
    pub fn sigma_eta(&self) -> usize {
        self.phi() + self.n_coef
    }
    pub fn sigma_tau(&self) -> usize {
        self.sigma_eta() + 1
    }
    pub fn eta(&self) -> usize {
        self.sigma_tau() + 1
    }
    pub fn tau(&self) -> usize {
        self.eta() + self.n_cells()
    }
    pub fn width(&self) -> usize {
        self.tau() + self.n_cells()
    }

    pub fn columns(&self) -> Vec<String> {
        let mut c = Vec::with_capacity(self.width());
        let coef = |c: &mut Vec<String>, name: &str| {
            c.extend((0..self.n_coef).map(|k| format!("{name}_{k}")));
        };
        let star = |c: &mut Vec<String>, name: &str| {
            for k in 0..self.n_coef {
                c.extend((1..=self.months).map(|m| format!("{name}_{k}_{m}")));
            }
        };
        let cells = |c: &mut Vec<String>, name: &str| {
            for j in 1..=self.n_stations {
                c.extend((1..=self.months).map(|m| format!("{name}_{j}_{m}")));
            }
        };
        coef(&mut c, "beta");
        star(&mut c, "beta_star");
        coef(&mut c, "alpha");
        star(&mut c, "alpha_star");
        coef(&mut c, "psi");
        coef(&mut c, "phi");
        c.push("sigma_eta".into());
        c.push("sigma_tau".into());
        cells(&mut c, "eta");
        cells(&mut c, "tau");
        c
    }

    /// Inverse of the column names for a given header.
    pub fn infer(columns: &[String]) -> Result<Self> {
        let count = |prefix: &str| {
            columns
                .iter()
                .filter(|c| {
                    c.strip_prefix(prefix)
                        .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|ch| ch.is_ascii_digit()))
                })
                .count()
        };
        let n_coef = count("beta_");
        let n_star = columns.iter().filter(|c| c.starts_with("beta_star_")).count();
        let n_eta = columns.iter().filter(|c| c.starts_with("eta_")).count();
        if n_coef == 0 || n_star % n_coef != 0 {
            return Err(Error::Dimension("cannot infer layout from sample columns".into()));
        }
        let months = n_star / n_coef;
        if months == 0 || n_eta % months != 0 {
            return Err(Error::Dimension("cannot infer layout from sample columns".into()));
        }
        let layout = Layout {
            n_coef,
            months,
            n_stations: n_eta / months,
        };
        if layout.columns() != columns {
            return Err(Error::Dimension("sample columns do not follow the expected layout".into()));
        }
        Ok(layout)
    }

    pub fn flatten(&self, s: &LatentState, out: &mut Vec<f64>) {
        out.extend(s.beta.iter());
        out.extend(s.beta_star.iter());
        out.extend(s.alpha.iter());
        out.extend(s.alpha_star.iter());
        out.extend(s.psi.iter());
        out.extend(s.phi.iter());
        out.push(s.sigma_eta);
        out.push(s.sigma_tau);
        out.extend(s.eta.iter());
        out.extend(s.tau.iter());
    }

    pub fn unflatten(&self, row: &[f64]) -> LatentState {
        let v = |start: usize, len: usize| DVector::from_column_slice(&row[start..start + len]);
        LatentState {
            beta: v(self.beta(), self.n_coef),
            beta_star: v(self.beta_star(), self.star()),
            alpha: v(self.alpha(), self.n_coef),
            alpha_star: v(self.alpha_star(), self.star()),
            psi: v(self.psi(), self.n_coef),
            phi: v(self.phi(), self.n_coef),
            sigma_eta: row[self.sigma_eta()],
            sigma_tau: row[self.sigma_tau()],
            eta: v(self.eta(), self.n_cells()),
            tau: v(self.tau(), self.n_cells()),
        }
    }
}

/// Retained draws and acceptance statistics of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    pub seed: u64,
    /// Row-major draws, `layout.width()` values per draw.
    pub draws: Vec<f64>,
    pub accept_rich: f64,
    pub accept_hyper: [f64; 2],
    pub cholesky_failures: usize,
    pub rich_scale: f64,
    pub hyper_steps: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub layout: Layout,
    pub columns: Vec<String>,
    pub stations: Vec<String>,
    pub chains: Vec<ChainSamples>,
}

impl PosteriorSamples {
    pub fn n_draws(&self, chain: usize) -> usize {
        self.chains[chain].draws.len() / self.layout.width()
    }

    pub fn total_draws(&self) -> usize {
        (0..self.chains.len()).map(|c| self.n_draws(c)).sum()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn draw(&self, chain: usize, i: usize) -> &[f64] {
        let w = self.layout.width();
        &self.chains[chain].draws[i * w..(i + 1) * w]
    }

    /// All draws across chains in chain order.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.chains
            .iter()
            .flat_map(move |c| c.draws.chunks_exact(self.layout.width()))
    }

    pub fn chain_column(&self, chain: usize, col: usize) -> Vec<f64> {
        self.chains[chain]
            .draws
            .chunks_exact(self.layout.width())
            .map(|r| r[col])
            .collect()
    }

    /// Per-chain traces of a column.
    pub fn traces(&self, col: usize) -> Vec<Vec<f64>> {
        (0..self.chains.len()).map(|c| self.chain_column(c, col)).collect()
    }

    pub fn write_chain_csv(&self, chain: usize, path: &Path, provenance: &str) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(path, e);
        writeln!(w, "# seed={} {provenance}", self.chains[chain].seed).map_err(io)?;
        writeln!(w, "# stations={}", self.stations.join(";")).map_err(io)?;
        writeln!(w, "{}", self.columns.join(",")).map_err(io)?;
        let mut line = String::new();
        for row in self.chains[chain].draws.chunks_exact(self.layout.width()) {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    /// Reads chain files written by [`Self::write_chain_csv`]; acceptance
    /// statistics are not stored and come back as NaN.
    pub fn read_csv(paths: &[impl AsRef<Path>]) -> Result<Self> {
        let mut chains = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut stations = Vec::new();
        for p in paths {
            let path = p.as_ref();
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut seed = 0;
            let mut header: Option<Vec<String>> = None;
            let mut draws = Vec::new();
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                let row_err = |message: String| Error::Row {
                    path: path.to_path_buf(),
                    row: i + 1,
                    message,
                };
                if let Some(comment) = line.strip_prefix('#') {
                    for tok in comment.split_whitespace() {
                        if let Some(v) = tok.strip_prefix("seed=") {
                            seed = v.parse().map_err(|_| row_err(format!("bad seed {v}")))?;
                        } else if let Some(v) = tok.strip_prefix("stations=") {
                            stations = v.split(';').map(str::to_string).collect();
                        }
                    }
                    continue;
                }
                match &header {
                    None => header = Some(line.split(',').map(str::to_string).collect()),
                    Some(h) => {
                        let before = draws.len();
                        for tok in line.split(',') {
                            draws.push(
                                tok.parse::<f64>()
                                    .map_err(|_| row_err(format!("bad number {tok:?}")))?,
                            );
                        }
                        if draws.len() - before != h.len() {
                            return Err(row_err("wrong number of fields".into()));
                        }
                    }
                }
            }
            let header = header.ok_or_else(|| Error::Other(format!("{}: empty sample file", path.display())))?;
            match &columns {
                None => columns = Some(header),
                Some(c) if *c != header => {
                    return Err(Error::Dimension(format!("{}: columns differ between chains", path.display())))
                }
                _ => {}
            }
            chains.push(ChainSamples {
                seed,
                draws,
                accept_rich: f64::NAN,
                accept_hyper: [f64::NAN; 2],
                cholesky_failures: 0,
                rich_scale: f64::NAN,
                hyper_steps: [f64::NAN; 2],
            });
        }
        let columns = columns.ok_or_else(|| Error::Other("no sample files".into()))?;
        let layout = Layout::infer(&columns)?;
        if stations.len() != layout.n_stations {
            stations = (1..=layout.n_stations).map(|j| j.to_string()).collect();
        }
        Ok(Self {
            layout,
            columns,
            stations,
            chains,
        })
    }
}

/// Mutable sampler state of one chain between sweeps.
#[derive(Debug, Clone)]
pub struct SweepState {
    pub state: LatentState,
    pub cell_streams: Vec<seeds::Rng>,
    pub rng: seeds::Rng,
    pub rich_scale: f64,
    pub hyper_steps: [f64; 2],
}

impl SweepState {
    pub fn new(model: &Model, cfg: &SamplerConfig, chain_seed: u64) -> Self {
        Self {
            state: initialize_state(model),
            cell_streams: cell_streams(chain_seed, model.n_cells()),
            rng: seeds::rng_from_seed(chain_seed),
            rich_scale: 1.0,
            hyper_steps: [cfg.rw_step_hyper; 2],
        }
    }
}

fn robbins_monro(log_value: f64, accept: f64, target: f64, iter: usize, bounds: (f64, f64)) -> f64 {
    let gain = 1.0 / ((iter + 1) as f64).powf(0.6);
    (log_value + gain * (accept - target)).clamp(bounds.0.ln(), bounds.1.ln())
}

/// Runs one chain from its seed.
pub fn run_chain(model: &Model, cfg: &SamplerConfig, chain_seed: u64) -> Result<ChainSamples> {
    cfg.validate()?;
    let layout = Layout {
        n_coef: model.n_coef(),
        months: model.months(),
        n_stations: model.design.n_stations,
    };
    let mut sw = SweepState::new(model, cfg, chain_seed);
    let mut draws = Vec::with_capacity(cfg.n_retained() * layout.width());
    let (mut rich_acc, mut rich_n) = (0usize, 0usize);
    let mut hyper_acc = [0usize; 2];
    let mut kept_sweeps = 0usize;
    let mut chol_fail = 0;
    let observed_cells = model.cells.values.iter().filter(|c| !c.is_empty()).count();

    for it in 0..cfg.n_iter {
        let flags = data_rich_step(&mut sw.state, model, &mut sw.cell_streams, sw.rich_scale);
        let hs = data_poor_step(&mut sw.state, model, sw.hyper_steps, &mut sw.rng).map_err(|e| match e {
            Error::NotPositiveDefinite(d) => Error::NonFinite {
                iteration: it,
                detail: d,
            },
            other => other,
        })?;
        chol_fail += hs.cholesky_failures;
        if let Some(detail) = sw.state.first_non_finite() {
            return Err(Error::NonFinite { iteration: it, detail });
        }
        let n_acc = flags
            .iter()
            .zip(&model.cells.values)
            .filter(|(a, c)| **a && !c.is_empty())
            .count();
        if it < cfg.n_burnin {
            if cfg.adapt {
                for s in 0..2 {
                    let a = if hs.accepted[s] { 1.0 } else { 0.0 };
                    sw.hyper_steps[s] =
                        robbins_monro(sw.hyper_steps[s].ln(), a, cfg.target_accept_hyper, it, HYPER_STEP_BOUNDS).exp();
                }
            }
            continue;
        }
        rich_acc += n_acc;
        rich_n += observed_cells;
        kept_sweeps += 1;
        for (n, acc) in hyper_acc.iter_mut().zip(hs.accepted) {
            *n += usize::from(acc);
        }
        if (it - cfg.n_burnin).is_multiple_of(cfg.thin) {
            layout.flatten(&sw.state, &mut draws);
        }
    }
    let accept_rich = if rich_n > 0 { rich_acc as f64 / rich_n as f64 } else { f64::NAN };
    if accept_rich < cfg.target_accept_rich {
        log::warn!(
            "chain seed {chain_seed}: data-rich acceptance {accept_rich:.3} below {}",
            cfg.target_accept_rich
        );
    }
    Ok(ChainSamples {
        seed: chain_seed,
        draws,
        accept_rich,
        accept_hyper: hyper_acc.map(|a| a as f64 / kept_sweeps as f64),
        cholesky_failures: chol_fail,
        rich_scale: sw.rich_scale,
        hyper_steps: sw.hyper_steps,
    })
}

/// Runs `cfg.n_chains` chains concurrently, chain `c` seeded from the
/// master seed with substream index `c`.
pub fn run_chains(model: &Model, cfg: &SamplerConfig, stations: &[String]) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let layout = Layout {
        n_coef: model.n_coef(),
        months: model.months(),
        n_stations: model.design.n_stations,
    };
    let chains = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(model, cfg, seeds::derive_seed(cfg.seed, Stream::Chain, c as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSamples {
        layout,
        columns: layout.columns(),
        stations: stations.to_vec(),
        chains,
    })
}
