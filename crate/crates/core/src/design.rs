//! Fixed model structure: centred log covariates, the fixed-effect design
//! `X`, the seasonal random-effect design `Z`, and the circular seasonal
//! precision matrix `Q(kappa)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MONTHS: usize = 12;
pub const DEFAULT_KAPPA: f64 = 1.0;

/// One row of the raw covariate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCovariateRow {
    pub station_id: String,
    pub month: usize,
    pub area_km2: f64,
    pub max_daily_precip: f64,
}

/// Names of the covariate columns, intercept first.
pub const COVARIATE_NAMES: [&str; 3] = ["intercept", "log_area", "log_max_precip"];

/// Grand means subtracted from the log covariates of the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    /// Training range of each log covariate, used to flag extrapolation.
    #[serde(default)]
    pub ranges: Vec<(f64, f64)>,
}

impl Centering {
    /// Names of covariates in `table` whose uncentred values fall outside
    /// the training range.
    pub fn outside_support(&self, table: &CovariateTable) -> Vec<(String, usize, String)> {
        let mut out = Vec::new();
        for (k, &(lo, hi)) in self.ranges.iter().enumerate() {
            for r in 0..table.x.nrows() {
                let v = table.x[(r, k + 1)] + self.means[k];
                if v < lo - 1e-12 || v > hi + 1e-12 {
                    out.push((table.stations[r / table.months].clone(), r % table.months + 1, self.names[k].clone()));
                }
            }
        }
        out
    }
}

/// Covariates per (station, month), rows river-major and month-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    pub stations: Vec<String>,
    pub months: usize,
    pub names: Vec<String>,
    /// `(J*M) x (p+1)` with column 0 equal to one.
    pub x: DMatrix<f64>,
}

impl CovariateTable {
    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    /// Number of covariates excluding the intercept.
    pub fn p(&self) -> usize {
        self.x.ncols() - 1
    }

    pub fn row_index(&self, station: usize, month: usize) -> usize {
        station * self.months + month
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s == id)
    }

    pub fn row(&self, station: usize, month: usize) -> Vec<f64> {
        self.x.row(self.row_index(station, month)).iter().copied().collect()
    }

    /// Table restricted to the given stations, in the given order.
    pub fn select(&self, stations: &[usize]) -> CovariateTable {
        let m = self.months;
        let rows: Vec<usize> = stations
            .iter()
            .flat_map(|&j| (0..m).map(move |mm| j * m + mm))
            .collect();
        CovariateTable {
            stations: stations.iter().map(|&j| self.stations[j].clone()).collect(),
            months: m,
            names: self.names.clone(),
            x: self.x.select_rows(&rows),
        }
    }

    /// Builds a table directly from already-centred covariate columns
    /// (excluding the intercept), river-major order.
    pub fn from_centered(
        stations: Vec<String>,
        months: usize,
        names: Vec<String>,
        columns: &[Vec<f64>],
    ) -> Result<Self> {
        let rows = stations.len() * months;
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Dimension(format!(
                "every covariate column needs {rows} entries"
            )));
        }
        if names.len() != columns.len() + 1 {
            return Err(Error::Dimension("one name per column plus the intercept".into()));
        }
        let x = DMatrix::from_fn(rows, columns.len() + 1, |r, k| {
            if k == 0 {
                1.0
            } else {
                columns[k - 1][r]
            }
        });
        Ok(Self {
            stations,
            months,
            names,
            x,
        })
    }
}

/// Arranges raw rows into a station x month grid of log covariates.
fn log_grid(raw: &[RawCovariateRow], months: usize) -> Result<(Vec<String>, Vec<[f64; 2]>)> {
    let mut stations: Vec<String> = Vec::new();
    for r in raw {
        if !stations.contains(&r.station_id) {
            stations.push(r.station_id.clone());
        }
    }
    let mut cells: Vec<Option<[f64; 2]>> = vec![None; stations.len() * months];
    for (i, r) in raw.iter().enumerate() {
        if r.month == 0 || r.month > months {
            return Err(Error::Domain(format!(
                "covariate row {}: month {} outside 1..={months}",
                i + 1,
                r.month
            )));
        }
        if !(r.area_km2 > 0.0 && r.max_daily_precip > 0.0)
            || !r.area_km2.is_finite()
            || !r.max_daily_precip.is_finite()
        {
            return Err(Error::Domain(format!(
                "covariate row {}: covariates must be positive and finite (station {}, month {})",
                i + 1,
                r.station_id,
                r.month
            )));
        }
        let j = stations.iter().position(|s| s == &r.station_id).unwrap();
        let slot = &mut cells[j * months + r.month - 1];
        if slot.is_some() {
            return Err(Error::Domain(format!(
                "covariate row {}: duplicate entry for station {} month {}",
                i + 1,
                r.station_id,
                r.month
            )));
        }
        *slot = Some([r.area_km2.ln(), r.max_daily_precip.ln()]);
    }
    let mut out = Vec::with_capacity(cells.len());
    for (idx, c) in cells.into_iter().enumerate() {
        match c {
            Some(v) => out.push(v),
            None => {
                return Err(Error::Dimension(format!(
                    "missing covariates for station {} month {}",
                    stations[idx / months],
                    idx % months + 1
                )))
            }
        }
    }
    Ok((stations, out))
}

/// Log-transforms area and precipitation and subtracts their grand means
/// over all (station, month) cells.
pub fn center_log_covariates(
    raw: &[RawCovariateRow],
    months: usize,
) -> Result<(CovariateTable, Centering)> {
    let (stations, grid) = log_grid(raw, months)?;
    let n = grid.len() as f64;
    // Offset by the first cell so a constant column centres to exactly zero.
    let mean_of = |k: usize| grid[0][k] + grid.iter().map(|g| g[k] - grid[0][k]).sum::<f64>() / n;
    let means = vec![mean_of(0), mean_of(1)];
    let range_of = |k: usize| {
        grid.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| (lo.min(g[k]), hi.max(g[k])))
    };
    let centering = Centering {
        names: COVARIATE_NAMES[1..].iter().map(|s| s.to_string()).collect(),
        means,
        ranges: vec![range_of(0), range_of(1)],
    };
    let table = apply_grid(stations, months, &grid, &centering);
    Ok((table, centering))
}

/// Centres new rows with constants stored from a training set.
pub fn apply_centering(
    raw: &[RawCovariateRow],
    months: usize,
    centering: &Centering,
) -> Result<CovariateTable> {
    if centering.means.len() != 2 {
        return Err(Error::Dimension(format!(
            "expected 2 centring constants, got {}",
            centering.means.len()
        )));
    }
    let (stations, grid) = log_grid(raw, months)?;
    Ok(apply_grid(stations, months, &grid, centering))
}

fn apply_grid(
    stations: Vec<String>,
    months: usize,
    grid: &[[f64; 2]],
    centering: &Centering,
) -> CovariateTable {
    let x = DMatrix::from_fn(grid.len(), 3, |r, k| match k {
        0 => 1.0,
        k => grid[r][k - 1] - centering.means[k - 1],
    });
    CovariateTable {
        stations,
        months,
        names: COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
        x,
    }
}

/// `X` and `Z = (Z_0, ..., Z_p)` with `Z_k = diag(X_k)(1_J ⊗ I_M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub n_stations: usize,
    pub months: usize,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl DesignMatrices {
    pub fn n_coef(&self) -> usize {
        self.x.ncols()
    }

    /// Number of latent regression coefficients, `(p+1)(M+1)`.
    pub fn n_latent(&self) -> usize {
        self.x.ncols() + self.z.ncols()
    }

    /// `[X Z]`.
    pub fn full(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.x.nrows(), self.n_latent());
        a.columns_mut(0, self.x.ncols()).copy_from(&self.x);
        a.columns_mut(self.x.ncols(), self.z.ncols()).copy_from(&self.z);
        a
    }

    /// `X b + Z b*`.
    pub fn linear_predictor(&self, coef: &DVector<f64>, star: &DVector<f64>) -> DVector<f64> {
        &self.x * coef + &self.z * star
    }
}

pub fn build_design(c: &CovariateTable) -> Result<DesignMatrices> {
    let m = c.months;
    let j = c.n_stations();
    if c.x.nrows() != j * m {
        return Err(Error::Dimension(format!(
            "covariate table has {} rows, expected J*M = {}",
            c.x.nrows(),
            j * m
        )));
    }
    if c.x.ncols() == 0 || c.x.column(0).iter().any(|&v| v != 1.0) {
        return Err(Error::Dimension("first covariate column must be the intercept".into()));
    }
    let k = c.x.ncols();
    let mut z = DMatrix::zeros(j * m, k * m);
    for r in 0..j * m {
        let month = r % m;
        for kk in 0..k {
            z[(r, kk * m + month)] = c.x[(r, kk)];
        }
    }
    Ok(DesignMatrices {
        n_stations: j,
        months: m,
        x: c.x.clone(),
        z,
    })
}

/// Banded circulant precision with stencil `s * [1, f1, f2, f1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalPrecision {
    pub kappa: f64,
    pub s: f64,
    pub q: DMatrix<f64>,
    /// Eigenvalues of the unscaled circulant, indexed by frequency.
    pub eigenvalues: Vec<f64>,
}

pub fn f1(kappa: f64) -> f64 {
    -2.0 * (kappa * kappa + 2.0)
}

pub fn f2(kappa: f64) -> f64 {
    kappa.powi(4) + 4.0 * kappa * kappa + 6.0
}

pub fn seasonal_precision(kappa: f64, months: usize) -> Result<SeasonalPrecision> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!("kappa must be positive, got {kappa}")));
    }
    if months < 5 {
        return Err(Error::Domain(format!(
            "need at least 5 seasons for the circular stencil, got {months}"
        )));
    }
    let (a1, a2) = (f1(kappa), f2(kappa));
    let mf = months as f64;
    let eigenvalues: Vec<f64> = (0..months)
        .map(|k| {
            let w = 2.0 * PI * k as f64 / mf;
            a2 + 2.0 * a1 * w.cos() + 2.0 * (2.0 * w).cos()
        })
        .collect();
    let s = eigenvalues.iter().map(|l| 1.0 / l).sum::<f64>() / mf;
    let mut q = DMatrix::zeros(months, months);
    for i in 0..months {
        for (off, v) in [(0usize, a2), (1, a1), (2, 1.0)] {
            q[(i, (i + off) % months)] = s * v;
            q[(i, (i + months - off) % months)] = s * v;
        }
    }
    Ok(SeasonalPrecision {
        kappa,
        s,
        q,
        eigenvalues,
    })
}

impl SeasonalPrecision {
    pub fn months(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn log_det(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|l| (self.s * l).ln())
            .sum()
    }

    /// Prior correlation between months `lag` apart.
    pub fn correlation(&self, lag: usize) -> f64 {
        let mf = self.months() as f64;
        self.eigenvalues
            .iter()
            .enumerate()
            .map(|(k, l)| (2.0 * PI * (k * lag) as f64 / mf).cos() / l)
            .sum::<f64>()
            / (mf * self.s)
    }

    /// `x' Q x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        (v.transpose() * &self.q * &v)[(0, 0)]
    }
}
