//! Observation and covariate tables and their CSV forms.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::RawCovariateRow;
use crate::error::{Error, Result};

pub const OBSERVATION_HEADER: [&str; 4] = ["station_id", "year", "month", "flow"];
pub const COVARIATE_HEADER: [&str; 4] = ["station_id", "month", "area_km2", "max_daily_precip"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub station_id: String,
    pub year: i32,
    pub month: usize,
    pub flow: f64,
}

/// Monthly maximum flows indexed by (station, year, month).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationTable {
    pub records: Vec<ObservationRecord>,
}

/// Observations grouped per river-month cell, river-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellData {
    pub n_stations: usize,
    pub months: usize,
    pub values: Vec<Vec<f64>>,
}

impl CellData {
    pub fn cell(&self, station: usize, month: usize) -> &[f64] {
        &self.values[station * self.months + month]
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn n_observations(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }
}

impl ObservationTable {
    pub fn new(records: Vec<ObservationRecord>) -> Result<Self> {
        let t = Self { records };
        t.validate(None)?;
        Ok(t)
    }

    fn validate(&self, path: Option<&Path>) -> Result<()> {
        let mut seen = HashSet::new();
        let p = path.map(Path::to_path_buf).unwrap_or_default();
        for (i, r) in self.records.iter().enumerate() {
            let row = i + 2;
            let fail = |message: String| Error::Row {
                path: p.clone(),
                row,
                message,
            };
            if !(1..=12).contains(&r.month) {
                return Err(fail(format!("month {} outside 1..=12", r.month)));
            }
            if !(r.flow > 0.0 && r.flow.is_finite()) {
                return Err(fail(format!("flow must be positive, got {}", r.flow)));
            }
            if !seen.insert((r.station_id.as_str(), r.year, r.month)) {
                return Err(fail(format!(
                    "duplicate record for ({}, {}, {})",
                    r.station_id, r.year, r.month
                )));
            }
        }
        Ok(())
    }

    /// Distinct stations in order of first appearance.
    pub fn stations(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.station_id) {
                out.push(r.station_id.clone());
            }
        }
        out
    }

    pub fn station_records<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a ObservationRecord> + 'a {
        self.records.iter().filter(move |r| r.station_id == id)
    }

    /// Table with every record of `id` removed.
    pub fn without_station(&self, id: &str) -> ObservationTable {
        ObservationTable {
            records: self.records.iter().filter(|r| r.station_id != id).cloned().collect(),
        }
    }

    /// Groups flows into cells for the given station order. Records from
    /// stations not listed are an error; listed stations without records
    /// give empty cells.
    pub fn cells(&self, stations: &[String], months: usize) -> Result<CellData> {
        let mut values = vec![Vec::new(); stations.len() * months];
        for r in &self.records {
            let j = stations.iter().position(|s| s == &r.station_id).ok_or_else(|| {
                Error::Dimension(format!("station {} has no covariates", r.station_id))
            })?;
            if r.month > months {
                return Err(Error::Dimension(format!("month {} exceeds {months}", r.month)));
            }
            values[j * months + r.month - 1].push(r.flow);
        }
        Ok(CellData {
            n_stations: stations.len(),
            months,
            values,
        })
    }
}

fn check_header(rdr: &mut csv::Reader<File>, expected: &[&str], path: &Path) -> Result<()> {
    let headers = rdr.headers()?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Row {
            path: path.to_path_buf(),
            row: 1,
            message: format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    check_header(&mut rdr, header, path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize().enumerate() {
        let row = rec.map_err(|e| Error::Row {
            path: path.to_path_buf(),
            row: i + 2,
            message: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

pub fn load_observations(path: &Path) -> Result<ObservationTable> {
    let records: Vec<ObservationRecord> = read_rows(path, &OBSERVATION_HEADER)?;
    let t = ObservationTable { records };
    t.validate(Some(path))?;
    Ok(t)
}

pub fn load_covariates(path: &Path) -> Result<Vec<RawCovariateRow>> {
    let rows: Vec<RawCovariateRow> = read_rows(path, &COVARIATE_HEADER)?;
    for (i, r) in rows.iter().enumerate() {
        if !(r.area_km2 > 0.0 && r.max_daily_precip > 0.0) {
            return Err(Error::Row {
                path: path.to_path_buf(),
                row: i + 2,
                message: "covariates must be positive".into(),
            });
        }
        if !(1..=12).contains(&r.month) {
            return Err(Error::Row {
                path: path.to_path_buf(),
                row: i + 2,
                message: format!("month {} outside 1..=12", r.month),
            });
        }
    }
    Ok(rows)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_observations(path: &Path, t: &ObservationTable) -> Result<()> {
    if t.records.is_empty() {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "{}", OBSERVATION_HEADER.join(",")).map_err(|e| Error::io(path, e))?;
        return Ok(());
    }
    write_rows(path, &t.records)
}

pub fn write_covariates(path: &Path, rows: &[RawCovariateRow]) -> Result<()> {
    write_rows(path, rows)
}
