//! CSV files: measurements in, estimates and trade-off curves out.
//!
//! Locations are one-based in every file; the substation row uses location 0. Floats are
//! written in shortest round-trip form, so reading a file and writing it again
//! reproduces it byte for byte.

use std::io::{Read, Write};
use std::path::Path;

use dpse_core::tradeoff::TradeoffPoint;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementKind {
    Substation,
    Meter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRow {
    pub kind: MeasurementKind,
    pub location: usize,
    pub value: f64,
}

/// Readings in model order: the substation current and one value per meter.
#[derive(Debug, Clone, PartialEq)]
pub struct Readings {
    pub z0: f64,
    pub z: Vec<f64>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn data_err(origin: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{origin}: {msg}"))
}

/// Parses a `kind,location,value` file for a feeder with `n` locations.
pub fn read_measurements<R: Read>(reader: R, n: usize, origin: &str) -> Result<Readings, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| data_err(origin, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["kind", "location", "value"] {
        return Err(data_err(origin, "header must be `kind,location,value`"));
    }
    let mut z0 = None;
    let mut z = vec![None; n];
    let mut rows = 0;
    for (line, rec) in rdr.deserialize::<MeasurementRow>().enumerate() {
        let row = rec.map_err(|e| data_err(origin, e))?;
        let at = line + 2;
        rows += 1;
        if !row.value.is_finite() {
            return Err(data_err(origin, format!("line {at}: value must be finite")));
        }
        match row.kind {
            MeasurementKind::Substation => {
                if row.location != 0 {
                    return Err(data_err(
                        origin,
                        format!("line {at}: the substation row must use location 0"),
                    ));
                }
                if z0.replace(row.value).is_some() {
                    return Err(data_err(origin, format!("line {at}: duplicate substation row")));
                }
            }
            MeasurementKind::Meter => {
                if row.location == 0 || row.location > n {
                    return Err(data_err(
                        origin,
                        format!("line {at}: meter location {} outside 1..={n}", row.location),
                    ));
                }
                if z[row.location - 1].replace(row.value).is_some() {
                    return Err(data_err(origin, format!("line {at}: duplicate meter {}", row.location)));
                }
            }
        }
    }
    if rows != n + 1 {
        return Err(data_err(
            origin,
            format!("expected {} rows (substation + {n} meters), found {rows}", n + 1),
        ));
    }
    let z0 = z0.ok_or_else(|| data_err(origin, "missing substation row"))?;
    let z = z
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| data_err(origin, "missing meter row"))?;
    Ok(Readings { z0, z })
}

pub fn read_measurements_file(path: &Path, n: usize) -> Result<Readings, CliError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_measurements(file, n, &path.display().to_string())
}

pub fn write_measurements<W: Write>(writer: W, readings: &Readings) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.serialize(MeasurementRow {
        kind: MeasurementKind::Substation,
        location: 0,
        value: readings.z0,
    })?;
    for (j, v) in readings.z.iter().enumerate() {
        w.serialize(MeasurementRow {
            kind: MeasurementKind::Meter,
            location: j + 1,
            value: *v,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimator: String,
    pub location: usize,
    pub estimate: f64,
    /// Empty where no closed-form accuracy exists (MAP).
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub total_epsilon: f64,
    pub total_delta: f64,
    pub epsilon_meter: f64,
    pub k_exact: f64,
    pub k_quadratic: f64,
    pub eta: f64,
    pub zeta: f64,
}

impl TradeoffRow {
    pub fn new(p: &TradeoffPoint, eta: f64, zeta: f64) -> Self {
        Self {
            total_epsilon: p.total_epsilon,
            total_delta: p.total_delta,
            epsilon_meter: p.epsilon_meter,
            k_exact: p.k_exact,
            k_quadratic: p.k_quadratic,
            eta,
            zeta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub location: usize,
    pub meter_epsilon: f64,
    pub laplace_scale: f64,
    pub noise_variance: f64,
    pub total_epsilon: f64,
    pub total_delta: f64,
    pub vacuous: bool,
}

pub fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(reader: R) -> csv::Result<Vec<T>> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

pub fn write_rows_to_file<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_rows(std::io::BufWriter::new(file), rows).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}
