//! CSV and JSON interchange formats.
//!
//! Numbers are written with 17 significant digits so that every `f64`
//! survives a write/read cycle unchanged. Indices are zero-based. Parse
//! errors report the 1-based line of the offending record.

use std::fs;
use std::io::Write;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord};
use serde::{de::DeserializeOwned, Serialize};

use crate::bloch::{ControlPulse, TransverseReading};
use crate::distributions::ProbabilityDistribution;
use crate::error::{Error, Result};
use crate::experiment::MeasurementSet;
use crate::greedy::{ControlSet, Method};
use crate::ogra::{SelectionRecord, StopReason};

pub const DISTRIBUTION_HEADER: &[&str] = &["index", "alpha", "p"];
pub const CONTROLS_HEADER: &[&str] = &["index", "u_x", "u_y", "t_f", "method"];
pub const MEASUREMENTS_HEADER: &[&str] = &["control_index", "x", "y"];
pub const SPECTRUM_HEADER: &[&str] = &["index", "eigenvalue"];
pub const TRACE_HEADER: &[&str] = &["iteration", "chosen_index", "objective", "stop_reason"];
pub const RESULT_HEADER: &[&str] = &["index", "alpha", "p_true", "p_recovered"];

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A distribution together with the grid it lives on.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionFile {
    pub alphas: Vec<f64>,
    pub p: ProbabilityDistribution,
}

/// Rows of a reconstruction result; `p_true` is empty when no truth was supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultFile {
    pub alphas: Vec<f64>,
    pub p_true: Option<Vec<f64>>,
    pub p_recovered: Vec<f64>,
}

fn parse_err(row: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        row,
        msg: msg.into(),
    }
}

fn records(input: &str, header: &[&str]) -> Result<Vec<(usize, StringRecord)>> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input.as_bytes());
    let found = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            1,
            format!(
                "expected header '{}', found '{}'",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push((line, rec));
    }
    Ok(out)
}

fn field<'a>(rec: &'a StringRecord, i: usize, row: usize) -> Result<&'a str> {
    rec.get(i)
        .ok_or_else(|| parse_err(row, format!("missing column {i}")))
}

fn float(rec: &StringRecord, i: usize, row: usize) -> Result<f64> {
    let s = field(rec, i, row)?;
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(row, format!("'{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(row, format!("'{s}' is not finite")));
    }
    Ok(v)
}

fn index(rec: &StringRecord, i: usize, row: usize) -> Result<usize> {
    let s = field(rec, i, row)?;
    s.parse()
        .map_err(|_| parse_err(row, format!("'{s}' is not a nonnegative integer")))
}

fn expect_index(rec: &StringRecord, row: usize, expected: usize) -> Result<()> {
    let got = index(rec, 0, row)?;
    if got != expected {
        return Err(parse_err(
            row,
            format!("index {got} out of order, expected {expected}"),
        ));
    }
    Ok(())
}

fn header_line(header: &[&str]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    s
}

pub fn distribution_csv(alphas: &[f64], p: &ProbabilityDistribution) -> Result<String> {
    if alphas.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: alphas.len(),
            actual: p.len(),
        });
    }
    let mut s = header_line(DISTRIBUTION_HEADER);
    for (l, (a, w)) in alphas.iter().zip(p.as_slice()).enumerate() {
        s.push_str(&format!("{l},{},{}\n", fmt_f64(*a), fmt_f64(*w)));
    }
    Ok(s)
}

pub fn parse_distribution(input: &str) -> Result<DistributionFile> {
    let rows = records(input, DISTRIBUTION_HEADER)?;
    if rows.is_empty() {
        return Err(parse_err(1, "distribution has no rows"));
    }
    let mut alphas = Vec::with_capacity(rows.len());
    let mut p = Vec::with_capacity(rows.len());
    for (i, (row, rec)) in rows.iter().enumerate() {
        expect_index(rec, *row, i)?;
        alphas.push(float(rec, 1, *row)?);
        let w = float(rec, 2, *row)?;
        if w < 0.0 {
            return Err(parse_err(*row, format!("negative probability {w}")));
        }
        p.push(w);
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(parse_err(
            rows[0].0,
            "alpha values must be strictly increasing",
        ));
    }
    let last = rows.last().map_or(1, |r| r.0);
    let p = ProbabilityDistribution::new(p).map_err(|e| parse_err(last, e.to_string()))?;
    Ok(DistributionFile { alphas, p })
}

pub fn controls_csv(controls: &ControlSet) -> String {
    let mut s = header_line(CONTROLS_HEADER);
    for (k, u) in controls.pulses.iter().enumerate() {
        s.push_str(&format!(
            "{k},{},{},{},{}\n",
            fmt_f64(u.ux),
            fmt_f64(u.uy),
            fmt_f64(u.tf),
            controls.method.as_str()
        ));
    }
    s
}

pub fn parse_controls(input: &str) -> Result<ControlSet> {
    let rows = records(input, CONTROLS_HEADER)?;
    let mut pulses = Vec::with_capacity(rows.len());
    let mut method: Option<Method> = None;
    for (i, (row, rec)) in rows.iter().enumerate() {
        expect_index(rec, *row, i)?;
        let ux = float(rec, 1, *row)?;
        let uy = float(rec, 2, *row)?;
        let tf = float(rec, 3, *row)?;
        if tf < 0.0 {
            return Err(parse_err(*row, format!("negative duration {tf}")));
        }
        let m: Method = field(rec, 4, *row)?
            .parse()
            .map_err(|e: Error| parse_err(*row, e.to_string()))?;
        match method {
            Some(prev) if prev != m => {
                return Err(parse_err(
                    *row,
                    format!("method {m} differs from {prev} on earlier rows"),
                ))
            }
            _ => method = Some(m),
        }
        pulses.push(ControlPulse::new(ux, uy, tf));
    }
    let method = method.ok_or_else(|| parse_err(1, "control set has no rows"))?;
    Ok(ControlSet { pulses, method })
}

pub fn measurements_csv(ms: &MeasurementSet) -> String {
    let mut s = header_line(MEASUREMENTS_HEADER);
    for (k, r) in ms.readings.iter().enumerate() {
        s.push_str(&format!("{k},{},{}\n", fmt_f64(r.x), fmt_f64(r.y)));
    }
    s
}

pub fn parse_measurements(input: &str) -> Result<MeasurementSet> {
    let rows = records(input, MEASUREMENTS_HEADER)?;
    if rows.is_empty() {
        return Err(parse_err(1, "measurement set has no rows"));
    }
    let readings = rows
        .iter()
        .enumerate()
        .map(|(i, (row, rec))| {
            expect_index(rec, *row, i)?;
            Ok(TransverseReading {
                x: float(rec, 1, *row)?,
                y: float(rec, 2, *row)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MeasurementSet { readings })
}

pub fn spectrum_csv(values: &[f64]) -> String {
    let mut s = header_line(SPECTRUM_HEADER);
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", fmt_f64(*v)));
    }
    s
}

pub fn parse_spectrum(input: &str) -> Result<Vec<f64>> {
    let rows = records(input, SPECTRUM_HEADER)?;
    let values: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, (row, rec))| {
            expect_index(rec, *row, i)?;
            float(rec, 1, *row)
        })
        .collect::<Result<_>>()?;
    if let Some(i) = values.windows(2).position(|w| w[0] < w[1]) {
        return Err(parse_err(
            rows[i + 1].0,
            "eigenvalues must be in descending order",
        ));
    }
    Ok(values)
}

pub fn trace_csv(trace: &[SelectionRecord]) -> String {
    let mut s = header_line(TRACE_HEADER);
    for r in trace {
        let chosen = r.chosen_index.map(|c| c.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{chosen},{},{}\n",
            r.iteration,
            fmt_f64(r.objective),
            r.stop_reason.as_str()
        ));
    }
    s
}

/// Reads a selection trace; `active_min_eig` is not part of the file and comes back empty.
pub fn parse_trace(input: &str) -> Result<Vec<SelectionRecord>> {
    records(input, TRACE_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, (row, rec))| {
            let iteration = index(rec, 0, *row)?;
            if iteration != i {
                return Err(parse_err(
                    *row,
                    format!("iteration {iteration} out of order, expected {i}"),
                ));
            }
            let chosen_index = match field(rec, 1, *row)? {
                "" => None,
                _ => Some(index(rec, 1, *row)?),
            };
            let objective = float(rec, 2, *row)?;
            let s = field(rec, 3, *row)?;
            let stop_reason = StopReason::parse(s)
                .ok_or_else(|| parse_err(*row, format!("unknown stop reason '{s}'")))?;
            Ok(SelectionRecord {
                iteration,
                chosen_index,
                objective,
                stop_reason,
                active_min_eig: None,
            })
        })
        .collect()
}

pub fn result_csv(result: &ResultFile) -> Result<String> {
    let k = result.alphas.len();
    if result.p_recovered.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: result.p_recovered.len(),
        });
    }
    if let Some(t) = &result.p_true {
        if t.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: t.len(),
            });
        }
    }
    let mut s = header_line(RESULT_HEADER);
    for l in 0..k {
        let truth = result
            .p_true
            .as_ref()
            .map(|t| fmt_f64(t[l]))
            .unwrap_or_default();
        s.push_str(&format!(
            "{l},{},{truth},{}\n",
            fmt_f64(result.alphas[l]),
            fmt_f64(result.p_recovered[l])
        ));
    }
    Ok(s)
}

pub fn parse_result(input: &str) -> Result<ResultFile> {
    let rows = records(input, RESULT_HEADER)?;
    let mut alphas = Vec::with_capacity(rows.len());
    let mut truth: Vec<Option<f64>> = Vec::with_capacity(rows.len());
    let mut p_recovered = Vec::with_capacity(rows.len());
    for (i, (row, rec)) in rows.iter().enumerate() {
        expect_index(rec, *row, i)?;
        alphas.push(float(rec, 1, *row)?);
        truth.push(match field(rec, 2, *row)? {
            "" => None,
            _ => Some(float(rec, 2, *row)?),
        });
        p_recovered.push(float(rec, 3, *row)?);
    }
    let p_true = if truth.iter().all(Option::is_some) && !truth.is_empty() {
        Some(truth.into_iter().flatten().collect())
    } else if truth.iter().all(Option::is_none) {
        None
    } else {
        let row = rows[truth.iter().position(Option::is_none).unwrap_or(0)].0;
        return Err(parse_err(
            row,
            "p_true must be given on every row or on none",
        ));
    };
    Ok(ResultFile {
        alphas,
        p_true,
        p_recovered,
    })
}

/// A square matrix as plain comma-separated rows without a header.
pub fn matrix_csv(m: &nalgebra::DMatrix<f64>) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| fmt_f64(m[(r, c)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_matrix(input: &str) -> Result<nalgebra::DMatrix<f64>> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec
            .map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        rows.push(
            (0..rec.len())
                .map(|i| float(&rec, i, row))
                .collect::<Result<_>>()?,
        );
    }
    let n = rows.len();
    if n == 0 {
        return Err(parse_err(1, "matrix has no rows"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != n) {
        return Err(parse_err(
            i + 1,
            format!(
                "expected {n} columns for a square matrix, found {}",
                rows[i].len()
            ),
        ));
    }
    Ok(nalgebra::DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

pub fn parse_json<T: DeserializeOwned>(input: &str) -> Result<T> {
    Ok(serde_json::from_str(input)?)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes through a temporary file in the same directory, then renames over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}
