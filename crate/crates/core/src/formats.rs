//! Text formats shared by the library and the command-line tool.
//!
//! Raw data is CSV with a fixed header line; structured results are JSON.
//! Numbers are written with the shortest representation that parses back to
//! the same `f64`, so files round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resonance::ComplexTrace;
use crate::tls::SweepPoint;
use crate::trace_fit::FitResult;
use crate::xps::XpsSpectrum;

pub const TRACE_HEADER: [&str; 3] = ["freq_hz", "s11_re", "s11_im"];
pub const XPS_HEADER: [&str; 2] = ["be_ev", "counts"];
pub const ETCH_HEADER: [&str; 2] = ["etch_time_s", "thickness_nm"];

/// Column layouts of the sweep files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// `photon_number,delta_int,sigma`
    Power,
    /// `temperature_k,delta_int,sigma`
    Temperature,
    /// `temperature_k,frac_shift`
    Shift,
}

impl SweepKind {
    /// Required columns, followed by the optional σ column when the kind has one.
    fn columns(self) -> (&'static [&'static str], Option<&'static str>) {
        match self {
            SweepKind::Power => (&["photon_number", "delta_int"], Some("sigma")),
            SweepKind::Temperature => (&["temperature_k", "delta_int"], Some("sigma")),
            SweepKind::Shift => (&["temperature_k", "frac_shift"], None),
        }
    }

    pub fn header(self) -> String {
        let (required, optional) = self.columns();
        let mut cols: Vec<&str> = required.to_vec();
        cols.extend(optional);
        cols.join(",")
    }
}

/// A data row: its 1-based line number and one entry per column, `None`
/// for empty optional fields.
struct Row {
    line: usize,
    fields: Vec<Option<f64>>,
}

/// Parses a headed numeric CSV. The header must list `required` in order,
/// optionally followed by `optional`.
fn parse_table(text: &str, required: &[&str], optional: Option<&str>) -> Result<Vec<Row>> {
    let expected = {
        let mut cols = required.to_vec();
        cols.extend(optional);
        cols.join(",")
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                message: format!("empty file, expected header `{expected}`"),
            })
        }
        Some(r) => r.map_err(csv_error)?,
    };
    let header_line = header.position().map_or(1, |p| p.line() as usize);
    let names: Vec<&str> = header.iter().collect();
    let has_optional = match names.len() {
        n if n == required.len() => false,
        n if optional.is_some() && n == required.len() + 1 => true,
        _ => {
            return Err(Error::Parse {
                line: header_line,
                message: format!("header `{}` does not match `{expected}`", names.join(",")),
            })
        }
    };
    let header_ok = names
        .iter()
        .zip(required.iter().chain(optional.iter()))
        .all(|(a, b)| a == b);
    if !header_ok {
        return Err(Error::Parse {
            line: header_line,
            message: format!("header `{}` does not match `{expected}`", names.join(",")),
        });
    }
    let width = names.len();

    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let mut fields = Vec::with_capacity(width);
        for (k, field) in record.iter().enumerate() {
            if field.is_empty() && has_optional && k == width - 1 {
                fields.push(None);
                continue;
            }
            let value: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: cannot parse `{field}` as a number", names[k]),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column `{}`: non-finite value `{field}`", names[k]),
                });
            }
            fields.push(Some(value));
        }
        rows.push(Row { line, fields });
    }
    Ok(rows)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn parse_trace_csv(text: &str) -> Result<ComplexTrace> {
    let rows = parse_table(text, &TRACE_HEADER, None)?;
    let freqs = rows.iter().map(|r| r.fields[0].unwrap()).collect();
    let values = rows
        .iter()
        .map(|r| Complex64::new(r.fields[1].unwrap(), r.fields[2].unwrap()))
        .collect();
    if let Some(w) = rows.windows(2).find(|w| w[1].fields[0] <= w[0].fields[0]) {
        return Err(Error::Parse {
            line: w[1].line,
            message: "frequencies must be strictly increasing".to_string(),
        });
    }
    ComplexTrace::new(freqs, values)
}

pub fn read_trace_csv(path: &Path) -> Result<ComplexTrace> {
    parse_trace_csv(&read_text(path)?)
}

pub fn write_trace_csv(trace: &ComplexTrace) -> String {
    let mut out = TRACE_HEADER.join(",");
    out.push('\n');
    for (f, v) in trace.iter() {
        let _ = writeln!(out, "{f},{},{}", v.re, v.im);
    }
    out
}

pub fn parse_sweep_csv(text: &str, kind: SweepKind) -> Result<Vec<SweepPoint>> {
    let (required, optional) = kind.columns();
    let rows = parse_table(text, required, optional)?;
    Ok(rows
        .iter()
        .map(|r| {
            SweepPoint::new(
                r.fields[0].unwrap(),
                r.fields[1].unwrap(),
                r.fields.get(2).copied().flatten(),
            )
        })
        .collect())
}

pub fn read_sweep_csv(path: &Path, kind: SweepKind) -> Result<Vec<SweepPoint>> {
    parse_sweep_csv(&read_text(path)?, kind)
}

pub fn write_sweep_csv(points: &[SweepPoint], kind: SweepKind) -> String {
    let mut out = kind.header();
    out.push('\n');
    for p in points {
        match (kind, p.sigma) {
            (SweepKind::Shift, _) => {
                let _ = writeln!(out, "{},{}", p.x, p.value);
            }
            (_, Some(s)) => {
                let _ = writeln!(out, "{},{},{s}", p.x, p.value);
            }
            (_, None) => {
                let _ = writeln!(out, "{},{},", p.x, p.value);
            }
        }
    }
    out
}

pub fn parse_xps_csv(text: &str, element_line: &str) -> Result<XpsSpectrum> {
    let rows = parse_table(text, &XPS_HEADER, None)?;
    if let Some(r) = rows.iter().find(|r| r.fields[1].unwrap() < 0.0) {
        return Err(Error::Parse {
            line: r.line,
            message: "counts must be non-negative".to_string(),
        });
    }
    XpsSpectrum::new(
        rows.iter().map(|r| r.fields[0].unwrap()).collect(),
        rows.iter().map(|r| r.fields[1].unwrap()).collect(),
        element_line,
    )
}

pub fn write_xps_csv(spectrum: &XpsSpectrum) -> String {
    let mut out = XPS_HEADER.join(",");
    out.push('\n');
    for (e, c) in spectrum.binding_energy().iter().zip(spectrum.counts()) {
        let _ = writeln!(out, "{e},{c}");
    }
    out
}

/// (etch time s, thickness nm) pairs.
pub fn parse_etch_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let rows = parse_table(text, &ETCH_HEADER, None)?;
    Ok(rows
        .iter()
        .map(|r| (r.fields[0].unwrap(), r.fields[1].unwrap()))
        .collect())
}

pub fn write_etch_csv(series: &[(f64, f64)]) -> String {
    let mut out = ETCH_HEADER.join(",");
    out.push('\n');
    for (t, d) in series {
        let _ = writeln!(out, "{t},{d}");
    }
    out
}

/// Uncertainties in the trace-fit JSON; `null` where undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSigmasRecord {
    pub f_r_hz: Option<f64>,
    pub q_total: Option<f64>,
    pub q_ext: Option<f64>,
    pub q_int: Option<f64>,
    pub phi_rad: Option<f64>,
    pub amplitude: Option<f64>,
    pub delay_s: Option<f64>,
    pub phase_rad: Option<f64>,
}

/// JSON form of a trace fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResultRecord {
    pub f_r_hz: f64,
    pub q_total: f64,
    pub q_ext: f64,
    /// `null` when the fit is unphysical.
    pub q_int: Option<f64>,
    pub phi_rad: f64,
    pub amplitude: f64,
    pub delay_s: f64,
    pub phase_rad: f64,
    pub delta_int: Option<f64>,
    pub sigmas: FitSigmasRecord,
    pub residual_rms: f64,
    pub converged: bool,
    pub n_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_in_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photon_number: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_int_sigma: Option<f64>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl From<&FitResult> for FitResultRecord {
    fn from(fit: &FitResult) -> Self {
        let p = &fit.params;
        let s = &fit.sigmas;
        FitResultRecord {
            f_r_hz: p.f_r,
            q_total: p.q_total,
            q_ext: p.q_ext,
            q_int: fit.q_int,
            phi_rad: p.phi,
            amplitude: p.amplitude,
            delay_s: p.delay,
            phase_rad: p.phase,
            delta_int: fit.delta_int(),
            sigmas: FitSigmasRecord {
                f_r_hz: finite(s.f_r),
                q_total: finite(s.q_total),
                q_ext: finite(s.q_ext),
                q_int: finite(s.q_int),
                phi_rad: finite(s.phi),
                amplitude: finite(s.amplitude),
                delay_s: finite(s.delay),
                phase_rad: finite(s.phase),
            },
            residual_rms: fit.residual_rms,
            converged: fit.converged,
            n_iter: fit.n_iter,
            power_in_w: None,
            photon_number: None,
            delta_int_sigma: fit.delta_int_sigma().and_then(finite),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}
