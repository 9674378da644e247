//! One-port reflection model of a resonator coupled to a feedline.
//!
//! The measured reflection is
//!
//! ```text
//! S11(f) = A · exp(i(τ·f + θ)) · (1 − (2Q/Q_ext)·exp(iφ) / (1 + 2jQ·(f − f_r)/f_r))
//! ```
//!
//! with τ the cable delay applied to the absolute frequency and θ a constant
//! background phase (θ = 0 recovers the bare delay form).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{ensure_finite, Error, Result};

/// Parameters of the reflection model. `q_int` is derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceParams {
    /// Resonant frequency, Hz.
    pub f_r: f64,
    /// Total (loaded) quality factor.
    pub q_total: f64,
    /// External (coupling) quality factor.
    pub q_ext: f64,
    /// Impedance-mismatch angle, rad.
    pub phi: f64,
    /// Background magnitude.
    pub amplitude: f64,
    /// Cable delay τ, s.
    pub delay: f64,
    /// Constant background phase θ, rad.
    #[serde(default)]
    pub phase: f64,
}

impl ResonanceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("f_r", self.f_r),
            ("q_total", self.q_total),
            ("q_ext", self.q_ext),
            ("phi", self.phi),
            ("amplitude", self.amplitude),
            ("delay", self.delay),
            ("phase", self.phase),
        ] {
            ensure_finite(name, v)?;
        }
        for (name, v) in [
            ("f_r", self.f_r),
            ("q_total", self.q_total),
            ("q_ext", self.q_ext),
            ("amplitude", self.amplitude),
        ] {
            if v <= 0.0 {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Internal quality factor from 1/Q_int = 1/Q − cos φ / Q_ext.
    pub fn q_int(&self) -> Result<f64> {
        q_int_from(self.q_total, self.q_ext, self.phi)
    }

    /// Internal loss tangent 1/Q_int.
    pub fn delta_int(&self) -> Result<f64> {
        self.q_int().map(|q| 1.0 / q)
    }

    /// Total loss tangent 1/Q.
    pub fn delta_total(&self) -> f64 {
        1.0 / self.q_total
    }

    /// Full linewidth f_r / Q in Hz.
    pub fn linewidth(&self) -> f64 {
        self.f_r / self.q_total
    }

    /// Builds a parameter set from the internal and external quality factors.
    pub fn from_q_int(f_r: f64, q_int: f64, q_ext: f64, phi: f64) -> Self {
        let q_total = 1.0 / (1.0 / q_int + phi.cos() / q_ext);
        ResonanceParams {
            f_r,
            q_total,
            q_ext,
            phi,
            amplitude: 1.0,
            delay: 0.0,
            phase: 0.0,
        }
    }
}

/// Evaluates the model without validation. Used in fit loops.
#[inline]
pub(crate) fn s11_unchecked(p: &ResonanceParams, f: f64) -> Complex64 {
    let coupling = 2.0 * p.q_total / p.q_ext;
    let detune = Complex64::new(1.0, 2.0 * p.q_total * (f - p.f_r) / p.f_r);
    let resonant = Complex64::from_polar(coupling, p.phi) / detune;
    let background = Complex64::from_polar(p.amplitude, p.delay * f + p.phase);
    background * (1.0 - resonant)
}

/// Complex reflection coefficient at frequency `f` (Hz).
pub fn s11_model(params: &ResonanceParams, f: f64) -> Result<Complex64> {
    ensure_finite("frequency", f)?;
    params.validate()?;
    Ok(s11_unchecked(params, f))
}

/// Partial derivatives of S11 with respect to
/// `[f_r, q_total, q_ext, phi, amplitude, delay, phase]`.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn s11_partials(p: &ResonanceParams, f: f64) -> (Complex64, [Complex64; 7]) {
    let i = Complex64::i();
    let background = Complex64::from_polar(p.amplitude, p.delay * f + p.phase);
    let (s, [d_fr, d_q, d_qe, d_phi]) = resonant_partials(p, f, f - p.f_r, background);
    (s, [d_fr, d_q, d_qe, d_phi, s / p.amplitude, i * f * s, i * s])
}

/// S11 and its derivatives with respect to `[f_r, q_total, q_ext, phi]` for
/// a caller-supplied complex background and detuning `delta_f = f − f_r`.
/// `amplitude`, `delay` and `phase` of `p` are ignored.
#[inline]
pub(crate) fn resonant_partials(
    p: &ResonanceParams,
    f: f64,
    delta_f: f64,
    background: Complex64,
) -> (Complex64, [Complex64; 4]) {
    let i = Complex64::i();
    let coupling = 2.0 * p.q_total / p.q_ext;
    let rel = delta_f / p.f_r;
    let detune = Complex64::new(1.0, 2.0 * p.q_total * rel);
    let k = Complex64::from_polar(coupling, p.phi) / detune;
    let s = background * (1.0 - k);
    let bk = background * k;

    let d_fr = -bk * i * (2.0 * p.q_total * f / (p.f_r * p.f_r)) / detune;
    let d_q = -bk * (1.0 / p.q_total - i * (2.0 * rel) / detune);
    let d_qe = bk / p.q_ext;
    let d_phi = -bk * i;
    (s, [d_fr, d_q, d_qe, d_phi])
}

/// Q_int from 1/Q_int = 1/Q_total − cos(φ)/Q_ext.
pub fn q_int_from(q_total: f64, q_ext: f64, phi: f64) -> Result<f64> {
    ensure_finite("q_total", q_total)?;
    ensure_finite("q_ext", q_ext)?;
    ensure_finite("phi", phi)?;
    if q_total <= 0.0 || q_ext <= 0.0 {
        return Err(Error::Domain(format!(
            "quality factors must be positive (q_total = {q_total}, q_ext = {q_ext})"
        )));
    }
    let inv_total = 1.0 / q_total;
    let coupling = phi.cos() / q_ext;
    let inv_int = inv_total - coupling;
    if inv_int <= 0.0 {
        return Err(Error::UnphysicalFit { inv_total, coupling });
    }
    Ok(1.0 / inv_int)
}

impl PhysicalConstants {
    /// Mean circulating photon number ⟨n⟩ = 2/(π h f²) · Q²/Q_ext · P_in.
    pub fn photon_number(&self, p_in: f64, f_r: f64, q_total: f64, q_ext: f64) -> Result<f64> {
        for (name, v) in [("p_in", p_in), ("f_r", f_r), ("q_total", q_total), ("q_ext", q_ext)] {
            ensure_finite(name, v)?;
        }
        if p_in < 0.0 {
            return Err(Error::Domain(format!("p_in must be non-negative, got {p_in}")));
        }
        if f_r <= 0.0 || q_total <= 0.0 || q_ext <= 0.0 {
            return Err(Error::Domain("f_r, q_total and q_ext must be positive".to_string()));
        }
        let prefactor = 2.0 / (std::f64::consts::PI * self.h * f_r * f_r);
        Ok(prefactor * q_total * q_total / q_ext * p_in)
    }
}

/// [`PhysicalConstants::photon_number`] with CODATA constants. `p_in` is the
/// power delivered at the chip, in W.
pub fn photon_number(p_in: f64, f_r: f64, q_total: f64, q_ext: f64) -> Result<f64> {
    PhysicalConstants::CODATA.photon_number(p_in, f_r, q_total, q_ext)
}

/// Power at the chip (W) from a source level in dBm and the total line
/// attenuation in dB.
pub fn power_chain_attenuation(source_dbm: f64, attenuation_db: f64) -> Result<f64> {
    ensure_finite("source_dbm", source_dbm)?;
    ensure_finite("attenuation_db", attenuation_db)?;
    Ok(dbm_to_watts(source_dbm - attenuation_db))
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

/// A frequency-ordered complex reflection trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTrace {
    freqs: Vec<f64>,
    values: Vec<Complex64>,
    /// Power at the chip, W.
    pub power_in: Option<f64>,
    /// Stage temperature, K.
    pub temperature: Option<f64>,
}

/// Fewest samples accepted by [`ComplexTrace::new`].
pub const MIN_TRACE_POINTS: usize = 7;

impl ComplexTrace {
    pub fn new(freqs: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if freqs.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "frequency and value lengths differ ({} vs {})",
                freqs.len(),
                values.len()
            )));
        }
        if freqs.len() < MIN_TRACE_POINTS {
            return Err(Error::InsufficientPoints {
                needed: MIN_TRACE_POINTS,
                got: freqs.len(),
            });
        }
        for (k, (f, v)) in freqs.iter().zip(&values).enumerate() {
            if !f.is_finite() || !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite sample at index {k}")));
            }
        }
        if let Some(k) = freqs.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "frequencies not strictly increasing at index {}",
                k + 1
            )));
        }
        Ok(ComplexTrace {
            freqs,
            values,
            power_in: None,
            temperature: None,
        })
    }

    /// Samples the model on `freqs`.
    pub fn from_model(params: &ResonanceParams, freqs: Vec<f64>) -> Result<Self> {
        params.validate()?;
        let values = freqs.iter().map(|&f| s11_unchecked(params, f)).collect();
        Self::new(freqs, values)
    }

    pub fn with_power(mut self, p_in: f64) -> Self {
        self.power_in = Some(p_in);
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, Complex64)> + '_ {
        self.freqs.iter().copied().zip(self.values.iter().copied())
    }

    /// Same grid, values replaced through `op`.
    pub fn map_values(&self, mut op: impl FnMut(f64, Complex64) -> Complex64) -> ComplexTrace {
        ComplexTrace {
            freqs: self.freqs.clone(),
            values: self.iter().map(|(f, v)| op(f, v)).collect(),
            power_in: self.power_in,
            temperature: self.temperature,
        }
    }
}

/// Evenly spaced grid of `n` points centred on `center` covering `span`.
pub fn linear_grid(center: f64, span: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let start = center - span / 2.0;
    let step = span / (n - 1) as f64;
    (0..n).map(|k| start + step * k as f64).collect()
}
