//! Two-level-system (TLS) loss and frequency-shift models.
//!
//! * temperature: δ_TLS(T) = F·tanh(h f_r / 2k_B T), with F the participation
//!   weighted intrinsic loss tangent (only the product is observable);
//! * power: δ(⟨n⟩) = δ₀ + δ_TLS / √(1 + (⟨n⟩/n_c)^β);
//! * frequency shift: Δf/f = (F/π)·[Re ψ(½ + i·x/2π) − ln x], x = h f_r / k_B T.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{ensure_finite, Error, Result};
use crate::lsq::{self, weighted_linear_fit, FitConfig, LeastSquaresProblem};
use crate::special::complex_digamma_real_part;

/// Below this saturation exponent the data are inconsistent with a uniform TLS
/// distribution in the standard tunnelling model.
pub const STM_BETA_MIN: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsPowerModel {
    /// Power-independent loss tangent.
    pub delta_0: f64,
    /// Saturable TLS loss tangent at the measurement temperature.
    pub delta_tls: f64,
    /// Photon number at which the TLS loss has dropped by 1/√2.
    pub n_c: f64,
    pub beta: f64,
    /// Temperature at which `delta_tls` applies, K.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_k: Option<f64>,
    /// Resonance frequency the model was measured at, Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_r_hz: Option<f64>,
}

impl TlsPowerModel {
    pub fn new(delta_0: f64, delta_tls: f64, n_c: f64, beta: f64) -> Self {
        TlsPowerModel {
            delta_0,
            delta_tls,
            n_c,
            beta,
            temperature_k: None,
            f_r_hz: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta_0", self.delta_0),
            ("delta_tls", self.delta_tls),
            ("n_c", self.n_c),
            ("beta", self.beta),
        ] {
            ensure_finite(name, v)?;
            if v <= 0.0 {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Loss at mean photon number `n`, at the measurement temperature.
    pub fn loss(&self, n: f64) -> f64 {
        self.delta_0 + self.delta_tls * saturation(n, self.n_c, self.beta)
    }

    /// The loss at ⟨n⟩ = 0 minus the loss as ⟨n⟩ → ∞.
    pub fn saturable_loss(&self) -> f64 {
        self.delta_tls
    }
}

#[inline]
fn saturation(n: f64, n_c: f64, beta: f64) -> f64 {
    1.0 / (1.0 + (n / n_c).powf(beta)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsTempModel {
    /// Participation-weighted TLS loss tangent, p_h·δ⁰_TLS.
    pub amplitude: f64,
    /// Resonance frequency, Hz.
    pub f_r: f64,
}

impl TlsTempModel {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("amplitude", self.amplitude)?;
        ensure_finite("f_r", self.f_r)?;
        if self.amplitude <= 0.0 || self.f_r <= 0.0 {
            return Err(Error::Domain("amplitude and f_r must be positive".to_string()));
        }
        Ok(())
    }
}

fn check_temperature(t: f64) -> Result<()> {
    ensure_finite("temperature", t)?;
    if t <= 0.0 {
        return Err(Error::Domain(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

/// tanh(h f / 2 k_B T).
fn thermal_factor(f_r: f64, t: f64) -> f64 {
    (0.5 * PhysicalConstants::CODATA.reduced_energy(f_r, t)).tanh()
}

/// Low-power TLS loss tangent at temperature `t` (K).
pub fn tls_loss_vs_temperature(model: &TlsTempModel, t: f64) -> Result<f64> {
    check_temperature(t)?;
    Ok(model.amplitude * thermal_factor(model.f_r, t))
}

/// Loss at photon number `n`, temperature `t` (K) and frequency `f_r` (Hz).
///
/// When the model records the temperature its `delta_tls` was measured at,
/// the saturable part is rescaled by the ratio of the tanh thermal factors;
/// otherwise `delta_tls` is taken to apply at `t` as given.
pub fn tls_loss_vs_power(model: &TlsPowerModel, n: f64, t: f64, f_r: f64) -> Result<f64> {
    ensure_finite("photon number", n)?;
    if n < 0.0 {
        return Err(Error::Domain(format!("photon number must be non-negative, got {n}")));
    }
    check_temperature(t)?;
    ensure_finite("f_r", f_r)?;
    if f_r <= 0.0 {
        return Err(Error::Domain(format!("f_r must be positive, got {f_r}")));
    }
    let thermal = match model.temperature_k {
        Some(t_ref) => thermal_factor(f_r, t) / thermal_factor(model.f_r_hz.unwrap_or(f_r), t_ref),
        None => 1.0,
    };
    Ok(model.delta_0 + model.delta_tls * thermal * saturation(n, model.n_c, model.beta))
}

/// Re ψ(½ + i·x/2π) − ln x.
fn shift_kernel(f_r: f64, t: f64) -> Result<f64> {
    let x = PhysicalConstants::CODATA.reduced_energy(f_r, t);
    // ½ − x/(2πj) = ½ + j·x/(2π)
    let z = Complex64::new(0.5, x / (2.0 * std::f64::consts::PI));
    Ok(complex_digamma_real_part(z)? - x.ln())
}

/// Fractional resonance shift Δf_r/f_r at temperature `t` (K).
pub fn freq_shift_vs_temperature(model: &TlsTempModel, t: f64) -> Result<f64> {
    check_temperature(t)?;
    Ok(model.amplitude / std::f64::consts::PI * shift_kernel(model.f_r, t)?)
}

/// A measured (abscissa, value, σ) triple. `sigma` may be absent, in which
/// case all points of a fit get unit weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: f64,
    pub value: f64,
    pub sigma: Option<f64>,
}

impl SweepPoint {
    pub fn new(x: f64, value: f64, sigma: Option<f64>) -> Self {
        SweepPoint { x, value, sigma }
    }
}

/// Returns per-point weights and whether they come from supplied σ.
fn weights(points: &[SweepPoint]) -> Result<(Vec<f64>, bool)> {
    let all = points.iter().all(|p| p.sigma.is_some());
    if all {
        let w = points
            .iter()
            .map(|p| {
                let s = p.sigma.unwrap();
                if s > 0.0 && s.is_finite() {
                    Ok(1.0 / (s * s))
                } else {
                    Err(Error::InvalidInput(format!("sigma must be positive, got {s}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((w, true))
    } else {
        Ok((vec![1.0; points.len()], false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerModelSigmas {
    pub delta_0: f64,
    pub delta_tls: f64,
    pub n_c: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    #[serde(flatten)]
    pub model: TlsPowerModel,
    pub sigmas: PowerModelSigmas,
    /// β̂ below [`STM_BETA_MIN`].
    pub stm_violation_flag: bool,
    /// The saturable loss is not distinguishable from zero.
    pub tls_unresolved_flag: bool,
    pub reduced_chi2: f64,
    pub converged: bool,
}

/// Residuals (model − δ)·√w / scale over `[δ₀/s, δ_TLS/s, log₁₀ n_c, β]`.
struct PowerProblem<'a> {
    log_n: Vec<f64>,
    points: &'a [SweepPoint],
    sqrt_w: Vec<f64>,
    scale: f64,
    log_nc_bounds: (f64, f64),
}

impl LeastSquaresProblem for PowerProblem<'_> {
    fn n_params(&self) -> usize {
        4
    }
    fn n_residuals(&self) -> usize {
        self.points.len()
    }
    fn residuals(&self, x: &[f64], out: &mut [f64]) -> bool {
        let (d0, dt, lnc, beta) = (x[0], x[1], x[2], x[3]);
        if d0 < 0.0 || dt < 0.0 || !(beta > 1e-3 && beta < 20.0) {
            return false;
        }
        if lnc < self.log_nc_bounds.0 || lnc > self.log_nc_bounds.1 {
            return false;
        }
        for (i, p) in self.points.iter().enumerate() {
            let ratio = 10f64.powf(beta * (self.log_n[i] - lnc));
            let model = d0 + dt / (1.0 + ratio).sqrt();
            out[i] = (model - p.value / self.scale) * self.sqrt_w[i];
        }
        true
    }
    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        let (dt, lnc, beta) = (x[1], x[2], x[3]);
        let ln10 = std::f64::consts::LN_10;
        for i in 0..self.points.len() {
            let u = self.log_n[i] - lnc;
            let ratio = 10f64.powf(beta * u);
            let s = 1.0 / (1.0 + ratio).sqrt();
            // d/dr (1+r)^(-1/2) = -½ (1+r)^(-3/2)
            let ds = -0.5 * s * s * s;
            let w = self.sqrt_w[i];
            jac[(i, 0)] = w;
            jac[(i, 1)] = s * w;
            jac[(i, 2)] = dt * ds * ratio * ln10 * (-beta) * w;
            jac[(i, 3)] = dt * ds * ratio * ln10 * u * w;
        }
    }
    fn data_norm(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.sqrt_w)
            .map(|(p, w)| (p.value / self.scale * w).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Weighted fit of the power-saturation model in log-⟨n⟩ space.
///
/// Needs at least five points spanning three decades of photon number. β is
/// free; β̂ < 0.8 raises `stm_violation_flag`.
pub fn fit_power_model(points: &[SweepPoint], t: f64, f_r: f64) -> Result<PowerFit> {
    if points.len() < 5 {
        return Err(Error::InsufficientPoints {
            needed: 5,
            got: points.len(),
        });
    }
    for p in points {
        ensure_finite("photon number", p.x)?;
        ensure_finite("loss", p.value)?;
        if p.x <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "photon numbers must be positive for a log-space fit, got {}",
                p.x
            )));
        }
    }
    let n_min = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let n_max = points.iter().map(|p| p.x).fold(0.0, f64::max);
    if n_max / n_min < 1e3 {
        return Err(Error::InsufficientSpan(format!(
            "photon numbers span {:.2} decades, need 3",
            (n_max / n_min).log10()
        )));
    }
    let (w, known_sigma) = weights(points)?;
    let scale = points.iter().map(|p| p.value.abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::InvalidInput("all losses are zero".to_string()));
    }
    let conditions = |mut m: TlsPowerModel| {
        m.temperature_k = Some(t);
        m.f_r_hz = Some(f_r);
        m
    };

    let values: Vec<f64> = points.iter().map(|p| p.value).collect();
    let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let wsum: f64 = w.iter().sum();
    let mean = values.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() / wsum;

    if vmax - vmin <= 1e-12 * scale {
        let dof = (points.len() - 1) as f64;
        let chi2: f64 = values.iter().zip(&w).map(|(v, w)| w * (v - mean).powi(2)).sum();
        let var = if known_sigma { 1.0 / wsum } else { chi2 / dof / wsum };
        return Ok(PowerFit {
            model: conditions(TlsPowerModel::new(mean, 0.0, (n_min * n_max).sqrt(), 1.0)),
            sigmas: PowerModelSigmas {
                delta_0: var.sqrt(),
                delta_tls: f64::NAN,
                n_c: f64::NAN,
                beta: f64::NAN,
            },
            stm_violation_flag: false,
            tls_unresolved_flag: true,
            reduced_chi2: chi2 / dof,
            converged: true,
        });
    }

    let log_n: Vec<f64> = points.iter().map(|p| p.x.log10()).collect();
    let (lo, hi) = (n_min.log10(), n_max.log10());
    let problem = PowerProblem {
        log_n,
        points,
        // residuals are in units of `scale`; weights must be too
        sqrt_w: w.iter().map(|v| v.sqrt() * scale).collect(),
        scale,
        log_nc_bounds: (lo - 8.0, hi + 8.0),
    };
    // Multi-start over the saturation point and exponent.
    let config = FitConfig {
        max_iter: 500,
        ..FitConfig::default()
    };
    let mut best: Option<lsq::LmReport> = None;
    for frac in [0.1, 0.3, 0.5, 0.7, 0.9] {
        for beta0 in [0.25, 0.5, 1.0] {
            let x0 = [
                vmin.max(0.0) / scale * 0.9,
                (vmax - vmin).max(1e-12 * scale) / scale,
                lo + frac * (hi - lo),
                beta0,
            ];
            let rep = lsq::minimize(&problem, &x0, &config);
            let better = match &best {
                None => true,
                Some(b) => rep.ssr < b.ssr * (1.0 - 1e-12),
            };
            if better && rep.ssr.is_finite() {
                best = Some(rep);
            }
        }
    }
    let rep = best.ok_or_else(|| Error::FitFailed("no feasible start for power model".to_string()))?;
    let dof = (points.len() - 4).max(1) as f64;
    let reduced_chi2 = rep.ssr / dof;
    let cov = if known_sigma {
        rep.unscaled_covariance()
    } else {
        rep.covariance()
    };
    let x = &rep.x;
    let n_c = 10f64.powf(x[2]);
    let sig = |j: usize| cov.as_ref().map_or(f64::NAN, |c| c[(j, j)].max(0.0).sqrt());
    let sigmas = PowerModelSigmas {
        delta_0: sig(0) * scale,
        delta_tls: sig(1) * scale,
        n_c: sig(2) * n_c * std::f64::consts::LN_10,
        beta: sig(3),
    };
    let model = conditions(TlsPowerModel::new(x[0] * scale, x[1] * scale, n_c, x[3]));
    let resolved = model.delta_tls > 2.0 * sigmas.delta_tls;
    Ok(PowerFit {
        stm_violation_flag: model.beta < STM_BETA_MIN,
        tls_unresolved_flag: !resolved,
        model,
        sigmas,
        reduced_chi2,
        converged: rep.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub model: TlsTempModel,
    /// Temperature-independent loss added to the tanh term.
    pub offset: f64,
    pub amplitude_sigma: f64,
    pub offset_sigma: f64,
    /// Data minus model, in the order of the input points.
    pub residuals: Vec<f64>,
}

fn check_temperature_points(points: &[SweepPoint], f_r: f64) -> Result<()> {
    if points.len() < 4 {
        return Err(Error::InsufficientPoints {
            needed: 4,
            got: points.len(),
        });
    }
    ensure_finite("f_r", f_r)?;
    if f_r <= 0.0 {
        return Err(Error::Domain(format!("f_r must be positive, got {f_r}")));
    }
    for p in points {
        check_temperature(p.x)?;
        ensure_finite("value", p.value)?;
    }
    Ok(())
}

/// Fits δ(T) = F·tanh(h f_r / 2k_B T) + δ_offset by weighted linear least squares.
pub fn fit_temperature_model(points: &[SweepPoint], f_r: f64) -> Result<TemperatureFit> {
    check_temperature_points(points, f_r)?;
    let (w, known_sigma) = weights(points)?;
    let n = points.len();
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { thermal_factor(f_r, points[i].x) } else { 1.0 });
    let y: Vec<f64> = points.iter().map(|p| p.value).collect();
    let fit = weighted_linear_fit(&design, &y, &w, !known_sigma)?;
    let residuals = (0..n)
        .map(|i| y[i] - fit.coef[0] * design[(i, 0)] - fit.coef[1])
        .collect();
    Ok(TemperatureFit {
        model: TlsTempModel {
            amplitude: fit.coef[0],
            f_r,
        },
        offset: fit.coef[1],
        amplitude_sigma: fit.covariance[(0, 0)].sqrt(),
        offset_sigma: fit.covariance[(1, 1)].sqrt(),
        residuals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftFit {
    pub model: TlsTempModel,
    pub amplitude_sigma: f64,
    pub residuals: Vec<f64>,
}

/// Fits the digamma frequency-shift curve; only the amplitude is free.
pub fn fit_shift_model(points: &[SweepPoint], f_r: f64) -> Result<ShiftFit> {
    check_temperature_points(points, f_r)?;
    let (w, known_sigma) = weights(points)?;
    let n = points.len();
    let kernel = points
        .iter()
        .map(|p| shift_kernel(f_r, p.x).map(|k| k / std::f64::consts::PI))
        .collect::<Result<Vec<_>>>()?;
    let design = DMatrix::from_fn(n, 1, |i, _| kernel[i]);
    let y: Vec<f64> = points.iter().map(|p| p.value).collect();
    let fit = weighted_linear_fit(&design, &y, &w, !known_sigma)?;
    let residuals = (0..n).map(|i| y[i] - fit.coef[0] * kernel[i]).collect();
    Ok(ShiftFit {
        model: TlsTempModel {
            amplitude: fit.coef[0],
            f_r,
        },
        amplitude_sigma: fit.covariance[(0, 0)].sqrt(),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn saturation_checkpoints() {
        for beta in [0.25, 0.8, 1.0, 1.7] {
            let m = TlsPowerModel::new(3e-7, 7.5e-7, 42.0, beta);
            let v = m.loss(42.0);
            assert!((v - (3e-7 + 7.5e-7 / 2f64.sqrt())).abs() < 1e-12 * v);
            assert_eq!(m.loss(0.0), 3e-7 + 7.5e-7);
        }
        let m = TlsPowerModel::new(1e-7, 1e-6, 10.0, 1.0);
        assert!((m.loss(30.0) - (1e-7 + 0.5e-6)).abs() < 1e-20);
    }

    #[test]
    fn power_formula_with_temperature_rescaling() {
        let mut m = TlsPowerModel::new(1e-7, 1e-6, 10.0, 1.0);
        // without a reference temperature the saturable loss is used as given
        assert_eq!(tls_loss_vs_power(&m, 10.0, 0.5, 6.5e9).unwrap(), m.loss(10.0));
        m.temperature_k = Some(0.01);
        m.f_r_hz = Some(6.5e9);
        let warm = tls_loss_vs_power(&m, 0.0, 0.3, 6.5e9).unwrap();
        let ratio = thermal_factor(6.5e9, 0.3) / thermal_factor(6.5e9, 0.01);
        assert!((warm - (1e-7 + 1e-6 * ratio)).abs() < 1e-20);
        assert!(tls_loss_vs_power(&m, -1.0, 0.1, 6.5e9).is_err());
        assert!(tls_loss_vs_power(&m, 1.0, 0.0, 6.5e9).is_err());
    }

    #[test]
    fn tanh_checkpoints() {
        let model = TlsTempModel {
            amplitude: 2e-6,
            f_r: 6.5e9,
        };
        let c = PhysicalConstants::CODATA;
        let t_star = c.h * 6.5e9 / (2.0 * c.k_b);
        let v = tls_loss_vs_temperature(&model, t_star).unwrap();
        assert!((v / 2e-6 - 0.761_594_155_955_764_9).abs() < 1e-12);
        let cold = tls_loss_vs_temperature(&model, 1e-4).unwrap();
        assert_eq!(cold, 2e-6);
        // 0.1 K vs 1 K
        let r = tls_loss_vs_temperature(&model, 0.1).unwrap() / tls_loss_vs_temperature(&model, 1.0).unwrap();
        assert!((r - 5.916_265_054_212_65).abs() < 1e-12, "{r}");
        assert!(tls_loss_vs_temperature(&model, 0.0).is_err());
        assert!(tls_loss_vs_temperature(&model, -1.0).is_err());
    }

    #[test]
    fn shift_high_temperature_limit() {
        // x → 0: Re ψ(½) − ln x
        let f_r = 6.5e9;
        let t = 1e4;
        let x = PhysicalConstants::CODATA.reduced_energy(f_r, t);
        let k = shift_kernel(f_r, t).unwrap();
        let psi_half = -0.577_215_664_901_532_9 - 2.0 * std::f64::consts::LN_2;
        assert!((k - (psi_half - x.ln())).abs() < 1e-9);
    }

    #[test]
    fn power_fit_exact_recovery() {
        let truth = TlsPowerModel::new(3.1e-7, 7.5e-7, 25.0, 0.9);
        let pts: Vec<SweepPoint> = grid(-1.0, 7.0, 17)
            .into_iter()
            .map(|n| SweepPoint::new(n, truth.loss(n), Some(0.01 * truth.loss(n))))
            .collect();
        let fit = fit_power_model(&pts, 0.01, 6.5e9).unwrap();
        let m = fit.model;
        for (a, b) in [
            (m.delta_0, truth.delta_0),
            (m.delta_tls, truth.delta_tls),
            (m.n_c, truth.n_c),
            (m.beta, truth.beta),
        ] {
            assert!(((a - b) / b).abs() < 1e-6, "{m:?}");
        }
        assert!(!fit.stm_violation_flag);
        assert_eq!(m.temperature_k, Some(0.01));
    }

    #[test]
    fn power_fit_flags_low_beta() {
        let truth = TlsPowerModel::new(2e-7, 1e-6, 5.0, 0.25);
        let pts: Vec<SweepPoint> = grid(-1.0, 8.0, 19)
            .into_iter()
            .map(|n| SweepPoint::new(n, truth.loss(n), None))
            .collect();
        let fit = fit_power_model(&pts, 0.01, 6.5e9).unwrap();
        assert!((fit.model.beta - 0.25).abs() < 1e-6);
        assert!(fit.stm_violation_flag);
    }

    #[test]
    fn power_fit_flat_data() {
        let pts: Vec<SweepPoint> = grid(0.0, 6.0, 7)
            .into_iter()
            .map(|n| SweepPoint::new(n, 4e-7, None))
            .collect();
        let fit = fit_power_model(&pts, 0.01, 6.5e9).unwrap();
        assert!(fit.tls_unresolved_flag);
        assert_eq!(fit.model.delta_tls, 0.0);
        assert!((fit.model.delta_0 - 4e-7).abs() < 1e-20);
    }

    #[test]
    fn power_fit_preconditions() {
        let few: Vec<SweepPoint> = grid(0.0, 6.0, 4)
            .into_iter()
            .map(|n| SweepPoint::new(n, 1e-6, None))
            .collect();
        assert!(matches!(
            fit_power_model(&few, 0.01, 6.5e9),
            Err(Error::InsufficientPoints { .. })
        ));
        let narrow: Vec<SweepPoint> = grid(0.0, 2.0, 8)
            .into_iter()
            .map(|n| SweepPoint::new(n, 1e-6 / n, None))
            .collect();
        assert!(matches!(
            fit_power_model(&narrow, 0.01, 6.5e9),
            Err(Error::InsufficientSpan(_))
        ));
    }

    #[test]
    fn temperature_fit_exact() {
        let model = TlsTempModel {
            amplitude: 1.3e-6,
            f_r: 6.7e9,
        };
        let pts: Vec<SweepPoint> = (0..12)
            .map(|k| {
                let t = 0.02 + 0.05 * k as f64;
                SweepPoint::new(t, tls_loss_vs_temperature(&model, t).unwrap() + 2e-7, None)
            })
            .collect();
        let fit = fit_temperature_model(&pts, 6.7e9).unwrap();
        assert!(((fit.model.amplitude - 1.3e-6) / 1.3e-6).abs() < 1e-9);
        assert!(((fit.offset - 2e-7) / 2e-7).abs() < 1e-8);
    }

    #[test]
    fn shift_fit_exact() {
        let model = TlsTempModel {
            amplitude: 4e-6,
            f_r: 6.5e9,
        };
        let pts: Vec<SweepPoint> = (0..10)
            .map(|k| {
                let t = 0.05 + 0.1 * k as f64;
                SweepPoint::new(t, freq_shift_vs_temperature(&model, t).unwrap(), None)
            })
            .collect();
        let fit = fit_shift_model(&pts, 6.5e9).unwrap();
        assert!(((fit.model.amplitude - 4e-6) / 4e-6).abs() < 1e-12);
        assert!(fit_shift_model(&pts[..3], 6.5e9).is_err());
        let mut bad = pts.clone();
        bad[0].x = 0.0;
        assert!(fit_shift_model(&bad, 6.5e9).is_err());
    }
}
