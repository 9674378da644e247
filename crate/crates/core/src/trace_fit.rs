//! Extraction of resonance parameters from measured reflection traces.
//!
//! The pipeline is: estimate the background (amplitude, delay, phase) from the
//! off-resonant wings, normalise, build an initial guess from the dip shape and
//! then refine all seven model parameters jointly with damped least squares on
//! the complex residuals.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::lsq::{self, weighted_linear_fit, FitConfig, LeastSquaresProblem, LmReport};
use crate::resonance::{q_int_from, resonant_partials, ComplexTrace, ResonanceParams};

/// Wings start this many estimated linewidths away from the dip.
const WING_LINEWIDTHS: f64 = 5.0;
/// The wing boundary may move in to this distance to keep enough points.
const MIN_WING_LINEWIDTHS: f64 = 2.0;
/// Minimum fraction of points that must lie in the wings.
const MIN_WING_FRACTION: f64 = 0.1;
/// A dip must be this many noise standard deviations deep.
const DIP_NOISE_FACTOR: f64 = 3.0;

/// Background estimated from the off-resonant part of a trace:
/// `A · exp(i(τ·f + θ))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub amplitude: f64,
    /// τ, s.
    pub delay: f64,
    /// θ wrapped to (−π, π].
    pub phase: f64,
    /// Frequency at which `ref_phase` is the background phase.
    pub ref_freq: f64,
    /// Background phase at `ref_freq` (equals τ·ref_freq + θ modulo 2π).
    pub ref_phase: f64,
}

impl Background {
    pub fn at(&self, f: f64) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.delay * (f - self.ref_freq) + self.ref_phase)
    }
}

#[derive(Debug, Clone)]
pub struct NormalizedTrace {
    pub trace: ComplexTrace,
    pub background: Background,
}

/// Shape of the dip in |S11|².
#[derive(Debug, Clone, Copy)]
struct Dip {
    f_r: f64,
    fwhm: f64,
    min_index: usize,
    baseline_pow: f64,
    min_pow: f64,
}

#[derive(Debug, Clone, Copy)]
enum DipSearch {
    Found(Dip),
    Absent { depth: f64, threshold: f64 },
}

fn moving_average(v: &[f64], half: usize) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Robust per-sample noise from first differences of the magnitude.
fn difference_noise(mags: &[f64]) -> f64 {
    let diffs: Vec<f64> = mags.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    median(diffs) * 1.482_6 / std::f64::consts::SQRT_2
}

fn find_dip(trace: &ComplexTrace) -> Result<DipSearch> {
    let n = trace.len();
    let freqs = trace.freqs();
    let pow: Vec<f64> = trace.values().iter().map(|v| v.norm_sqr()).collect();
    let mags: Vec<f64> = pow.iter().map(|p| p.sqrt()).collect();
    let half = if n >= 50 { 2 } else { 0 };
    let smooth = moving_average(&pow, half);

    let edge = (n / 20).max(2).min(n / 2);
    let edges: Vec<f64> = smooth[..edge].iter().chain(&smooth[n - edge..]).copied().collect();
    let baseline_pow = edges.iter().sum::<f64>() / edges.len() as f64;

    let (min_index, &min_smooth) = smooth
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("trace is non-empty");
    let noise = difference_noise(&mags);
    let depth_mag = baseline_pow.sqrt() - min_smooth.max(0.0).sqrt();
    let threshold = (DIP_NOISE_FACTOR * noise).max(1e-9 * baseline_pow.sqrt());
    if !(depth_mag > threshold) {
        return Ok(DipSearch::Absent {
            depth: depth_mag.max(0.0),
            threshold,
        });
    }

    // Centroid of the plateau within 1% of the deepest point.
    let depth_pow = baseline_pow - min_smooth;
    let (mut wsum, mut fsum) = (0.0, 0.0);
    for (k, s) in smooth.iter().enumerate() {
        if baseline_pow - s >= 0.99 * depth_pow {
            wsum += 1.0;
            fsum += freqs[k];
        }
    }
    let f_r = fsum / wsum;

    let half_level = baseline_pow - 0.5 * depth_pow;
    let cross = |k_in: usize, k_out: usize| -> f64 {
        let (a, b) = (smooth[k_in], smooth[k_out]);
        let t = if b != a { (half_level - a) / (b - a) } else { 0.5 };
        freqs[k_in] + t * (freqs[k_out] - freqs[k_in])
    };
    let mut left = None;
    let mut k = min_index;
    while k > 0 {
        if smooth[k - 1] >= half_level {
            left = Some(cross(k, k - 1));
            break;
        }
        k -= 1;
    }
    let mut right = None;
    let mut k = min_index;
    while k + 1 < n {
        if smooth[k + 1] >= half_level {
            right = Some(cross(k, k + 1));
            break;
        }
        k += 1;
    }
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (f_r - l),
        (None, Some(r)) => 2.0 * (r - f_r),
        (None, None) => {
            return Err(Error::InsufficientSpan(
                "dip half-depth points lie outside the trace".to_string(),
            ))
        }
    };
    if !(fwhm > 0.0) {
        return Err(Error::InsufficientSpan(format!(
            "non-positive linewidth estimate {fwhm}"
        )));
    }
    // Mismatch and over-coupling skew the |S|² dip; the speed along the
    // circle is Lorentzian in detuning regardless, so prefer its width.
    let (f_r, fwhm) = circle_speed_width(trace, fwhm).unwrap_or((f_r, fwhm));
    Ok(DipSearch::Found(Dip {
        f_r,
        fwhm,
        min_index,
        baseline_pow,
        min_pow: pow[min_index],
    }))
}

/// Half-maximum width and centre of |dS/df|, differenced over a stride of
/// about a twentieth of `rough_width`.
fn circle_speed_width(trace: &ComplexTrace, rough_width: f64) -> Option<(f64, f64)> {
    let freqs = trace.freqs();
    let values = trace.values();
    let n = values.len();
    let step = (freqs[n - 1] - freqs[0]) / (n - 1) as f64;
    let stride = ((rough_width / (20.0 * step)).round() as usize).clamp(1, n / 8);
    let re: Vec<f64> = values.iter().map(|v| v.re).collect();
    let im: Vec<f64> = values.iter().map(|v| v.im).collect();
    let (re, im) = (moving_average(&re, stride / 2), moving_average(&im, stride / 2));
    let speed: Vec<f64> = (0..n)
        .map(|k| {
            if k < stride || k + stride >= n {
                return 0.0;
            }
            let dr = re[k + stride] - re[k - stride];
            let di = im[k + stride] - im[k - stride];
            dr.hypot(di)
        })
        .collect();
    let edge = (n / 20).max(stride + 1);
    let floor = median(
        speed[stride..stride + edge]
            .iter()
            .chain(&speed[n - stride - edge..n - stride])
            .copied()
            .collect(),
    );
    let (peak_k, &peak) = speed.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let half = floor + 0.5 * (peak - floor);
    if !(peak > 4.0 * floor) {
        return None;
    }
    let cross = |k_in: usize, k_out: usize| -> f64 {
        let (a, b) = (speed[k_in], speed[k_out]);
        freqs[k_in] + (half - a) / (b - a) * (freqs[k_out] - freqs[k_in])
    };
    let left = (1..=peak_k)
        .rev()
        .find(|&k| speed[k - 1] < half)
        .map(|k| cross(k, k - 1))?;
    let right = (peak_k..n - 1)
        .find(|&k| speed[k + 1] < half)
        .map(|k| cross(k, k + 1))?;
    let width = right - left;
    (width > 0.0).then_some((0.5 * (left + right), width))
}

fn unwrap_phases(values: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut prev = 0.0;
    let mut offset = 0.0;
    for (k, v) in values.iter().enumerate() {
        let a = v.arg();
        if k > 0 {
            let d = a - prev;
            if d > std::f64::consts::PI {
                offset -= 2.0 * std::f64::consts::PI;
            } else if d < -std::f64::consts::PI {
                offset += 2.0 * std::f64::consts::PI;
            }
        }
        prev = a;
        out.push(a + offset);
    }
    out
}

pub(crate) fn wrap_phase(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

struct PhaseFit {
    ref_phase: f64,
    delay: f64,
}

/// Regresses wing phases on a common delay slope with optional tail terms in
/// 1/x and 1/x² (x = 2Q·δf/f_r), which absorb the phase pulled by the
/// resonance far from the dip.
fn fit_wing_phase(
    freqs: &[f64],
    phases: &[f64],
    wing: &[u8],
    f_ref: f64,
    half_span: f64,
    tail_scale: Option<f64>,
) -> Result<PhaseFit> {
    let has_left = wing.contains(&0);
    let has_right = wing.contains(&1);
    let n = freqs.len();
    let mut max_tail = if tail_scale.is_some() { 2 } else { 0 };
    loop {
        let mut cols: Vec<Box<dyn Fn(usize) -> f64>> = Vec::new();
        if has_left {
            cols.push(Box::new(|i| if wing[i] == 0 { 1.0 } else { 0.0 }));
        }
        if has_right {
            cols.push(Box::new(|i| if wing[i] == 1 { 1.0 } else { 0.0 }));
        }
        cols.push(Box::new(|i| (freqs[i] - f_ref) / half_span));
        if let Some(s) = tail_scale {
            for p in 1..=max_tail {
                cols.push(Box::new(move |i| 1.0 / (s * (freqs[i] - f_ref)).powi(p)));
            }
        }
        let ncols = cols.len();
        let design = DMatrix::from_fn(n, ncols, |i, j| cols[j](i));
        match weighted_linear_fit(&design, phases, &vec![1.0; n], false) {
            Ok(fit) => {
                let slope_col = usize::from(has_left) + usize::from(has_right);
                let delay = fit.coef[slope_col] / half_span;
                let ref_phase = match (has_left, has_right) {
                    (true, true) => {
                        let (a, b) = (fit.coef[0], fit.coef[1]);
                        a + 0.5 * wrap_phase(b - a)
                    }
                    _ => fit.coef[0],
                };
                return Ok(PhaseFit { ref_phase, delay });
            }
            Err(e) if max_tail == 0 => return Err(e),
            Err(_) => max_tail -= 1,
        }
    }
}

/// Estimates and removes the background `A·exp(i(τf + θ))`.
pub fn normalize_background(trace: &ComplexTrace) -> Result<NormalizedTrace> {
    let freqs = trace.freqs();
    let values = trace.values();
    let n = trace.len();
    let half_span = 0.5 * (freqs[n - 1] - freqs[0]);

    let background = match find_dip(trace)? {
        DipSearch::Absent { .. } => {
            let f_ref = 0.5 * (freqs[0] + freqs[n - 1]);
            let amplitude = values.iter().map(|v| v.norm()).sum::<f64>() / n as f64;
            let phases = unwrap_phases(values);
            let fit = fit_wing_phase(freqs, &phases, &vec![0u8; n], f_ref, half_span, None)?;
            make_background(amplitude, fit, f_ref)
        }
        DipSearch::Found(dip) => {
            let lw = dip.fwhm;
            let q_est = dip.f_r / lw;
            let needed = ((MIN_WING_FRACTION * n as f64).ceil() as usize).max(4);
            let mut dist: Vec<f64> = freqs.iter().map(|f| (f - dip.f_r).abs()).collect();
            dist.sort_by(|a, b| b.total_cmp(a));
            // Shrink the exclusion zone until enough wing points remain.
            let radius = (WING_LINEWIDTHS * lw).min(dist[needed.min(n) - 1] * (1.0 - 1e-12));
            if radius < MIN_WING_LINEWIDTHS * lw {
                return Err(Error::InsufficientSpan(format!(
                    "only {} of {} points lie more than {} linewidths ({:.3e} Hz) from the dip, need {}",
                    dist.iter().filter(|&&d| d > MIN_WING_LINEWIDTHS * lw).count(),
                    n,
                    MIN_WING_LINEWIDTHS,
                    lw,
                    needed
                )));
            }
            let wing_idx: Vec<usize> = (0..n).filter(|&k| (freqs[k] - dip.f_r).abs() > radius).collect();

            // |S|² ≈ A²(1 − c(2−c)/(1+x²)) in the wings, with c(2−c) from the dip depth.
            let dip_strength = (1.0 - dip.min_pow / dip.baseline_pow).clamp(0.0, 1.0);
            let x_scale = 2.0 * q_est / dip.f_r;
            let amp2 = wing_idx
                .iter()
                .map(|&k| {
                    let x = x_scale * (freqs[k] - dip.f_r);
                    values[k].norm_sqr() / (1.0 - dip_strength / (1.0 + x * x))
                })
                .sum::<f64>()
                / wing_idx.len() as f64;

            let left: Vec<usize> = wing_idx.iter().copied().filter(|&k| freqs[k] < dip.f_r).collect();
            let right: Vec<usize> = wing_idx.iter().copied().filter(|&k| freqs[k] > dip.f_r).collect();
            let mut wf = Vec::new();
            let mut wp = Vec::new();
            let mut wl = Vec::new();
            for (label, idx) in [(0u8, &left), (1u8, &right)] {
                let vals: Vec<Complex64> = idx.iter().map(|&k| values[k]).collect();
                let ph = unwrap_phases(&vals);
                for (j, &k) in idx.iter().enumerate() {
                    wf.push(freqs[k]);
                    wp.push(ph[j]);
                    wl.push(label);
                }
            }
            let first = fit_wing_phase(&wf, &wp, &wl, dip.f_r, half_span, Some(x_scale))?;
            // Align the wings on a common 2π branch and refit with one intercept.
            let fit = if !left.is_empty() && !right.is_empty() {
                let line = |f: f64| first.ref_phase + first.delay * (f - dip.f_r);
                for (p, &f) in wp.iter_mut().zip(&wf) {
                    let k = ((line(f) - *p) / (2.0 * std::f64::consts::PI)).round();
                    *p += 2.0 * std::f64::consts::PI * k;
                }
                fit_wing_phase(&wf, &wp, &vec![0u8; wf.len()], dip.f_r, half_span, Some(x_scale))?
            } else {
                first
            };
            make_background(amp2.sqrt(), fit, dip.f_r)
        }
    };

    let normalized = trace.map_values(|f, v| v / background.at(f));
    Ok(NormalizedTrace {
        trace: normalized,
        background,
    })
}

fn make_background(amplitude: f64, fit: PhaseFit, f_ref: f64) -> Background {
    Background {
        amplitude,
        delay: fit.delay,
        phase: wrap_phase(fit.ref_phase - fit.delay * f_ref),
        ref_freq: f_ref,
        ref_phase: fit.ref_phase,
    }
}

/// Initial parameters for a normalised trace: f_r at the deepest point,
/// Q from the half-depth width of the |S11|² dip, Q_ext from the dip depth
/// assuming φ = 0.
pub fn initial_guess(trace: &ComplexTrace) -> Result<ResonanceParams> {
    let dip = match find_dip(trace)? {
        DipSearch::Found(d) => d,
        DipSearch::Absent { depth, threshold } => return Err(Error::NoResonance { depth, threshold }),
    };
    let q_total = dip.f_r / dip.fwhm;
    let min_mag = dip.min_pow.max(0.0).sqrt();
    // On resonance the normalised value is 1 − 2Q/Q_ext; a negative real part
    // means the circle encloses the origin (over-coupled).
    let coupling = if trace.values()[dip.min_index].re >= 0.0 {
        1.0 - min_mag
    } else {
        1.0 + min_mag
    }
    .max(1e-6);
    Ok(ResonanceParams {
        f_r: dip.f_r,
        q_total,
        q_ext: 2.0 * q_total / coupling,
        phi: 0.0,
        amplitude: 1.0,
        delay: 0.0,
        phase: 0.0,
    })
}

/// One-standard-deviation uncertainties, in the units of the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSigmas {
    pub f_r: f64,
    pub q_total: f64,
    pub q_ext: f64,
    /// `NaN` when Q_int is unphysical.
    pub q_int: f64,
    pub phi: f64,
    pub amplitude: f64,
    pub delay: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ResonanceParams,
    pub sigmas: ParamSigmas,
    /// `None` when 1/Q_total ≤ cos φ / Q_ext.
    pub q_int: Option<f64>,
    /// RMS of |S_meas − S_model| over the trace.
    pub residual_rms: f64,
    pub converged: bool,
    pub n_iter: usize,
    pub gradient_norm: f64,
}

impl FitResult {
    pub fn delta_int(&self) -> Option<f64> {
        self.q_int.map(|q| 1.0 / q)
    }

    /// σ of δ_int = 1/Q_int.
    pub fn delta_int_sigma(&self) -> Option<f64> {
        self.q_int.map(|q| self.sigmas.q_int / (q * q))
    }

    /// Q_int computed while ignoring the mismatch angle (1/Q − 1/Q_ext).
    /// Exceeds [`FitResult::q_int`] whenever φ ≠ 0.
    pub fn q_int_without_mismatch_correction(&self) -> Option<f64> {
        q_int_from(self.params.q_total, self.params.q_ext, 0.0).ok()
    }

    pub fn is_physical(&self) -> bool {
        self.q_int.is_some()
    }
}

/// Trace residuals in the scaled coordinates
/// `[u_fr, ln Q, ln Q_ext, φ, ln A, u_τ, θ_ref]`, where
/// f_r = fr0 + lw0·u_fr and τ = τ0 + u_τ / half_span.
pub(crate) struct TraceProblem<'a> {
    freqs: &'a [f64],
    /// f − fr0, so detunings stay exact when f_r moves by tiny amounts.
    offsets: Vec<f64>,
    data: &'a [Complex64],
    f_ref: f64,
    fr0: f64,
    lw0: f64,
    tau0: f64,
    half_span: f64,
    data_norm: f64,
}

impl<'a> TraceProblem<'a> {
    pub(crate) fn new(trace: &'a ComplexTrace, f_ref: f64, fr0: f64, lw0: f64, tau0: f64) -> Self {
        let freqs = trace.freqs();
        let n = freqs.len();
        let half_span = (0.5 * (freqs[n - 1] - freqs[0])).max(f64::MIN_POSITIVE);
        let data_norm = trace.values().iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        TraceProblem {
            freqs,
            offsets: freqs.iter().map(|f| f - fr0).collect(),
            data: trace.values(),
            f_ref,
            fr0,
            lw0,
            tau0,
            half_span,
            data_norm,
        }
    }

    fn params(&self, x: &[f64]) -> (ResonanceParams, f64) {
        let p = ResonanceParams {
            f_r: self.fr0 + self.lw0 * x[0],
            q_total: x[1].exp(),
            q_ext: x[2].exp(),
            phi: x[3],
            amplitude: x[4].exp(),
            delay: self.tau0 + x[5] / self.half_span,
            phase: 0.0,
        };
        (p, x[6])
    }

    pub(crate) fn encode(&self, p: &ResonanceParams, ref_phase: f64) -> Vec<f64> {
        vec![
            (p.f_r - self.fr0) / self.lw0,
            p.q_total.ln(),
            p.q_ext.ln(),
            p.phi,
            p.amplitude.ln(),
            (p.delay - self.tau0) * self.half_span,
            ref_phase,
        ]
    }

    /// Physical parameters at `x`, with θ reduced to (−π, π].
    pub(crate) fn decode(&self, x: &[f64]) -> ResonanceParams {
        let (mut p, ref_phase) = self.params(x);
        p.phase = wrap_phase(ref_phase - p.delay * self.f_ref);
        p
    }

    /// d(physical)/d(x) for `[f_r, Q, Q_ext, φ, A, τ, θ]`.
    fn transform(&self, x: &[f64]) -> DMatrix<f64> {
        let (p, _) = self.params(x);
        let mut g = DMatrix::zeros(7, 7);
        g[(0, 0)] = self.lw0;
        g[(1, 1)] = p.q_total;
        g[(2, 2)] = p.q_ext;
        g[(3, 3)] = 1.0;
        g[(4, 4)] = p.amplitude;
        g[(5, 5)] = 1.0 / self.half_span;
        g[(6, 5)] = -self.f_ref / self.half_span;
        g[(6, 6)] = 1.0;
        g
    }

    fn background(&self, p: &ResonanceParams, ref_phase: f64, f: f64) -> Complex64 {
        Complex64::from_polar(p.amplitude, p.delay * (f - self.f_ref) + ref_phase)
    }
}

impl LeastSquaresProblem for TraceProblem<'_> {
    fn n_params(&self) -> usize {
        7
    }

    fn n_residuals(&self) -> usize {
        2 * self.freqs.len()
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) -> bool {
        let (p, ref_phase) = self.params(x);
        if !(p.f_r > 0.0) || !p.q_total.is_finite() || !p.q_ext.is_finite() {
            return false;
        }
        for (k, (&f, d)) in self.freqs.iter().zip(self.data).enumerate() {
            let bg = self.background(&p, ref_phase, f);
            let (s, _) = resonant_partials(&p, f, self.offsets[k] - self.lw0 * x[0], bg);
            let r = s - d;
            out[2 * k] = r.re;
            out[2 * k + 1] = r.im;
        }
        true
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        let (p, ref_phase) = self.params(x);
        let i = Complex64::i();
        for (k, &f) in self.freqs.iter().enumerate() {
            let bg = self.background(&p, ref_phase, f);
            let (s, [d_fr, d_q, d_qe, d_phi]) = resonant_partials(&p, f, self.offsets[k] - self.lw0 * x[0], bg);
            let cols = [
                d_fr * self.lw0,
                d_q * p.q_total,
                d_qe * p.q_ext,
                d_phi,
                s,
                i * s * ((f - self.f_ref) / self.half_span),
                i * s,
            ];
            for (j, c) in cols.iter().enumerate() {
                jac[(2 * k, j)] = c.re;
                jac[(2 * k + 1, j)] = c.im;
            }
        }
    }

    fn data_norm(&self) -> f64 {
        self.data_norm
    }
}

fn q_int_sigma(p: &ResonanceParams, q_int: f64, cov: &DMatrix<f64>) -> f64 {
    // d(1/Q_int) with respect to (Q, Q_ext, φ)
    let g = [
        -1.0 / (p.q_total * p.q_total),
        p.phi.cos() / (p.q_ext * p.q_ext),
        p.phi.sin() / p.q_ext,
    ];
    let idx = [1, 2, 3];
    let mut var = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            var += g[a] * g[b] * cov[(idx[a], idx[b])];
        }
    }
    q_int * q_int * var.max(0.0).sqrt()
}

/// Fits the full reflection model to `trace`.
///
/// Errors are returned only when no fit can be attempted (no dip, too narrow a
/// span, invalid config). A fit that stops before meeting the gradient
/// tolerance comes back with `converged == false`.
pub fn fit_trace(trace: &ComplexTrace, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let norm = normalize_background(trace)?;
    let guess = initial_guess(&norm.trace)?;
    let bg = norm.background;

    let start = ResonanceParams {
        amplitude: bg.amplitude,
        delay: bg.delay,
        ..guess
    };
    let problem = TraceProblem::new(trace, bg.ref_freq, guess.f_r, guess.linewidth(), bg.delay);
    let x0 = problem.encode(&start, bg.ref_phase);
    let mut report = lsq::minimize(&problem, &x0, config);

    // A poor start on a strongly mismatched dip can stall; retry with the
    // mismatch angle seeded from the resonant point.
    if !report.converged {
        for phi0 in [0.5, -0.5, 1.0, -1.0] {
            let mut x = x0.clone();
            x[3] = phi0;
            let alt = lsq::minimize(&problem, &x, config);
            if alt.ssr < report.ssr || (alt.converged && !report.converged) {
                report = alt;
            }
            if report.converged {
                break;
            }
        }
    }
    Ok(assemble(&problem, &report, trace.len()))
}

fn assemble(problem: &TraceProblem<'_>, report: &LmReport, n_points: usize) -> FitResult {
    let params = problem.decode(&report.x);
    let cov = report.covariance().map(|c| {
        let g = problem.transform(&report.x);
        &g * c * g.transpose()
    });
    let q_int = params.q_int().ok();
    let sig = |j: usize| cov.as_ref().map_or(f64::NAN, |c| c[(j, j)].max(0.0).sqrt());
    let sigmas = ParamSigmas {
        f_r: sig(0),
        q_total: sig(1),
        q_ext: sig(2),
        q_int: match (q_int, cov.as_ref()) {
            (Some(q), Some(c)) => q_int_sigma(&params, q, c),
            _ => f64::NAN,
        },
        phi: sig(3),
        amplitude: sig(4),
        delay: sig(5),
        phase: sig(6),
    };
    FitResult {
        params,
        sigmas,
        q_int,
        residual_rms: (report.ssr / n_points as f64).sqrt(),
        converged: report.converged,
        n_iter: report.n_iter,
        gradient_norm: report.gradient_norm,
    }
}

/// One point of a power sweep: loss against mean photon number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub power_in: f64,
    pub photon_number: f64,
    pub delta_int: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct SeriesEntry {
    pub power_in: f64,
    pub fit: Option<FitResult>,
    pub outcome: Result<PowerPoint>,
}

/// Fits every trace of a power sweep and converts each to (⟨n⟩, δ_int, σ).
/// ⟨n⟩ uses the Q and Q_ext fitted on the same trace.
pub fn fit_power_series(traces: &[ComplexTrace], config: &FitConfig) -> Result<Vec<SeriesEntry>> {
    if traces.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: traces.len(),
        });
    }
    let mut powers = Vec::with_capacity(traces.len());
    for (k, t) in traces.iter().enumerate() {
        let p = t
            .power_in
            .ok_or_else(|| Error::InvalidInput(format!("trace {k} has no input power")))?;
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::InvalidInput(format!("trace {k} has invalid power {p}")));
        }
        powers.push(p);
    }
    let mut sorted = powers.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    if sorted.len() < 2 {
        return Err(Error::InvalidInput(
            "power sweep needs at least two distinct powers".to_string(),
        ));
    }

    let constants = PhysicalConstants::CODATA;
    Ok(traces
        .iter()
        .zip(&powers)
        .map(|(trace, &power_in)| {
            let fit = fit_trace(trace, config);
            let (fit, outcome) = match fit {
                Err(e) => (None, Err(e)),
                Ok(fr) => {
                    let outcome = power_point(&fr, power_in, &constants);
                    (Some(fr), outcome)
                }
            };
            SeriesEntry { power_in, fit, outcome }
        })
        .collect())
}

pub(crate) fn power_point(fit: &FitResult, power_in: f64, constants: &PhysicalConstants) -> Result<PowerPoint> {
    if !fit.converged {
        return Err(Error::FitFailed(format!(
            "trace fit did not converge after {} iterations",
            fit.n_iter
        )));
    }
    let q_int = fit.params.q_int()?;
    let photon_number = constants.photon_number(power_in, fit.params.f_r, fit.params.q_total, fit.params.q_ext)?;
    Ok(PowerPoint {
        power_in,
        photon_number,
        delta_int: 1.0 / q_int,
        sigma: fit.sigmas.q_int / (q_int * q_int),
    })
}
