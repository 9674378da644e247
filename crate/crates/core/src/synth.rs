//! Seeded forward generator for synthetic chips, sweeps and XPS spectra.
//!
//! Random numbers come from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64`. Chip-level draws use stream 0 and resonator `i` uses
//! stream `i + 1`, so resonators can be generated independently and in any
//! order with identical results.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

pub use crate::budget::EtchCondition;
use crate::budget::{HIGH_POWER_PHOTONS, SINGLE_PHOTON_PHOTONS};
use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::resonance::{dbm_to_watts, linear_grid, ComplexTrace, ResonanceParams};
use crate::tls::{freq_shift_vs_temperature, tls_loss_vs_power, SweepPoint, TlsPowerModel, TlsTempModel};
use crate::xps::{evaluate_components, LayerStack, LineConfig, PeakComponent, XpsSpectrum};

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceSpec {
    pub n_points: usize,
    /// Frequency span in units of the low-power linewidth.
    pub span_linewidths: f64,
    pub amplitude: f64,
    pub delay_s: f64,
    pub phase_rad: f64,
    /// Mismatch angles are drawn uniformly from ±`phi_max`.
    pub phi_max: f64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            n_points: 2001,
            span_linewidths: 20.0,
            amplitude: 1.0,
            delay_s: 50e-9,
            phase_rad: 0.3,
            phi_max: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChipSpec {
    pub chip_id: String,
    /// Position in an etch series: "standard", "sa_etch" or "sa_ma_etch".
    pub role: Option<String>,
    pub etch: Option<EtchCondition>,
    pub n_resonators: usize,
    /// Band for the resonance frequencies, Hz.
    pub f_band: (f64, f64),
    pub q_ext_nominal: f64,
    /// Relative spread of Q_ext between resonators.
    pub q_ext_jitter: f64,
    /// Power models at `base_temperature_k`, cycled over the resonators.
    pub tls_models: Vec<TlsPowerModel>,
    /// Lognormal σ applied to δ₀ and δ_TLS of each resonator.
    pub loss_jitter: f64,
    /// Standard deviation of the Gaussian noise on each of Re and Im.
    pub noise: f64,
    pub seed: u64,
    /// Power at the chip for each sweep trace, dBm.
    pub power_dbm: Vec<f64>,
    pub base_temperature_k: f64,
    /// Temperatures for a sweep at the lowest power; empty for none.
    pub temperatures_k: Vec<f64>,
    pub trace: TraceSpec,
    pub nbox_thickness_nm: f64,
    pub siox_thickness_nm: f64,
    /// Nb2O5 / NbO2 / NbO thicknesses for a synthetic Nb3d spectrum.
    pub xps_stack_nm: Option<[f64; 3]>,
}

impl Default for ChipSpec {
    fn default() -> Self {
        ChipSpec {
            chip_id: "chip".to_string(),
            role: None,
            etch: None,
            n_resonators: 10,
            f_band: (6.25e9, 7.0e9),
            q_ext_nominal: 0.7e6,
            q_ext_jitter: 0.05,
            tls_models: vec![TlsPowerModel::new(1.0 / 3.2e6, 1.0 / 0.94e6 - 1.0 / 3.2e6, 10.0, 0.8)],
            loss_jitter: 0.1,
            noise: 0.005,
            seed: 1,
            power_dbm: (0..11).map(|k| -165.0 + 10.0 * k as f64).collect(),
            base_temperature_k: 0.01,
            temperatures_k: Vec::new(),
            trace: TraceSpec::default(),
            nbox_thickness_nm: 4.5,
            siox_thickness_nm: 3.0,
            xps_stack_nm: None,
        }
    }
}

impl ChipSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=10).contains(&self.n_resonators) {
            return Err(Error::InvalidInput(format!(
                "chips hold 1 to 10 resonators, got {}",
                self.n_resonators
            )));
        }
        if !(self.f_band.0 > 0.0 && self.f_band.0 < self.f_band.1 && self.f_band.1.is_finite()) {
            return Err(Error::InvalidInput(
                "frequency band must be positive and ordered".to_string(),
            ));
        }
        if !(self.q_ext_nominal > 0.0) || !(self.q_ext_jitter >= 0.0) || !(self.loss_jitter >= 0.0) {
            return Err(Error::InvalidInput(
                "q_ext and jitters must be non-negative".to_string(),
            ));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidInput("noise must be non-negative".to_string()));
        }
        if self.tls_models.is_empty() {
            return Err(Error::InvalidInput("at least one TLS model is required".to_string()));
        }
        for m in &self.tls_models {
            m.validate()?;
        }
        if self.power_dbm.is_empty() || self.power_dbm.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(
                "power grid must be non-empty and finite".to_string(),
            ));
        }
        if !(self.base_temperature_k > 0.0) || self.temperatures_k.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidInput("temperatures must be positive".to_string()));
        }
        if self.trace.n_points < crate::resonance::MIN_TRACE_POINTS || !(self.trace.span_linewidths > 0.0) {
            return Err(Error::InvalidInput("trace grid is too small".to_string()));
        }
        if self.nbox_thickness_nm < 0.0 || self.siox_thickness_nm < 0.0 {
            return Err(Error::InvalidInput("thicknesses must be non-negative".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPointTruth {
    pub power_dbm: f64,
    pub power_w: f64,
    pub photon_number: f64,
    pub delta_int: f64,
    pub q_int: f64,
    pub q_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperaturePointTruth {
    pub temperature_k: f64,
    pub delta_int: f64,
    pub f_r: f64,
    pub frac_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorTruth {
    pub resonator_id: String,
    pub f_r: f64,
    pub q_ext: f64,
    pub phi: f64,
    pub amplitude: f64,
    pub delay_s: f64,
    pub phase_rad: f64,
    pub power_model: TlsPowerModel,
    pub temp_model: TlsTempModel,
    pub delta_single_photon: f64,
    pub delta_high_power: f64,
    pub power_points: Vec<PowerPointTruth>,
    pub temperature_points: Vec<TemperaturePointTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipTruth {
    pub chip_id: String,
    pub role: Option<String>,
    pub etch: Option<EtchCondition>,
    pub seed: u64,
    pub noise: f64,
    pub nbox_thickness_nm: f64,
    pub siox_thickness_nm: f64,
    pub resonators: Vec<ResonatorTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthResonator {
    pub truth: ResonatorTruth,
    pub power_traces: Vec<ComplexTrace>,
    pub temperature_traces: Vec<ComplexTrace>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub chip_id: String,
    pub resonators: Vec<SynthResonator>,
    pub xps: Option<XpsSpectrum>,
    pub truth: ChipTruth,
}

/// Loaded Q including the mismatch term: 1/Q = 1/Q_int + cos φ / Q_ext.
fn q_total_for(q_int: f64, q_ext: f64, phi: f64) -> f64 {
    1.0 / (1.0 / q_int + phi.cos() / q_ext)
}

/// Solves ⟨n⟩ = C·P·Q(⟨n⟩)²/Q_ext, where Q depends on ⟨n⟩ through the loss,
/// by damped fixed-point iteration in ln ⟨n⟩.
fn self_consistent_photons(
    model: &TlsPowerModel,
    p_w: f64,
    f_r: f64,
    q_ext: f64,
    phi: f64,
    t: f64,
) -> Result<(f64, f64)> {
    let c = PhysicalConstants::CODATA;
    let photons = |n: f64| -> Result<(f64, f64)> {
        let delta = tls_loss_vs_power(model, n, t, f_r)?;
        let q = q_total_for(1.0 / delta, q_ext, phi);
        Ok((c.photon_number(p_w, f_r, q, q_ext)?, delta))
    };
    let (mut n, _) = photons(0.0)?;
    if n == 0.0 {
        return Ok((0.0, tls_loss_vs_power(model, 0.0, t, f_r)?));
    }
    for _ in 0..500 {
        let (next, _) = photons(n)?;
        let ln_next = 0.5 * (n.ln() + next.ln());
        let done = (ln_next - n.ln()).abs() < 1e-14;
        n = ln_next.exp();
        if done {
            break;
        }
    }
    let (_, delta) = photons(n)?;
    Ok((n, delta))
}

fn add_noise(trace: ComplexTrace, sigma: f64, rng: &mut ChaCha20Rng) -> ComplexTrace {
    if sigma == 0.0 {
        return trace;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    trace.map_values(|_, v| v + Complex64::new(normal.sample(rng), normal.sample(rng)))
}

/// Generates one chip: resonators evenly spaced in the band with seeded
/// jitter, a power sweep (and optional temperature sweep) of noisy traces,
/// and the truth behind them.
pub fn generate_chip(spec: &ChipSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let n = spec.n_resonators;
    let mut chip_rng = rng_for(spec.seed, 0);
    let spacing = (spec.f_band.1 - spec.f_band.0) / n as f64;
    let freqs: Vec<f64> = (0..n)
        .map(|i| spec.f_band.0 + spacing * (i as f64 + 0.5 + chip_rng.gen_range(-0.2..0.2)))
        .collect();

    let resonators = (0..n)
        .map(|i| generate_resonator(spec, i, freqs[i]))
        .collect::<Result<Vec<_>>>()?;
    let xps = match spec.xps_stack_nm {
        Some(d) => Some(generate_xps(
            &LayerStack::niobium_oxides(d),
            &LineConfig::nb3d(),
            1e5,
            spec.seed ^ 0x5850_5300,
        )?),
        None => None,
    };
    let truth = ChipTruth {
        chip_id: spec.chip_id.clone(),
        role: spec.role.clone(),
        etch: spec.etch.clone(),
        seed: spec.seed,
        noise: spec.noise,
        nbox_thickness_nm: spec.nbox_thickness_nm,
        siox_thickness_nm: spec.siox_thickness_nm,
        resonators: resonators.iter().map(|r| r.truth.clone()).collect(),
    };
    Ok(SynthOutput {
        chip_id: spec.chip_id.clone(),
        resonators,
        xps,
        truth,
    })
}

fn generate_resonator(spec: &ChipSpec, index: usize, f_r: f64) -> Result<SynthResonator> {
    let mut rng = rng_for(spec.seed, index as u64 + 1);
    let lognormal = |rng: &mut ChaCha20Rng, s: f64| -> f64 {
        if s == 0.0 {
            1.0
        } else {
            (Normal::new(0.0, s).expect("finite sigma").sample(rng)).exp()
        }
    };
    let template = spec.tls_models[index % spec.tls_models.len()];
    let mut model = template;
    model.delta_0 *= lognormal(&mut rng, spec.loss_jitter);
    model.delta_tls *= lognormal(&mut rng, spec.loss_jitter);
    model.temperature_k = Some(spec.base_temperature_k);
    model.f_r_hz = Some(f_r);
    let q_ext = spec.q_ext_nominal * lognormal(&mut rng, spec.q_ext_jitter);
    let phi = if spec.trace.phi_max > 0.0 {
        rng.gen_range(-spec.trace.phi_max..spec.trace.phi_max)
    } else {
        0.0
    };
    let c = PhysicalConstants::CODATA;
    let thermal_base = (0.5 * c.reduced_energy(f_r, spec.base_temperature_k)).tanh();
    let temp_model = TlsTempModel {
        amplitude: model.delta_tls / thermal_base,
        f_r,
    };

    // Fixed measurement window from the lowest-Q (zero-power) linewidth.
    let q_low = q_total_for(1.0 / model.loss(0.0), q_ext, phi);
    let span = spec.trace.span_linewidths * f_r / q_low;
    let grid = linear_grid(f_r, span, spec.trace.n_points);
    let params_for = |q_int: f64, f: f64| ResonanceParams {
        f_r: f,
        q_total: q_total_for(q_int, q_ext, phi),
        q_ext,
        phi,
        amplitude: spec.trace.amplitude,
        delay: spec.trace.delay_s,
        phase: spec.trace.phase_rad,
    };

    let mut power_traces = Vec::with_capacity(spec.power_dbm.len());
    let mut power_points = Vec::with_capacity(spec.power_dbm.len());
    for &dbm in &spec.power_dbm {
        let p_w = dbm_to_watts(dbm);
        let (photons, delta) = self_consistent_photons(&model, p_w, f_r, q_ext, phi, spec.base_temperature_k)?;
        let params = params_for(1.0 / delta, f_r);
        let trace = ComplexTrace::from_model(&params, grid.clone())?.with_power(p_w);
        power_traces.push(add_noise(trace, spec.noise, &mut rng));
        power_points.push(PowerPointTruth {
            power_dbm: dbm,
            power_w: p_w,
            photon_number: photons,
            delta_int: delta,
            q_int: 1.0 / delta,
            q_total: params.q_total,
        });
    }

    let mut temperature_traces = Vec::with_capacity(spec.temperatures_k.len());
    let mut temperature_points = Vec::with_capacity(spec.temperatures_k.len());
    let lowest = spec.power_dbm.iter().copied().fold(f64::INFINITY, f64::min);
    let p_low = dbm_to_watts(lowest);
    let shift_base = freq_shift_vs_temperature(&temp_model, spec.base_temperature_k)?;
    for &t in &spec.temperatures_k {
        let (_, delta) = self_consistent_photons(&model, p_low, f_r, q_ext, phi, t)?;
        let frac_shift = freq_shift_vs_temperature(&temp_model, t)? - shift_base;
        let f_t = f_r * (1.0 + frac_shift);
        let params = params_for(1.0 / delta, f_t);
        let trace = ComplexTrace::from_model(&params, grid.clone())?
            .with_power(p_low)
            .with_temperature(t);
        temperature_traces.push(add_noise(trace, spec.noise, &mut rng));
        temperature_points.push(TemperaturePointTruth {
            temperature_k: t,
            delta_int: delta,
            f_r: f_t,
            frac_shift,
        });
    }

    Ok(SynthResonator {
        truth: ResonatorTruth {
            resonator_id: format!("r{:02}", index),
            f_r,
            q_ext,
            phi,
            amplitude: spec.trace.amplitude,
            delay_s: spec.trace.delay_s,
            phase_rad: spec.trace.phase_rad,
            power_model: model,
            temp_model,
            delta_single_photon: model.loss(SINGLE_PHOTON_PHOTONS),
            delta_high_power: model.loss(HIGH_POWER_PHOTONS),
            power_points,
            temperature_points,
        },
        power_traces,
        temperature_traces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XpsSynthOptions {
    /// Grid step, eV.
    pub step_ev: f64,
    /// Extra range beyond the outermost lines, eV.
    pub margin_ev: f64,
    /// Flat background level relative to the tallest peak.
    pub background_fraction: f64,
    /// Shirley step height relative to the tallest peak.
    pub shirley_step_fraction: f64,
}

impl Default for XpsSynthOptions {
    fn default() -> Self {
        XpsSynthOptions {
            step_ev: 0.05,
            margin_ev: 12.0,
            background_fraction: 0.1,
            shirley_step_fraction: 0.15,
        }
    }
}

/// Peak components for a stack: layer areas from the attenuation law, the
/// substrate assigned to oxidation state 0. States absent from the stack get
/// zero area.
pub fn stack_components(stack: &LayerStack, line: &LineConfig) -> Result<Vec<PeakComponent>> {
    stack.validate()?;
    line.validate()?;
    let intensities = stack.forward_intensities();
    let mut areas = vec![0.0; line.states.len()];
    let index_of = |state: i32| line.states.iter().position(|s| s.oxidation_state == state);
    for (layer, &a) in stack.layers.iter().zip(&intensities) {
        let state = layer
            .oxidation_state
            .ok_or_else(|| Error::InvalidInput(format!("layer {} has no oxidation state", layer.name)))?;
        let i =
            index_of(state).ok_or_else(|| Error::InvalidInput(format!("line {} has no state {state}", line.name)))?;
        areas[i] += a;
    }
    areas[index_of(0).expect("validated")] += intensities[intensities.len() - 1];
    Ok((0..line.states.len())
        .flat_map(|i| {
            let st = &line.states[i];
            let w = if st.oxidation_state == 0 {
                line.metal_width_ev
            } else {
                line.oxide_width_ev
            };
            line.state_components(i, areas[i], st.center_ev, w, line.metal_skew)
        })
        .collect())
}

/// Noise-free spectrum: components scaled so the tallest point reaches
/// `counts_scale`, on a flat level plus a Shirley step.
pub fn xps_expected_counts(
    stack: &LayerStack,
    line: &LineConfig,
    counts_scale: f64,
    options: &XpsSynthOptions,
) -> Result<(Vec<f64>, Vec<f64>, Vec<PeakComponent>)> {
    if !(counts_scale > 0.0) || !(options.step_ev > 0.0) {
        return Err(Error::InvalidInput(
            "counts scale and step must be positive".to_string(),
        ));
    }
    let mut comps = stack_components(stack, line)?;
    let split = line.doublet.map_or(0.0, |d| d.splitting_ev);
    let lo = line.states.iter().map(|s| s.center_ev).fold(f64::INFINITY, f64::min) - options.margin_ev;
    let hi = line
        .states
        .iter()
        .map(|s| s.center_ev)
        .fold(f64::NEG_INFINITY, f64::max)
        + split
        + options.margin_ev;
    let n = ((hi - lo) / options.step_ev).round() as usize + 1;
    let energies: Vec<f64> = (0..n).map(|k| lo + options.step_ev * k as f64).collect();
    let raw: Vec<f64> = energies.iter().map(|&e| evaluate_components(&comps, e)).collect();
    let peak = raw.iter().copied().fold(0.0, f64::max);
    let scale = if peak > 0.0 { counts_scale / peak } else { 0.0 };
    for c in &mut comps {
        c.amplitude *= scale;
    }
    let signal: Vec<f64> = raw.iter().map(|v| v * scale).collect();
    let mut cumulative = vec![0.0; n];
    for k in 1..n {
        cumulative[k] = cumulative[k - 1] + 0.5 * (signal[k] + signal[k - 1]) * options.step_ev;
    }
    let total = cumulative[n - 1];
    let level = options.background_fraction * counts_scale;
    let step = options.shirley_step_fraction * counts_scale;
    let expected = (0..n)
        .map(|k| {
            let frac = if total > 0.0 { cumulative[k] / total } else { 0.0 };
            signal[k] + level + step * frac
        })
        .collect();
    Ok((energies, expected, comps))
}

/// Poisson-sampled spectrum of `stack` for `line` with default options.
pub fn generate_xps(stack: &LayerStack, line: &LineConfig, counts_scale: f64, seed: u64) -> Result<XpsSpectrum> {
    generate_xps_with(stack, line, counts_scale, seed, &XpsSynthOptions::default())
}

pub fn generate_xps_with(
    stack: &LayerStack,
    line: &LineConfig,
    counts_scale: f64,
    seed: u64,
    options: &XpsSynthOptions,
) -> Result<XpsSpectrum> {
    let (energies, expected, _) = xps_expected_counts(stack, line, counts_scale, options)?;
    let mut rng = rng_for(seed, 0);
    let counts = expected
        .iter()
        .map(|&lambda| {
            if lambda > 0.0 {
                Poisson::new(lambda).expect("positive rate").sample(&mut rng)
            } else {
                0.0
            }
        })
        .collect();
    XpsSpectrum::new(energies, counts, line.name.clone())
}

/// Sweep of `loss(n)` over `photon_numbers` with Gaussian relative noise.
/// Each point carries σ = `relative_noise`·loss.
pub fn loss_sweep(
    loss: impl Fn(f64) -> f64,
    photon_numbers: &[f64],
    relative_noise: f64,
    seed: u64,
) -> Vec<SweepPoint> {
    let mut rng = rng_for(seed, 0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    photon_numbers
        .iter()
        .map(|&n| {
            let v = loss(n);
            let s = relative_noise * v;
            SweepPoint::new(n, v + s * normal.sample(&mut rng), (s > 0.0).then_some(s))
        })
        .collect()
}

/// Log-spaced photon numbers from 10^`lo` to 10^`hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (n - 1) as f64))
        .collect()
}

/// `cycles` repeated measurements of each Q_int with lognormal jitter.
pub fn repeat_cycles(q_int: &[f64], cycles: usize, relative_jitter: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, 0);
    let normal = Normal::new(0.0, relative_jitter.max(0.0)).expect("finite jitter");
    (0..cycles)
        .map(|_| q_int.iter().map(|q| q * normal.sample(&mut rng).exp()).collect())
        .collect()
}
