//! File-in, JSON-out wrappers around the single-dataset analyses.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use resolve_core::budget::{HIGH_POWER_PHOTONS, SINGLE_PHOTON_PHOTONS};
use resolve_core::formats::{self, FitResultRecord, SweepKind};
use resolve_core::tls::{self, PowerFit, ShiftFit, TemperatureFit};
use resolve_core::xps::{self, CoreLevelFit, EtchRateFit, LayerStack, Selectivity};
use resolve_core::{fit_trace, power_chain_attenuation};
use serde::{Deserialize, Serialize};

use crate::config::{Config, LineName};
use crate::failure::{write_file, CmdResult, Failure, Stage};

/// Writes JSON to `out`, or to stdout without one.
pub fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CmdResult<()> {
    let text = formats::to_json(value).input()?;
    match out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub struct TracePower {
    pub power_w: Option<f64>,
    pub source_dbm: Option<f64>,
}

pub fn fit_trace_file(input: &Path, config: &Config, power: &TracePower) -> CmdResult<FitResultRecord> {
    let trace = formats::read_trace_csv(input).input_at(input)?;
    let fit = fit_trace(&trace, &config.fit).model()?;
    let mut record = FitResultRecord::from(&fit);
    let power_w = match (power.power_w, power.source_dbm) {
        (Some(_), Some(_)) => return Err(Failure::Input("give --power-w or --source-dbm, not both".to_string())),
        (Some(p), None) => Some(p),
        (None, Some(dbm)) => Some(power_chain_attenuation(dbm, config.calibration.attenuation_db).input()?),
        (None, None) => None,
    };
    if let Some(p) = power_w {
        if !p.is_finite() || p < 0.0 {
            return Err(Failure::Input(format!("input power must be non-negative, got {p}")));
        }
        record.power_in_w = Some(p);
        record.photon_number = Some(
            config
                .constants
                .photon_number(p, fit.params.f_r, fit.params.q_total, fit.params.q_ext)
                .model()?,
        );
    }
    Ok(record)
}

/// Exit status for a written trace fit: 2 unless converged and physical.
pub fn trace_status(record: &FitResultRecord) -> CmdResult<()> {
    if !record.converged {
        return Err(Failure::Model(format!(
            "fit did not converge after {} iterations",
            record.n_iter
        )));
    }
    if record.q_int.is_none() {
        return Err(Failure::Model(
            "unphysical fit: 1/Q_total <= cos(phi)/Q_ext".to_string(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerReport {
    #[serde(flatten)]
    pub fit: PowerFit,
    pub delta_single_photon: f64,
    pub delta_high_power: f64,
}

pub fn fit_power_file(input: &Path, f_r: f64, temperature: f64) -> CmdResult<PowerReport> {
    let points = formats::read_sweep_csv(input, SweepKind::Power).input_at(input)?;
    let fit = tls::fit_power_model(&points, temperature, f_r).model()?;
    Ok(PowerReport {
        delta_single_photon: fit.model.loss(SINGLE_PHOTON_PHOTONS),
        delta_high_power: fit.model.loss(HIGH_POWER_PHOTONS),
        fit,
    })
}

pub fn fit_temp_file(input: &Path, f_r: f64) -> CmdResult<TemperatureFit> {
    let points = formats::read_sweep_csv(input, SweepKind::Temperature).input_at(input)?;
    tls::fit_temperature_model(&points, f_r).model()
}

pub fn fit_shift_file(input: &Path, f_r: f64) -> CmdResult<ShiftFit> {
    let points = formats::read_sweep_csv(input, SweepKind::Shift).input_at(input)?;
    tls::fit_shift_model(&points, f_r).model()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XpsReport {
    pub line: LineName,
    /// Area per oxidation state.
    pub areas: BTreeMap<i32, f64>,
    pub stack: LayerStack,
    pub total_oxide_thickness_nm: f64,
    pub fit: CoreLevelFit,
}

/// Fits a core-level spectrum and solves the configured layer stack.
pub fn xps_analysis(spectrum: &xps::XpsSpectrum, line: LineName, config: &Config) -> CmdResult<XpsReport> {
    let setup = config.line_setup(line);
    let fit = xps::fit_core_level(spectrum, &setup.line).model()?;
    let (areas, sigmas) = layer_areas(&fit, &setup.stack)?;
    let stack = xps::multilayer_thickness(&areas, Some(&sigmas), &setup.stack).model()?;
    Ok(XpsReport {
        line,
        areas: fit.states.iter().map(|s| (s.oxidation_state, s.area)).collect(),
        total_oxide_thickness_nm: stack.total_thickness(),
        stack,
        fit,
    })
}

pub fn xps_file(input: &Path, line: LineName, config: &Config) -> CmdResult<XpsReport> {
    let label = config.line_setup(line).line.name.clone();
    let text = formats::read_text(input).input_at(input)?;
    let spectrum = formats::parse_xps_csv(&text, &label).input_at(input)?;
    xps_analysis(&spectrum, line, config)
}

/// Areas and σ per layer (top first) then the substrate (state 0). A layer
/// without a state collects every oxidised state no other layer names.
fn layer_areas(fit: &CoreLevelFit, stack: &LayerStack) -> CmdResult<(Vec<f64>, Vec<f64>)> {
    let claimed: Vec<i32> = stack.layers.iter().filter_map(|l| l.oxidation_state).collect();
    let mut areas = Vec::with_capacity(stack.layers.len() + 1);
    let mut sigmas = Vec::with_capacity(stack.layers.len() + 1);
    let mut collect = |pick: &dyn Fn(i32) -> bool, name: &str| -> CmdResult<()> {
        let chosen: Vec<usize> = (0..fit.states.len())
            .filter(|&k| pick(fit.states[k].oxidation_state))
            .collect();
        if chosen.is_empty() {
            return Err(Failure::Input(format!("no fitted state maps to layer {name}")));
        }
        areas.push(chosen.iter().map(|&k| fit.states[k].area).sum());
        let var = match &fit.area_covariance {
            Some(cov) => chosen
                .iter()
                .flat_map(|&i| chosen.iter().map(move |&j| cov[(i, j)]))
                .sum::<f64>(),
            None => chosen.iter().map(|&k| fit.states[k].area_sigma.powi(2)).sum(),
        };
        sigmas.push(var.max(0.0).sqrt());
        Ok(())
    };
    for layer in &stack.layers {
        match layer.oxidation_state {
            Some(s) => collect(&|st| st == s, &layer.name)?,
            None => collect(&|st| st != 0 && !claimed.contains(&st), &layer.name)?,
        }
    }
    collect(&|st| st == 0, &stack.substrate.name)?;
    Ok((areas, sigmas))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtchReport {
    #[serde(flatten)]
    pub fit: EtchRateFit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selectivity: Option<Selectivity>,
}

pub fn etch_rate_file(input: &Path, breakpoint: bool, fast_rate_pm_s: Option<f64>) -> CmdResult<EtchReport> {
    let text = formats::read_text(input).input_at(input)?;
    let series = formats::parse_etch_csv(&text).input_at(input)?;
    let fit = xps::etch_rate_fit(&series, breakpoint).model()?;
    let selectivity = match fast_rate_pm_s {
        Some(fast) => Some(xps::selectivity(fast, fit.segments[0].rate_pm_per_s).model()?),
        None => None,
    };
    Ok(EtchReport { fit, selectivity })
}

pub fn resolve_temperature(arg: Option<f64>, config: &Config) -> CmdResult<f64> {
    let t = arg.unwrap_or(config.tls.temperature_k);
    if !t.is_finite() || t <= 0.0 {
        return Err(Failure::Input(format!("temperature must be positive, got {t}")));
    }
    Ok(t)
}

pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
