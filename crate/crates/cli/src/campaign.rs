//! Campaign manifests and the consolidated loss-budget report.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use resolve_core::budget::{
    attribute_interfaces, chip_stats, decompose, loss_vs_thickness_fit, ChipDataset, ChipStats, Decomposition,
    EtchCondition, HighPowerRule, LossBudget, ResonatorRecord, ThicknessFits,
};
use resolve_core::formats::{self, SweepKind};
use resolve_core::tls::{fit_power_model, PowerFit, SweepPoint};
use resolve_core::{fit_trace, PhysicalConstants};
use serde::{Deserialize, Serialize};

use crate::commands::{resolve_path, xps_file};
use crate::config::{Config, LineName};
use crate::failure::{CmdResult, Failure, Stage};

pub const ROLE_STANDARD: &str = "standard";
pub const ROLE_SA_ETCH: &str = "sa_etch";
pub const ROLE_SA_MA_ETCH: &str = "sa_ma_etch";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub chips: Vec<ChipEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<PhysicalConstants>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipEntry {
    pub chip_id: String,
    /// One of `standard`, `sa_etch`, `sa_ma_etch`; other roles are reported
    /// but take no part in attribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub etch: Option<EtchCondition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nbox_thickness_nm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub siox_thickness_nm: Option<f64>,
    /// Spectra whose inversion supplies a thickness not given directly.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub xps: Vec<XpsEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_k: Option<f64>,
    pub resonators: Vec<ResonatorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XpsEntry {
    pub path: PathBuf,
    pub line: LineName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub path: PathBuf,
    pub power_w: f64,
}

/// Exactly one data source per resonator: a fitted power-model JSON, a
/// power-sweep CSV, raw traces, or the two losses directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_r_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_single_photon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_high_power: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResonatorReport {
    #[serde(flatten)]
    pub record: ResonatorRecord,
    pub decomposition: Decomposition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_fit: Option<PowerFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChipReport {
    pub chip_id: String,
    pub role: Option<String>,
    pub etch: Option<EtchCondition>,
    pub nbox_thickness_nm: f64,
    pub siox_thickness_nm: f64,
    pub stats: ChipStats,
    pub resonators: Vec<ResonatorReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Attribution {
    Computed(LossBudget),
    Skipped { reason: String },
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ThicknessSection {
    Computed(ThicknessFits),
    Skipped { reason: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct BudgetReport {
    pub chips: Vec<ChipReport>,
    pub attribution: Attribution,
    pub thickness_fits: ThicknessSection,
}

pub fn load_manifest(path: &Path) -> CmdResult<Manifest> {
    let text = formats::read_text(path).input_at(path)?;
    let manifest: Manifest = formats::from_json(&text).input_at(path)?;
    validate_manifest(&manifest)?;
    Ok(manifest)
}

pub fn validate_manifest(manifest: &Manifest) -> CmdResult<()> {
    if manifest.chips.is_empty() {
        return Err(Failure::Input("manifest lists no chips".to_string()));
    }
    let mut seen = BTreeSet::new();
    for chip in &manifest.chips {
        if !seen.insert(chip.chip_id.as_str()) {
            return Err(Failure::Input(format!("duplicate chip id `{}`", chip.chip_id)));
        }
        let mut ids = BTreeSet::new();
        for r in &chip.resonators {
            if !ids.insert(r.id.as_str()) {
                return Err(Failure::Input(format!(
                    "chip {}: duplicate resonator id `{}`",
                    chip.chip_id, r.id
                )));
            }
            let sources = usize::from(r.power_model.is_some())
                + usize::from(r.sweep.is_some())
                + usize::from(!r.traces.is_empty())
                + usize::from(r.delta_single_photon.is_some() || r.delta_high_power.is_some());
            if sources != 1 {
                return Err(Failure::Input(format!(
                    "chip {} resonator {}: give exactly one of power_model, sweep, traces or direct losses",
                    chip.chip_id, r.id
                )));
            }
        }
    }
    Ok(())
}

struct Loaded {
    record: ResonatorRecord,
    power_fit: Option<PowerFit>,
    warning: Option<String>,
}

fn model_record(id: &str, f_r: f64, fit: PowerFit) -> Loaded {
    Loaded {
        record: ResonatorRecord::from_power_model(id, f_r, fit.model),
        power_fit: Some(fit),
        warning: None,
    }
}

/// Fits the sweep; if the fit fails the record falls back to the measured
/// points nearest ⟨n⟩ = 1 and the highest ⟨n⟩.
fn sweep_record(id: &str, f_r: f64, points: &[SweepPoint], t: f64) -> CmdResult<Loaded> {
    match fit_power_model(points, t, f_r) {
        Ok(fit) => Ok(model_record(id, f_r, fit)),
        Err(e) => {
            let record = ResonatorRecord::from_sweep(id, f_r, points).model()?;
            Ok(Loaded {
                record,
                power_fit: None,
                warning: Some(format!("{id}: power-model fit failed ({e}); using measured endpoints")),
            })
        }
    }
}

fn load_resonator(
    entry: &ResonatorEntry,
    chip: &ChipEntry,
    base: &Path,
    config: &Config,
    constants: &PhysicalConstants,
) -> CmdResult<Loaded> {
    let t = chip.temperature_k.unwrap_or(config.tls.temperature_k);
    let id = entry.id.as_str();
    let need_f_r = || {
        entry
            .f_r_hz
            .ok_or_else(|| Failure::Input(format!("chip {} resonator {id}: f_r_hz is required", chip.chip_id)))
    };
    if let Some(path) = &entry.power_model {
        let path = resolve_path(base, path);
        let text = formats::read_text(&path).input_at(&path)?;
        let fit: PowerFit = formats::from_json(&text).input_at(&path)?;
        let f_r = match entry.f_r_hz.or(fit.model.f_r_hz) {
            Some(f) => f,
            None => need_f_r()?,
        };
        return Ok(model_record(id, f_r, fit));
    }
    if let Some(path) = &entry.sweep {
        let path = resolve_path(base, path);
        let points = formats::read_sweep_csv(&path, SweepKind::Power).input_at(&path)?;
        return sweep_record(id, need_f_r()?, &points, t);
    }
    if !entry.traces.is_empty() {
        let mut points = Vec::with_capacity(entry.traces.len());
        let mut f_sum = 0.0;
        let mut failures = Vec::new();
        for tr in &entry.traces {
            let path = resolve_path(base, &tr.path);
            let trace = formats::read_trace_csv(&path).input_at(&path)?;
            let fit = match fit_trace(&trace, &config.fit) {
                Ok(f) if f.converged && f.q_int.is_some() => f,
                Ok(_) => {
                    failures.push(format!("{}: fit not converged or unphysical", path.display()));
                    continue;
                }
                Err(e) => {
                    failures.push(format!("{}: {e}", path.display()));
                    continue;
                }
            };
            let p = &fit.params;
            let n = constants.photon_number(tr.power_w, p.f_r, p.q_total, p.q_ext).model()?;
            points.push(SweepPoint::new(n, fit.delta_int().unwrap(), fit.delta_int_sigma()));
            f_sum += p.f_r;
        }
        if points.is_empty() {
            return Err(Failure::Model(format!("resonator {id}: no trace could be fitted")));
        }
        let f_r = entry.f_r_hz.unwrap_or(f_sum / points.len() as f64);
        let mut loaded = sweep_record(id, f_r, &points, t)?;
        if !failures.is_empty() {
            let note = format!("{id}: {} trace(s) skipped: {}", failures.len(), failures.join("; "));
            loaded.warning = Some(match loaded.warning {
                Some(w) => format!("{w}; {note}"),
                None => note,
            });
        }
        return Ok(loaded);
    }
    let (Some(single), Some(high)) = (entry.delta_single_photon, entry.delta_high_power) else {
        return Err(Failure::Input(format!(
            "chip {} resonator {id}: both delta_single_photon and delta_high_power are required",
            chip.chip_id
        )));
    };
    Ok(Loaded {
        record: ResonatorRecord::from_values(id, entry.f_r_hz.unwrap_or(f64::NAN), single, high),
        power_fit: None,
        warning: None,
    })
}

fn thickness(chip: &ChipEntry, line: LineName, given: Option<f64>, base: &Path, config: &Config) -> CmdResult<f64> {
    if let Some(d) = given {
        return Ok(d);
    }
    match chip.xps.iter().find(|x| x.line == line) {
        Some(x) => Ok(xps_file(&resolve_path(base, &x.path), line, config)?.total_oxide_thickness_nm),
        None => Ok(0.0),
    }
}

fn load_chip(chip: &ChipEntry, base: &Path, config: &Config, constants: &PhysicalConstants) -> CmdResult<ChipReport> {
    let loaded = chip
        .resonators
        .par_iter()
        .map(|r| load_resonator(r, chip, base, config, constants))
        .collect::<CmdResult<Vec<_>>>()?;
    let mut warnings: Vec<String> = loaded.iter().filter_map(|l| l.warning.clone()).collect();
    let dataset = ChipDataset {
        chip_id: chip.chip_id.clone(),
        role: chip.role.clone(),
        etch: chip.etch.clone(),
        resonators: loaded.iter().map(|l| l.record.clone()).collect(),
        nbox_thickness_nm: thickness(chip, LineName::Nb3d, chip.nbox_thickness_nm, base, config)?,
        siox_thickness_nm: thickness(chip, LineName::Si2p, chip.siox_thickness_nm, base, config)?,
    };
    dataset.validate().input()?;
    let stats = chip_stats(&dataset).model()?;
    let mut resonators = Vec::with_capacity(loaded.len());
    for l in loaded {
        let decomposition = decompose(&l.record).model()?;
        if decomposition.floored {
            warnings.push(format!(
                "{}: single-photon loss below high-power loss, TLS part floored at 0",
                l.record.resonator_id
            ));
        }
        if l.record.high_power_rule == HighPowerRule::LargestMeasured {
            warnings.push(format!(
                "{}: high-power loss read from the largest measured point",
                l.record.resonator_id
            ));
        }
        resonators.push(ResonatorReport {
            record: l.record,
            decomposition,
            power_fit: l.power_fit,
        });
    }
    Ok(ChipReport {
        chip_id: chip.chip_id.clone(),
        role: chip.role.clone(),
        etch: chip.etch.clone(),
        nbox_thickness_nm: dataset.nbox_thickness_nm,
        siox_thickness_nm: dataset.siox_thickness_nm,
        stats,
        resonators,
        warnings,
    })
}

fn dataset_of(report: &ChipReport) -> ChipDataset {
    ChipDataset {
        chip_id: report.chip_id.clone(),
        role: report.role.clone(),
        etch: report.etch.clone(),
        resonators: report.resonators.iter().map(|r| r.record.clone()).collect(),
        nbox_thickness_nm: report.nbox_thickness_nm,
        siox_thickness_nm: report.siox_thickness_nm,
    }
}

/// The standard, SA-etched and SA+MA-etched chips, if each role occurs once.
pub fn triplet(chips: &[ChipDataset]) -> Result<[&ChipDataset; 3], String> {
    let mut found = Vec::with_capacity(3);
    for role in [ROLE_STANDARD, ROLE_SA_ETCH, ROLE_SA_MA_ETCH] {
        let matching: Vec<&ChipDataset> = chips.iter().filter(|c| c.role.as_deref() == Some(role)).collect();
        match matching.len() {
            0 => return Err(format!("no chip with role `{role}`")),
            1 => found.push(matching[0]),
            n => return Err(format!("{n} chips with role `{role}`, need exactly one")),
        }
    }
    Ok([found[0], found[1], found[2]])
}

pub fn attribution_for(chips: &[ChipDataset]) -> CmdResult<Attribution> {
    match triplet(chips) {
        Ok([s, short, long]) => Ok(Attribution::Computed(attribute_interfaces(s, short, long).model()?)),
        Err(reason) => Ok(Attribution::Skipped {
            reason: format!("attribution skipped: {reason}"),
        }),
    }
}

pub fn run_budget(manifest: &Manifest, base: &Path, config: &Config) -> CmdResult<BudgetReport> {
    let constants = manifest.constants.unwrap_or(config.constants);
    let chips = manifest
        .chips
        .par_iter()
        .map(|c| load_chip(c, base, config, &constants))
        .collect::<CmdResult<Vec<_>>>()?;
    let datasets: Vec<ChipDataset> = chips.iter().map(dataset_of).collect();
    let attribution = attribution_for(&datasets)?;
    let thickness_fits = match loss_vs_thickness_fit(&datasets, config.budget.exclude_unetched) {
        Ok(fits) => ThicknessSection::Computed(fits),
        Err(e) => ThicknessSection::Skipped {
            reason: format!("thickness fit skipped: {e}"),
        },
    };
    Ok(BudgetReport {
        chips,
        attribution,
        thickness_fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str) -> ResonatorEntry {
        ResonatorEntry {
            id: id.to_string(),
            f_r_hz: Some(6.5e9),
            power_model: None,
            sweep: None,
            traces: Vec::new(),
            delta_single_photon: Some(1e-6),
            delta_high_power: Some(3e-7),
        }
    }

    fn chip(id: &str, role: Option<&str>) -> ChipEntry {
        ChipEntry {
            chip_id: id.to_string(),
            role: role.map(str::to_string),
            etch: None,
            nbox_thickness_nm: Some(4.5),
            siox_thickness_nm: Some(3.0),
            xps: Vec::new(),
            temperature_k: None,
            resonators: vec![entry("r00"), entry("r01")],
        }
    }

    #[test]
    fn duplicate_chip_is_rejected() {
        let m = Manifest {
            chips: vec![chip("a", None), chip("a", None)],
            constants: None,
            output_dir: None,
        };
        assert!(matches!(validate_manifest(&m), Err(Failure::Input(_))));
    }

    #[test]
    fn two_sources_are_rejected() {
        let mut c = chip("a", None);
        c.resonators[0].sweep = Some("s.csv".into());
        let m = Manifest {
            chips: vec![c],
            constants: None,
            output_dir: None,
        };
        assert!(validate_manifest(&m).is_err());
    }

    #[test]
    fn single_chip_skips_attribution() {
        let m = Manifest {
            chips: vec![chip("a", Some(ROLE_STANDARD))],
            constants: None,
            output_dir: None,
        };
        let report = run_budget(&m, Path::new("."), &Config::default()).unwrap();
        match report.attribution {
            Attribution::Skipped { reason } => assert!(reason.contains("attribution skipped")),
            Attribution::Computed(_) => panic!("attribution needs three chips"),
        }
    }
}
