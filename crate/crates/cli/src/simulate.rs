//! Synthetic campaigns written in the same formats the analysis reads.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use resolve_core::budget::{ChipDataset, ResonatorRecord};
use resolve_core::formats::{self, write_trace_csv};
use resolve_core::synth::{generate_chip, ChipSpec, ChipTruth, SynthOutput};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::campaign::{attribution_for, Attribution, ChipEntry, Manifest, ResonatorEntry, TraceEntry, XpsEntry};
use crate::config::LineName;
use crate::failure::{write_file, CmdResult, Failure, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    pub chips: Vec<ChipSpec>,
}

/// A file holding either one chip spec or `{"chips": [...]}`.
pub fn parse_spec(text: &str) -> CmdResult<CampaignSpec> {
    let value: Value = serde_json::from_str(text).input()?;
    let spec = if value.get("chips").is_some() {
        serde_json::from_value(value).input()?
    } else {
        CampaignSpec {
            chips: vec![serde_json::from_value(value).input()?],
        }
    };
    if spec.chips.is_empty() {
        return Err(Failure::Input("campaign spec lists no chips".to_string()));
    }
    let mut ids: Vec<&str> = spec.chips.iter().map(|c| c.chip_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Failure::Input(format!("duplicate chip id `{}`", w[0])));
    }
    Ok(spec)
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignTruth {
    pub chips: Vec<ChipTruth>,
    /// Budget computed from the generating models.
    pub attribution: Attribution,
}

/// Records built from the generating power models, read at the same
/// photon numbers the analysis uses.
pub fn truth_dataset(truth: &ChipTruth) -> ChipDataset {
    ChipDataset {
        chip_id: truth.chip_id.clone(),
        role: truth.role.clone(),
        etch: truth.etch.clone(),
        resonators: truth
            .resonators
            .iter()
            .map(|r| ResonatorRecord::from_power_model(r.resonator_id.clone(), r.f_r, r.power_model))
            .collect(),
        nbox_thickness_nm: truth.nbox_thickness_nm,
        siox_thickness_nm: truth.siox_thickness_nm,
    }
}

fn write_chip(out: &Path, output: &SynthOutput) -> CmdResult<ChipEntry> {
    let chip_dir = PathBuf::from(&output.chip_id);
    let mut resonators = Vec::with_capacity(output.resonators.len());
    for r in &output.resonators {
        let res_dir = chip_dir.join(&r.truth.resonator_id);
        let mut traces = Vec::with_capacity(r.power_traces.len());
        for (k, (trace, point)) in r.power_traces.iter().zip(&r.truth.power_points).enumerate() {
            let rel = res_dir.join(format!("power_{k:02}.csv"));
            write_file(&out.join(&rel), &write_trace_csv(trace))?;
            traces.push(TraceEntry {
                path: rel,
                power_w: point.power_w,
            });
        }
        for (k, trace) in r.temperature_traces.iter().enumerate() {
            let rel = res_dir.join(format!("temperature_{k:02}.csv"));
            write_file(&out.join(&rel), &write_trace_csv(trace))?;
        }
        resonators.push(ResonatorEntry {
            id: r.truth.resonator_id.clone(),
            f_r_hz: None,
            power_model: None,
            sweep: None,
            traces,
            delta_single_photon: None,
            delta_high_power: None,
        });
    }
    let mut xps = Vec::new();
    if let Some(spectrum) = &output.xps {
        let rel = chip_dir.join("xps_nb3d.csv");
        write_file(&out.join(&rel), &formats::write_xps_csv(spectrum))?;
        xps.push(XpsEntry {
            path: rel,
            line: LineName::Nb3d,
        });
    }
    write_file(
        &out.join(&chip_dir).join("truth.json"),
        &formats::to_json(&output.truth).input()?,
    )?;
    Ok(ChipEntry {
        chip_id: output.chip_id.clone(),
        role: output.truth.role.clone(),
        etch: output.truth.etch.clone(),
        nbox_thickness_nm: Some(output.truth.nbox_thickness_nm),
        siox_thickness_nm: Some(output.truth.siox_thickness_nm),
        xps,
        temperature_k: None,
        resonators,
    })
}

/// Generates every chip and writes traces, per-chip truth, the campaign
/// truth and a manifest (`campaign.json`) that `budget` accepts directly.
pub fn run_simulate(spec: &CampaignSpec, out: &Path) -> CmdResult<Manifest> {
    let outputs = spec
        .chips
        .par_iter()
        .map(|c| generate_chip(c).input())
        .collect::<CmdResult<Vec<_>>>()?;
    let chips = outputs
        .iter()
        .map(|o| write_chip(out, o))
        .collect::<CmdResult<Vec<_>>>()?;
    let truths: Vec<ChipTruth> = outputs.iter().map(|o| o.truth.clone()).collect();
    let datasets: Vec<ChipDataset> = truths.iter().map(truth_dataset).collect();
    let truth = CampaignTruth {
        attribution: attribution_for(&datasets)?,
        chips: truths,
    };
    write_file(&out.join("truth.json"), &formats::to_json(&truth).input()?)?;
    let manifest = Manifest {
        chips,
        constants: None,
        output_dir: None,
    };
    write_file(&out.join("campaign.json"), &formats::to_json(&manifest).input()?)?;
    Ok(manifest)
}
