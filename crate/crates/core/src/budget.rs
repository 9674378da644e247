//! Per-chip loss statistics and attribution of loss to the substrate-air and
//! metal-air interfaces from a sequence of etched chips.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::stats::{median, ols_line, summarize, LineFit, Summary};
use crate::tls::{SweepPoint, TlsPowerModel};

/// Photon number at which the single-photon loss is read.
pub const SINGLE_PHOTON_PHOTONS: f64 = 1.0;
/// Photon number at which the high-power loss is read from a model.
pub const HIGH_POWER_PHOTONS: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtchCondition {
    pub chemistry: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighPowerRule {
    /// Power model evaluated at ⟨n⟩ = 1e7.
    Model,
    /// Largest-⟨n⟩ point of the measured sweep.
    LargestMeasured,
    /// Given directly.
    Supplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorRecord {
    pub resonator_id: String,
    pub f_r: f64,
    pub delta_single_photon: Option<f64>,
    pub delta_high_power: Option<f64>,
    #[serde(default)]
    pub tls_power_model: Option<TlsPowerModel>,
    pub high_power_rule: HighPowerRule,
}

impl ResonatorRecord {
    pub fn from_values(id: impl Into<String>, f_r: f64, single: f64, high: f64) -> Self {
        ResonatorRecord {
            resonator_id: id.into(),
            f_r,
            delta_single_photon: Some(single),
            delta_high_power: Some(high),
            tls_power_model: None,
            high_power_rule: HighPowerRule::Supplied,
        }
    }

    pub fn from_power_model(id: impl Into<String>, f_r: f64, model: TlsPowerModel) -> Self {
        ResonatorRecord {
            resonator_id: id.into(),
            f_r,
            delta_single_photon: Some(model.loss(SINGLE_PHOTON_PHOTONS)),
            delta_high_power: Some(model.loss(HIGH_POWER_PHOTONS)),
            tls_power_model: Some(model),
            high_power_rule: HighPowerRule::Model,
        }
    }

    /// Without a model: the point nearest ⟨n⟩ = 1 (in log ⟨n⟩) and the
    /// largest-⟨n⟩ point.
    pub fn from_sweep(id: impl Into<String>, f_r: f64, points: &[SweepPoint]) -> Result<Self> {
        let usable: Vec<&SweepPoint> = points.iter().filter(|p| p.x > 0.0 && p.value.is_finite()).collect();
        if usable.is_empty() {
            return Err(Error::InvalidInput("sweep has no usable points".to_string()));
        }
        let single = usable
            .iter()
            .min_by(|a, b| a.x.log10().abs().total_cmp(&b.x.log10().abs()))
            .expect("non-empty");
        let high = usable.iter().max_by(|a, b| a.x.total_cmp(&b.x)).expect("non-empty");
        Ok(ResonatorRecord {
            resonator_id: id.into(),
            f_r,
            delta_single_photon: Some(single.value),
            delta_high_power: Some(high.value),
            tls_power_model: None,
            high_power_rule: HighPowerRule::LargestMeasured,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub delta_tls: f64,
    pub delta_0: f64,
    /// Single-photon loss was below the high-power loss; δ_TLS floored at 0.
    pub floored: bool,
}

/// δ_TLS = single-photon − high-power loss (floored at zero), δ₀ = high-power loss.
pub fn decompose(record: &ResonatorRecord) -> Result<Decomposition> {
    let single = record
        .delta_single_photon
        .ok_or_else(|| Error::InvalidInput(format!("{}: missing single-photon loss", record.resonator_id)))?;
    let high = record
        .delta_high_power
        .ok_or_else(|| Error::InvalidInput(format!("{}: missing high-power loss", record.resonator_id)))?;
    ensure_finite("single-photon loss", single)?;
    ensure_finite("high-power loss", high)?;
    let diff = single - high;
    Ok(Decomposition {
        delta_tls: diff.max(0.0),
        delta_0: high,
        floored: diff < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipDataset {
    pub chip_id: String,
    #[serde(default)]
    pub role: Option<String>,
    #[serde(default)]
    pub etch: Option<EtchCondition>,
    pub resonators: Vec<ResonatorRecord>,
    pub nbox_thickness_nm: f64,
    pub siox_thickness_nm: f64,
}

impl ChipDataset {
    pub fn validate(&self) -> Result<()> {
        if self.resonators.is_empty() || self.resonators.len() > 10 {
            return Err(Error::InvalidInput(format!(
                "chip {} must hold 1 to 10 resonators, has {}",
                self.chip_id,
                self.resonators.len()
            )));
        }
        if !(self.nbox_thickness_nm >= 0.0) || !(self.siox_thickness_nm >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "chip {}: negative thickness",
                self.chip_id
            )));
        }
        Ok(())
    }

    pub fn is_etched(&self) -> bool {
        self.etch.as_ref().is_some_and(|e| e.duration_s > 0.0)
    }

    fn decomposed(&self) -> Result<Vec<Decomposition>> {
        self.resonators.iter().map(decompose).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipStats {
    pub chip_id: String,
    pub n_resonators: usize,
    pub single_photon: Summary,
    pub high_power: Summary,
    pub delta_tls: Summary,
    pub delta_0: Summary,
    /// Resonators whose δ_TLS was floored at zero.
    pub floored: Vec<String>,
}

pub fn chip_stats(chip: &ChipDataset) -> Result<ChipStats> {
    if chip.resonators.is_empty() {
        return Err(Error::InvalidInput(format!("chip {} has no resonators", chip.chip_id)));
    }
    let dec = chip.decomposed()?;
    let single: Vec<f64> = chip.resonators.iter().map(|r| r.delta_single_photon.unwrap()).collect();
    let tls: Vec<f64> = dec.iter().map(|d| d.delta_tls).collect();
    let d0: Vec<f64> = dec.iter().map(|d| d.delta_0).collect();
    Ok(ChipStats {
        chip_id: chip.chip_id.clone(),
        n_resonators: chip.resonators.len(),
        single_photon: summarize(&single)?,
        high_power: summarize(&d0)?,
        delta_tls: summarize(&tls)?,
        delta_0: summarize(&d0)?,
        floored: chip
            .resonators
            .iter()
            .zip(&dec)
            .filter(|(_, d)| d.floored)
            .map(|(r, _)| r.resonator_id.clone())
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interface {
    #[serde(rename = "SA")]
    SubstrateAir,
    #[serde(rename = "MA")]
    MetalAir,
    #[serde(rename = "residual")]
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossClass {
    #[serde(rename = "TLS")]
    Tls,
    #[serde(rename = "non-TLS")]
    NonTls,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetComponent {
    pub interface: Interface,
    pub loss_class: LossClass,
    /// Fraction of the reference loss.
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChipMedians {
    pub delta_tls: f64,
    pub delta_0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBudget {
    /// Median δ_TLS + median δ₀ of the standard chip.
    pub reference_delta: f64,
    pub components: Vec<BudgetComponent>,
    /// Medians of the standard, SA-etched and SA+MA-etched chips.
    pub medians: [ChipMedians; 3],
    pub warnings: Vec<String>,
    pub rationale: String,
}

impl LossBudget {
    pub fn fraction(&self, interface: Interface, class: LossClass) -> f64 {
        self.components
            .iter()
            .filter(|c| c.interface == interface && c.loss_class == class)
            .map(|c| c.fraction)
            .sum()
    }

    /// Share of the standard chip's TLS loss attributed to `interface`.
    pub fn tls_share(&self, interface: Interface) -> f64 {
        let total: f64 = [Interface::SubstrateAir, Interface::MetalAir, Interface::Residual]
            .iter()
            .map(|&i| self.fraction(i, LossClass::Tls))
            .sum();
        self.fraction(interface, LossClass::Tls) / total
    }

    pub fn total_fraction(&self) -> f64 {
        self.components.iter().map(|c| c.fraction).sum()
    }
}

pub const SELECTIVITY_RATIONALE: &str = "The short buffered-oxide etch removes the silicon oxide at the \
substrate-air interface while leaving the niobium oxide essentially intact, because the etch is about \
200 times faster on SiO2 than on NbOx. Loss removed by the short etch is attributed to the \
substrate-air interface; loss removed by the additional long etch, which thins the niobium oxide, to \
the metal-air interface; what remains after the long etch is residual.";

fn chip_medians(chip: &ChipDataset) -> Result<ChipMedians> {
    let dec = chip.decomposed()?;
    let tls: Vec<f64> = dec.iter().map(|d| d.delta_tls).collect();
    let d0: Vec<f64> = dec.iter().map(|d| d.delta_0).collect();
    Ok(ChipMedians {
        delta_tls: median(&tls)?,
        delta_0: median(&d0)?,
    })
}

/// Splits the standard chip's median loss into SA, MA and residual parts per
/// loss class, from chip medians of the standard → SA-etched → SA+MA-etched
/// series. Fractions sum to one by construction; increases along the series
/// give negative fractions and a warning.
pub fn attribute_interfaces(
    standard: &ChipDataset,
    short_etch: &ChipDataset,
    long_etch: &ChipDataset,
) -> Result<LossBudget> {
    let chips = [standard, short_etch, long_etch];
    let mut medians = [ChipMedians {
        delta_tls: 0.0,
        delta_0: 0.0,
    }; 3];
    for (m, chip) in medians.iter_mut().zip(chips) {
        chip.validate()?;
        *m = chip_medians(chip)?;
    }
    let reference = medians[0].delta_tls + medians[0].delta_0;
    if !(reference > 0.0) {
        return Err(Error::InvalidInput("standard chip has no loss".to_string()));
    }
    let mut warnings = Vec::new();
    for (class, get) in [
        ("delta_tls", (|m: &ChipMedians| m.delta_tls) as fn(&ChipMedians) -> f64),
        ("delta_0", |m: &ChipMedians| m.delta_0),
    ] {
        for k in 0..2 {
            if get(&medians[k + 1]) > get(&medians[k]) {
                warnings.push(format!(
                    "median {class} rises from {} to {} ({:e} -> {:e})",
                    chips[k].chip_id,
                    chips[k + 1].chip_id,
                    get(&medians[k]),
                    get(&medians[k + 1])
                ));
            }
        }
    }
    let part = |class: LossClass, interface: Interface| -> BudgetComponent {
        let get = |m: &ChipMedians| match class {
            LossClass::Tls => m.delta_tls,
            LossClass::NonTls => m.delta_0,
        };
        let value = match interface {
            Interface::SubstrateAir => get(&medians[0]) - get(&medians[1]),
            Interface::MetalAir => get(&medians[1]) - get(&medians[2]),
            Interface::Residual => get(&medians[2]),
        };
        BudgetComponent {
            interface,
            loss_class: class,
            fraction: value / reference,
        }
    };
    let mut components = Vec::with_capacity(6);
    for class in [LossClass::Tls, LossClass::NonTls] {
        for interface in [Interface::SubstrateAir, Interface::MetalAir, Interface::Residual] {
            components.push(part(class, interface));
        }
    }
    Ok(LossBudget {
        reference_delta: reference,
        components,
        medians,
        warnings,
        rationale: SELECTIVITY_RATIONALE.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessFits {
    /// Median δ_TLS against NbOx thickness (nm).
    pub delta_tls: LineFit,
    /// Median δ₀ against NbOx thickness (nm).
    pub delta_0: LineFit,
    pub chips_used: Vec<String>,
    pub chips_excluded: Vec<String>,
    /// Intercepts at zero thickness: loss not explained by the niobium oxide.
    pub non_oxide_residual_tls: f64,
    pub non_oxide_residual_0: f64,
}

/// Straight lines of chip-median losses against NbOx thickness.
pub fn loss_vs_thickness_fit(chips: &[ChipDataset], exclude_unetched: bool) -> Result<ThicknessFits> {
    let (used, excluded): (Vec<&ChipDataset>, Vec<&ChipDataset>) =
        chips.iter().partition(|c| !exclude_unetched || c.is_etched());
    let etched = chips.iter().filter(|c| c.is_etched()).count();
    if etched < 3 {
        return Err(Error::InsufficientPoints { needed: 3, got: etched });
    }
    let mut t = Vec::new();
    let mut tls = Vec::new();
    let mut d0 = Vec::new();
    for c in &used {
        c.validate()?;
        let m = chip_medians(c)?;
        t.push(c.nbox_thickness_nm);
        tls.push(m.delta_tls);
        d0.push(m.delta_0);
    }
    let fit_tls = ols_line(&t, &tls)?;
    let fit_0 = ols_line(&t, &d0)?;
    Ok(ThicknessFits {
        non_oxide_residual_tls: fit_tls.intercept,
        non_oxide_residual_0: fit_0.intercept,
        delta_tls: fit_tls,
        delta_0: fit_0,
        chips_used: used.iter().map(|c| c.chip_id.clone()).collect(),
        chips_excluded: excluded.iter().map(|c| c.chip_id.clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorSpread {
    pub index: usize,
    pub summary: Summary,
    /// Interquartile range over the median.
    pub relative_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilitySummary {
    pub per_resonator: Vec<ResonatorSpread>,
    /// Fraction of cycle pairs in which the same resonator has the highest Q_int.
    pub rank_stability: f64,
}

/// `cycles[c][r]` is Q_int of resonator `r` in cycle `c`.
pub fn repeatability_summary(cycles: &[Vec<f64>]) -> Result<RepeatabilitySummary> {
    if cycles.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: cycles.len(),
        });
    }
    let n = cycles[0].len();
    if n == 0 || cycles.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput(
            "cycles must all cover the same resonators".to_string(),
        ));
    }
    let per_resonator = (0..n)
        .map(|r| {
            let values: Vec<f64> = cycles.iter().map(|c| c[r]).collect();
            let summary = summarize(&values)?;
            Ok(ResonatorSpread {
                index: r,
                relative_spread: (summary.q3 - summary.q1) / summary.median,
                summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best: Vec<usize> = cycles
        .iter()
        .map(|c| {
            c.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("non-empty")
        })
        .collect();
    let mut pairs = 0usize;
    let mut same = 0usize;
    for i in 0..best.len() {
        for j in i + 1..best.len() {
            pairs += 1;
            same += usize::from(best[i] == best[j]);
        }
    }
    Ok(RepeatabilitySummary {
        per_resonator,
        rank_stability: same as f64 / pairs as f64,
    })
}
