//! XPS core-level analysis: Shirley background, fixed-energy peak fits,
//! oxide thickness inversion and etch-rate lines.
//!
//! Energies are binding energies in eV, thicknesses and attenuation lengths
//! in nm. Spectra are stored on an ascending binding-energy grid, so the
//! high-kinetic-energy side is at the start of the arrays.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{ensure_finite, Error, Result};
use crate::lsq::{self, weighted_linear_fit, FitConfig, LeastSquaresProblem};
use crate::stats::{ols_line, LineFit};

/// Fewest grid points accepted across a fit window.
pub const MIN_SPECTRUM_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XpsSpectrum {
    binding_energy: Vec<f64>,
    counts: Vec<f64>,
    pub element_line: String,
}

impl XpsSpectrum {
    /// Accepts a grid in either direction; it is stored ascending.
    pub fn new(binding_energy: Vec<f64>, counts: Vec<f64>, element_line: impl Into<String>) -> Result<Self> {
        if binding_energy.len() != counts.len() {
            return Err(Error::InvalidInput(format!(
                "{} energies but {} count values",
                binding_energy.len(),
                counts.len()
            )));
        }
        if binding_energy.len() < MIN_SPECTRUM_POINTS {
            return Err(Error::InsufficientPoints {
                needed: MIN_SPECTRUM_POINTS,
                got: binding_energy.len(),
            });
        }
        for (&e, &c) in binding_energy.iter().zip(&counts) {
            ensure_finite("binding energy", e)?;
            ensure_finite("counts", c)?;
            if c < 0.0 {
                return Err(Error::InvalidInput(format!("negative counts {c} at {e} eV")));
            }
        }
        let (mut be, mut counts) = (binding_energy, counts);
        if be[1] < be[0] {
            be.reverse();
            counts.reverse();
        }
        if be.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "binding energy grid is not strictly monotonic".to_string(),
            ));
        }
        Ok(XpsSpectrum {
            binding_energy: be,
            counts,
            element_line: element_line.into(),
        })
    }

    pub fn binding_energy(&self) -> &[f64] {
        &self.binding_energy
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Index range `[lo, hi)` of grid points inside `window`.
    fn window_range(&self, window: (f64, f64)) -> Result<(usize, usize)> {
        let (a, b) = if window.0 <= window.1 {
            window
        } else {
            (window.1, window.0)
        };
        let e = &self.binding_energy;
        if a < e[0] || b > e[e.len() - 1] {
            return Err(Error::Domain(format!(
                "window {a}..{b} eV outside spectrum {}..{} eV",
                e[0],
                e[e.len() - 1]
            )));
        }
        let lo = e.partition_point(|&v| v < a);
        let hi = e.partition_point(|&v| v <= b);
        if hi - lo < MIN_SPECTRUM_POINTS {
            return Err(Error::InsufficientPoints {
                needed: MIN_SPECTRUM_POINTS,
                got: hi - lo,
            });
        }
        Ok((lo, hi))
    }

    pub fn full_window(&self) -> (f64, f64) {
        (self.binding_energy[0], self.binding_energy[self.len() - 1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShirleyBackground {
    /// First grid index covered by `values`.
    pub start: usize,
    pub values: Vec<f64>,
    pub iterations: usize,
}

const SHIRLEY_MAX_ITER: usize = 50;
const SHIRLEY_REL_TOL: f64 = 1e-6;

/// Iterative Shirley background over `window`.
///
/// The background at energy E is the low-energy level plus the step between
/// the window ends, weighted by the fraction of background-subtracted signal
/// lying between the window start and E. Both ends are pinned to 3-point
/// means of the spectrum.
pub fn shirley_background(spectrum: &XpsSpectrum, window: (f64, f64)) -> Result<ShirleyBackground> {
    let (lo, hi) = spectrum.window_range(window)?;
    let e = &spectrum.binding_energy[lo..hi];
    let s = &spectrum.counts[lo..hi];
    let n = s.len();
    let i_low = s[..3].iter().sum::<f64>() / 3.0;
    let i_high = s[n - 3..].iter().sum::<f64>() / 3.0;
    let step = i_high - i_low;
    let peak = s.iter().copied().fold(f64::NEG_INFINITY, f64::max) - i_low.min(i_high);
    let tol = SHIRLEY_REL_TOL * peak.max(f64::MIN_POSITIVE);

    let mut bg = vec![i_low; n];
    let mut cumulative = vec![0.0; n];
    let mut last_change = f64::INFINITY;
    for iter in 1..=SHIRLEY_MAX_ITER {
        for k in 1..n {
            let left = s[k - 1] - bg[k - 1];
            let right = s[k] - bg[k];
            cumulative[k] = cumulative[k - 1] + 0.5 * (left + right) * (e[k] - e[k - 1]);
        }
        let total = cumulative[n - 1];
        let mut change: f64 = 0.0;
        for k in 0..n {
            let frac = if total.abs() > 0.0 {
                cumulative[k] / total
            } else {
                (e[k] - e[0]) / (e[n - 1] - e[0])
            };
            let next = i_low + step * frac;
            change = change.max((next - bg[k]).abs());
            bg[k] = next;
        }
        last_change = change;
        if change <= tol || step == 0.0 {
            return Ok(ShirleyBackground {
                start: lo,
                values: bg,
                iterations: iter,
            });
        }
    }
    Err(Error::ShirleyNotConverged {
        iterations: SHIRLEY_MAX_ITER,
        last_change,
        background: bg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakComponent {
    /// Binding energy of the main line, eV.
    pub center: f64,
    /// Integrated area, counts·eV.
    pub amplitude: f64,
    /// Full width at half maximum shared by the Gaussian and Lorentzian parts, eV.
    pub gauss_width: f64,
    pub lorentz_fraction: f64,
    /// Asymmetry; positive values put the tail on the high binding-energy side.
    pub skew: f64,
    pub oxidation_state: i32,
}

const FWHM_TO_SIGMA: f64 = 0.424_660_900_144_009_5; // 1/(2√(2 ln 2))

/// Unit-area pseudo-Voigt, optionally multiplied by 1 + erf(skew·x/(σ√2)).
/// Because the symmetric part is even and erf is odd the area stays 1.
pub fn profile(x: f64, center: f64, fwhm: f64, lorentz_fraction: f64, skew: f64) -> f64 {
    let dx = x - center;
    let sigma = fwhm * FWHM_TO_SIGMA;
    let gamma = 0.5 * fwhm;
    let g = (-0.5 * (dx / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let l = gamma / (std::f64::consts::PI * (dx * dx + gamma * gamma));
    let sym = (1.0 - lorentz_fraction) * g + lorentz_fraction * l;
    if skew == 0.0 {
        sym
    } else {
        sym * (1.0 + erf(skew * dx / (sigma * std::f64::consts::SQRT_2)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doublet {
    /// Distance of the minor line above the main line, eV.
    pub splitting_ev: f64,
    /// Area of the minor line relative to the main line.
    pub area_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateConfig {
    pub oxidation_state: i32,
    pub label: String,
    pub center_ev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineConfig {
    pub name: String,
    pub states: Vec<StateConfig>,
    #[serde(default)]
    pub doublet: Option<Doublet>,
    pub metal_width_ev: f64,
    pub oxide_width_ev: f64,
    pub metal_lorentz_fraction: f64,
    pub oxide_lorentz_fraction: f64,
    /// Starting skew of the metallic line.
    pub metal_skew: f64,
    /// Largest allowed refinement of any center, eV.
    pub center_tolerance_ev: f64,
}

impl LineConfig {
    pub fn nb3d() -> Self {
        let state = |s: i32, label: &str, e: f64| StateConfig {
            oxidation_state: s,
            label: label.to_string(),
            center_ev: e,
        };
        LineConfig {
            name: "Nb3d".to_string(),
            states: vec![
                state(0, "Nb", 202.3),
                state(2, "NbO", 204.1),
                state(4, "NbO2", 206.3),
                state(5, "Nb2O5", 207.5),
            ],
            doublet: Some(Doublet {
                splitting_ev: 2.72,
                area_ratio: 2.0 / 3.0,
            }),
            metal_width_ev: 0.6,
            oxide_width_ev: 1.2,
            metal_lorentz_fraction: 0.2,
            oxide_lorentz_fraction: 0.2,
            metal_skew: 1.0,
            center_tolerance_ev: 0.2,
        }
    }

    pub fn si2p() -> Self {
        let state = |s: i32, label: &str, e: f64| StateConfig {
            oxidation_state: s,
            label: label.to_string(),
            center_ev: e,
        };
        LineConfig {
            name: "Si2p".to_string(),
            states: vec![
                state(0, "Si", 99.4),
                state(2, "Si2+", 101.8),
                state(3, "Si3+", 102.7),
                state(4, "Si4+", 103.5),
            ],
            doublet: None,
            metal_width_ev: 0.7,
            oxide_width_ev: 1.1,
            metal_lorentz_fraction: 0.2,
            oxide_lorentz_fraction: 0.2,
            metal_skew: 0.0,
            center_tolerance_ev: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::InvalidInput(format!("line {} has no states", self.name)));
        }
        if !self.states.iter().any(|s| s.oxidation_state == 0) {
            return Err(Error::InvalidInput(format!(
                "line {} has no metallic (oxidation state 0) component",
                self.name
            )));
        }
        for (name, v) in [
            ("metal_width_ev", self.metal_width_ev),
            ("oxide_width_ev", self.oxide_width_ev),
            ("center_tolerance_ev", self.center_tolerance_ev),
        ] {
            ensure_finite(name, v)?;
            if v <= 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        for eta in [self.metal_lorentz_fraction, self.oxide_lorentz_fraction] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::InvalidInput(format!("lorentz fraction {eta} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Binding-energy span the spectrum must cover.
    fn required_span(&self) -> (f64, f64) {
        let split = self.doublet.map_or(0.0, |d| d.splitting_ev);
        let lo = self.states.iter().map(|s| s.center_ev).fold(f64::INFINITY, f64::min);
        let hi = self
            .states
            .iter()
            .map(|s| s.center_ev)
            .fold(f64::NEG_INFINITY, f64::max)
            + split;
        (lo - 2.0, hi + 2.0)
    }

    /// The state's line shape with the given area (both doublet lines).
    pub fn state_components(
        &self,
        state_index: usize,
        area: f64,
        center: f64,
        fwhm: f64,
        skew: f64,
    ) -> Vec<PeakComponent> {
        let st = &self.states[state_index];
        let metal = st.oxidation_state == 0;
        let eta = if metal {
            self.metal_lorentz_fraction
        } else {
            self.oxide_lorentz_fraction
        };
        let skew = if metal { skew } else { 0.0 };
        let base = PeakComponent {
            center,
            amplitude: area,
            gauss_width: fwhm,
            lorentz_fraction: eta,
            skew,
            oxidation_state: st.oxidation_state,
        };
        match self.doublet {
            None => vec![base],
            Some(d) => {
                let major = area / (1.0 + d.area_ratio);
                vec![
                    PeakComponent {
                        amplitude: major,
                        ..base
                    },
                    PeakComponent {
                        center: center + d.splitting_ev,
                        amplitude: major * d.area_ratio,
                        ..base
                    },
                ]
            }
        }
    }
}

pub fn evaluate_components(components: &[PeakComponent], x: f64) -> f64 {
    components
        .iter()
        .map(|c| c.amplitude * profile(x, c.center, c.gauss_width, c.lorentz_fraction, c.skew))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedState {
    pub oxidation_state: i32,
    pub label: String,
    pub center: f64,
    /// Area of the state summed over both doublet lines.
    pub area: f64,
    pub area_sigma: f64,
    /// A negative least-squares area was clipped to zero.
    pub clipped: bool,
    pub components: Vec<PeakComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreLevelFit {
    pub line: String,
    pub states: Vec<FittedState>,
    pub metal_width_ev: f64,
    pub oxide_width_ev: f64,
    pub metal_skew: f64,
    pub reduced_chi2: f64,
    pub converged: bool,
    pub clipped_flag: bool,
    pub background_iterations: usize,
    /// Integrated background-subtracted data over the window.
    pub data_area: f64,
    /// Integrated model over the window.
    pub model_area: f64,
    /// Fitted background on the grid.
    pub background: Vec<f64>,
    /// Covariance of the state areas, in state order.
    #[serde(skip)]
    pub area_covariance: Option<DMatrix<f64>>,
}

impl CoreLevelFit {
    pub fn area(&self, oxidation_state: i32) -> Option<f64> {
        self.states
            .iter()
            .find(|s| s.oxidation_state == oxidation_state)
            .map(|s| s.area)
    }
}

/// Parameters: areas/scale per state, center refinements (tanh-bounded),
/// ln metal width, ln oxide width, metal skew, then the background level and
/// Shirley step, both over scale.
struct CoreLevelProblem<'a> {
    config: &'a LineConfig,
    energies: &'a [f64],
    counts: &'a [f64],
    sqrt_w: Vec<f64>,
    scale: f64,
}

impl CoreLevelProblem<'_> {
    fn n_states(&self) -> usize {
        self.config.states.len()
    }

    fn state_params(&self, x: &[f64], i: usize) -> (f64, f64, f64, f64) {
        let ns = self.n_states();
        let st = &self.config.states[i];
        let area = x[i] * self.scale;
        let center = st.center_ev + self.config.center_tolerance_ev * x[ns + i].tanh();
        let fwhm = if st.oxidation_state == 0 {
            x[2 * ns].exp()
        } else {
            x[2 * ns + 1].exp()
        };
        (area, center, fwhm, x[2 * ns + 2])
    }

    fn components(&self, x: &[f64]) -> Vec<Vec<PeakComponent>> {
        (0..self.n_states())
            .map(|i| {
                let (area, center, fwhm, skew) = self.state_params(x, i);
                self.config.state_components(i, area, center, fwhm, skew)
            })
            .collect()
    }

    /// Peak sum and Shirley background on the grid.
    fn evaluate(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ns = self.n_states();
        let comps: Vec<PeakComponent> = self.components(x).into_iter().flatten().collect();
        let peaks: Vec<f64> = self.energies.iter().map(|&e| evaluate_components(&comps, e)).collect();
        let level = x[2 * ns + 3] * self.scale;
        let step = x[2 * ns + 4] * self.scale;
        let cumulative = cumulative_trapezoid(self.energies, &peaks);
        let total = cumulative[cumulative.len() - 1];
        let background = cumulative
            .iter()
            .map(|c| level + if total != 0.0 { step * c / total } else { 0.0 })
            .collect();
        (peaks, background)
    }
}

impl LeastSquaresProblem for CoreLevelProblem<'_> {
    fn n_params(&self) -> usize {
        2 * self.n_states() + 5
    }
    fn n_residuals(&self) -> usize {
        self.energies.len()
    }
    fn residuals(&self, x: &[f64], out: &mut [f64]) -> bool {
        let ns = self.n_states();
        if x[2 * ns].abs() > 5.0 || x[2 * ns + 1].abs() > 5.0 || x[2 * ns + 2].abs() > 20.0 {
            return false;
        }
        let (peaks, background) = self.evaluate(x);
        for k in 0..self.energies.len() {
            out[k] = (peaks[k] + background[k] - self.counts[k]) * self.sqrt_w[k];
        }
        true
    }
    fn data_norm(&self) -> f64 {
        self.counts
            .iter()
            .zip(&self.sqrt_w)
            .map(|(s, w)| (s * w).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn cumulative_trapezoid(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for k in 1..x.len() {
        out[k] = out[k - 1] + 0.5 * (y[k] + y[k - 1]) * (x[k] - x[k - 1]);
    }
    out
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    cumulative_trapezoid(x, y).last().copied().unwrap_or(0.0)
}

/// Least-squares fit of the configured oxidation states on a Shirley
/// background.
///
/// The iterative Shirley background gives the starting level and step; both
/// are then refined together with the peaks, the step following the
/// integrated model peaks. Weights are Poisson (1/max(counts, 1)). Widths are
/// shared within the metallic and the oxide class; only the metallic line is
/// skewed. Negative areas are clipped to zero and flagged.
pub fn fit_core_level(spectrum: &XpsSpectrum, config: &LineConfig) -> Result<CoreLevelFit> {
    config.validate()?;
    let (need_lo, need_hi) = config.required_span();
    let (e_lo, e_hi) = spectrum.full_window();
    if need_lo < e_lo || need_hi > e_hi {
        return Err(Error::Domain(format!(
            "spectrum {e_lo}..{e_hi} eV does not cover {need_lo}..{need_hi} eV"
        )));
    }
    let bg = shirley_background(spectrum, (e_lo, e_hi))?;
    let m = bg.values.len();
    let energies = &spectrum.binding_energy[bg.start..bg.start + m];
    let counts = &spectrum.counts[bg.start..bg.start + m];
    let signal: Vec<f64> = counts.iter().zip(&bg.values).map(|(c, b)| c - b).collect();
    let weights: Vec<f64> = counts.iter().map(|c| 1.0 / c.max(1.0)).collect();
    let scale = trapezoid(energies, &signal).abs().max(1.0);
    let ns = config.states.len();

    // Linear starting areas at the nominal centers and widths.
    let nominal: Vec<Vec<PeakComponent>> = (0..ns)
        .map(|i| {
            let w = if config.states[i].oxidation_state == 0 {
                config.metal_width_ev
            } else {
                config.oxide_width_ev
            };
            config.state_components(i, 1.0, config.states[i].center_ev, w, config.metal_skew)
        })
        .collect();
    let design = DMatrix::from_fn(m, ns, |k, i| evaluate_components(&nominal[i], energies[k]));
    let start_areas = weighted_linear_fit(&design, &signal, &weights, true)
        .map(|f| f.coef)
        .unwrap_or_else(|_| vec![scale / ns as f64; ns]);

    let problem = CoreLevelProblem {
        config,
        energies,
        counts,
        sqrt_w: weights.iter().map(|w| w.sqrt()).collect(),
        scale,
    };
    let np = problem.n_params();
    let mut x0 = vec![0.0; np];
    for i in 0..ns {
        x0[i] = start_areas[i].max(0.0) / scale;
    }
    x0[2 * ns] = config.metal_width_ev.ln();
    x0[2 * ns + 1] = config.oxide_width_ev.ln();
    x0[2 * ns + 2] = config.metal_skew;
    x0[2 * ns + 3] = bg.values[0] / scale;
    x0[2 * ns + 4] = (bg.values[m - 1] - bg.values[0]) / scale;
    let fit_config = FitConfig {
        max_iter: 400,
        gradient_tol: 1e-10,
        ..FitConfig::default()
    };
    let rep = lsq::minimize(&problem, &x0, &fit_config);
    if !rep.ssr.is_finite() {
        return Err(Error::FitFailed(
            "core-level fit produced no finite residual".to_string(),
        ));
    }
    let dof = (m - np).max(1) as f64;
    let cov = rep.unscaled_covariance();
    let comps = problem.components(&rep.x);
    let (_, background) = problem.evaluate(&rep.x);
    let mut states = Vec::with_capacity(ns);
    let mut clipped_flag = false;
    for i in 0..ns {
        let (area, center, _, _) = problem.state_params(&rep.x, i);
        let clipped = area < 0.0;
        clipped_flag |= clipped;
        let area_sigma = cov.as_ref().map_or(f64::NAN, |c| c[(i, i)].max(0.0).sqrt() * scale);
        let mut components = comps[i].clone();
        if clipped {
            for c in &mut components {
                c.amplitude = 0.0;
            }
        }
        states.push(FittedState {
            oxidation_state: config.states[i].oxidation_state,
            label: config.states[i].label.clone(),
            center,
            area: area.max(0.0),
            area_sigma,
            clipped,
            components,
        });
    }
    let all: Vec<PeakComponent> = states.iter().flat_map(|s| s.components.clone()).collect();
    let model: Vec<f64> = energies.iter().map(|&e| evaluate_components(&all, e)).collect();
    let subtracted: Vec<f64> = counts.iter().zip(&background).map(|(c, b)| c - b).collect();
    let area_covariance = cov.map(|c| c.view((0, 0), (ns, ns)).into_owned() * (scale * scale));
    Ok(CoreLevelFit {
        line: config.name.clone(),
        states,
        metal_width_ev: rep.x[2 * ns].exp(),
        oxide_width_ev: rep.x[2 * ns + 1].exp(),
        metal_skew: rep.x[2 * ns + 2],
        reduced_chi2: rep.ssr / dof,
        converged: rep.converged,
        clipped_flag,
        background_iterations: bg.iterations,
        data_area: trapezoid(energies, &subtracted),
        model_area: trapezoid(energies, &model),
        background,
        area_covariance,
    })
}

/// Single overlayer on its substrate: d = eal·ln(1 + (A_ox/A_metal)/R∞).
pub fn overlayer_thickness(area_oxide: f64, area_metal: f64, sensitivity_ratio_inf: f64, eal: f64) -> Result<f64> {
    for (name, v) in [
        ("oxide area", area_oxide),
        ("metal area", area_metal),
        ("sensitivity ratio", sensitivity_ratio_inf),
        ("eal", eal),
    ] {
        ensure_finite(name, v)?;
    }
    if area_oxide < 0.0 || area_metal < 0.0 {
        return Err(Error::Domain("peak areas must be non-negative".to_string()));
    }
    if sensitivity_ratio_inf <= 0.0 || eal <= 0.0 {
        return Err(Error::Domain("sensitivity ratio and eal must be positive".to_string()));
    }
    if area_metal == 0.0 {
        return Err(Error::OpaqueOverlayer);
    }
    Ok(eal * (area_oxide / area_metal / sensitivity_ratio_inf).ln_1p())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub thickness: f64,
    pub eal: f64,
    #[serde(default = "one")]
    pub relative_density: f64,
    /// Intensity of an infinitely thick layer relative to infinitely thick substrate.
    #[serde(default = "one")]
    pub sensitivity_ratio: f64,
    /// Oxidation state whose peak area belongs to this layer.
    #[serde(default)]
    pub oxidation_state: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thickness_sigma: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substrate {
    pub name: String,
    pub eal: f64,
}

/// Layers listed from the vacuum side down, then the substrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
    pub substrate: Substrate,
}

impl LayerStack {
    /// Nb2O5 / NbO2 / NbO on Nb, all with a 1.7 nm attenuation length.
    pub fn niobium_oxides(thicknesses: [f64; 3]) -> Self {
        let layer = |name: &str, state: i32, d: f64| Layer {
            name: name.to_string(),
            thickness: d,
            eal: 1.7,
            relative_density: 1.0,
            sensitivity_ratio: 1.0,
            oxidation_state: Some(state),
            thickness_sigma: None,
        };
        LayerStack {
            layers: vec![
                layer("Nb2O5", 5, thicknesses[0]),
                layer("NbO2", 4, thicknesses[1]),
                layer("NbO", 2, thicknesses[2]),
            ],
            substrate: Substrate {
                name: "Nb".to_string(),
                eal: 1.7,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("substrate eal", self.substrate.eal)?;
        if self.substrate.eal <= 0.0 {
            return Err(Error::Domain("substrate eal must be positive".to_string()));
        }
        for l in &self.layers {
            for (what, v) in [
                ("thickness", l.thickness),
                ("eal", l.eal),
                ("relative density", l.relative_density),
                ("sensitivity ratio", l.sensitivity_ratio),
            ] {
                ensure_finite(what, v)?;
            }
            if l.thickness < 0.0 || l.eal <= 0.0 || l.relative_density <= 0.0 || l.sensitivity_ratio <= 0.0 {
                return Err(Error::Domain(format!("layer {} is unphysical", l.name)));
            }
        }
        Ok(())
    }

    pub fn total_thickness(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    /// Relative peak intensities: one per layer then the substrate.
    pub fn forward_intensities(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layers.len() + 1);
        let mut transmitted = 1.0;
        for l in &self.layers {
            let t = (-l.thickness / l.eal).exp();
            out.push(l.sensitivity_ratio * l.relative_density * (1.0 - t) * transmitted);
            transmitted *= t;
        }
        out.push(transmitted);
        out
    }
}

/// Thicknesses from area ratios y_i = A_i / A_substrate. Each ratio depends
/// only on its own layer and the layers beneath it, so the system is solved
/// exactly from the bottom up.
fn solve_stack(ratios: &[f64], stack: &LayerStack) -> Result<Vec<f64>> {
    let mut d = vec![0.0; ratios.len()];
    // Π over deeper layers of e^{d/L}
    let mut below = 1.0;
    for i in (0..ratios.len()).rev() {
        let l = &stack.layers[i];
        let r = l.sensitivity_ratio * l.relative_density;
        let arg = ratios[i] / (r * below);
        if !(arg >= 0.0) || !arg.is_finite() {
            return Err(Error::NoPositiveSolution(format!(
                "layer {} needs ln(1 + {arg}) with a non-negative argument",
                l.name
            )));
        }
        d[i] = l.eal * arg.ln_1p();
        below *= (d[i] / l.eal).exp();
    }
    Ok(d)
}

/// Solves the layered attenuation model for the thicknesses of `template`.
///
/// `areas` holds one area per layer followed by the substrate area; `sigmas`
/// (same layout) are propagated to first order into `thickness_sigma`.
pub fn multilayer_thickness(areas: &[f64], sigmas: Option<&[f64]>, template: &LayerStack) -> Result<LayerStack> {
    template.validate()?;
    let nl = template.layers.len();
    if areas.len() != nl + 1 {
        return Err(Error::InvalidInput(format!(
            "expected {} areas (layers plus substrate), got {}",
            nl + 1,
            areas.len()
        )));
    }
    for (i, &a) in areas.iter().enumerate() {
        ensure_finite("area", a)?;
        if a < 0.0 {
            let name = template
                .layers
                .get(i)
                .map_or(template.substrate.name.as_str(), |l| l.name.as_str());
            return Err(Error::NoPositiveSolution(format!("negative area {a} for {name}")));
        }
    }
    let a_sub = areas[nl];
    if a_sub == 0.0 {
        return Err(Error::OpaqueOverlayer);
    }
    let ratios: Vec<f64> = areas[..nl].iter().map(|a| a / a_sub).collect();
    let d = solve_stack(&ratios, template)?;

    let mut solved = template.clone();
    for (l, &di) in solved.layers.iter_mut().zip(&d) {
        l.thickness = di;
        l.thickness_sigma = None;
    }
    let forward = solved.forward_intensities();
    let fwd_sub = forward[nl];
    for i in 0..nl {
        let predicted = forward[i] / fwd_sub;
        let resid = (predicted - ratios[i]).abs() / ratios[i].abs().max(1e-300);
        if ratios[i] > 0.0 && resid > 1e-8 {
            return Err(Error::NoPositiveSolution(format!(
                "area ratio for {} not reproduced (relative residual {resid:e})",
                template.layers[i].name
            )));
        }
    }

    if let Some(s) = sigmas {
        if s.len() != areas.len() {
            return Err(Error::InvalidInput("sigma count does not match areas".to_string()));
        }
        // Central differences of the solution with respect to each area.
        let mut jac = DMatrix::zeros(nl, nl + 1);
        for k in 0..=nl {
            let h = 1e-6 * areas[k].abs().max(1e-12 * a_sub);
            let solve_at = |delta: f64| -> Result<Vec<f64>> {
                let mut a = areas.to_vec();
                a[k] += delta;
                let r: Vec<f64> = a[..nl].iter().map(|v| v / a[nl]).collect();
                solve_stack(&r, template)
            };
            let plus = solve_at(h)?;
            let minus = if areas[k] - h >= 0.0 { solve_at(-h)? } else { d.clone() };
            let denom = if areas[k] - h >= 0.0 { 2.0 * h } else { h };
            for i in 0..nl {
                jac[(i, k)] = (plus[i] - minus[i]) / denom;
            }
        }
        let cov_a = DMatrix::from_diagonal(&DVector::from_iterator(nl + 1, s.iter().map(|v| v * v)));
        let cov_d = &jac * cov_a * jac.transpose();
        for (i, l) in solved.layers.iter_mut().enumerate() {
            l.thickness_sigma = Some(cov_d[(i, i)].max(0.0).sqrt());
        }
    }
    Ok(solved)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtchSegment {
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub rate_pm_per_s: f64,
    pub rate_sigma_pm_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtchRateFit {
    pub segments: Vec<EtchSegment>,
    /// Knot of the two-segment fit, s.
    pub breakpoint_s: Option<f64>,
    /// Thickness at t = 0 from the first segment, nm.
    pub intercept_nm: f64,
    pub intercept_sigma_nm: f64,
    pub residual_ss: f64,
}

/// Least-squares etch rates from (time s, thickness nm) pairs.
///
/// With `breakpoint_search` a continuous two-segment line is fitted with the
/// knot placed at whichever interior time minimises the squared error.
pub fn etch_rate_fit(series: &[(f64, f64)], breakpoint_search: bool) -> Result<EtchRateFit> {
    if series.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: series.len(),
        });
    }
    for &(t, d) in series {
        ensure_finite("etch time", t)?;
        ensure_finite("thickness", d)?;
        if t < 0.0 {
            return Err(Error::InvalidInput(format!("negative etch time {t}")));
        }
    }
    let mut pts = series.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let t: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let d: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (t0, t1) = (t[0], t[t.len() - 1]);

    let line: LineFit = ols_line(&t, &d)?;
    let single = EtchRateFit {
        segments: vec![EtchSegment {
            t_start_s: t0,
            t_end_s: t1,
            rate_pm_per_s: line.slope * 1e3,
            rate_sigma_pm_per_s: line.slope_sigma * 1e3,
        }],
        breakpoint_s: None,
        intercept_nm: line.intercept,
        intercept_sigma_nm: line.intercept_sigma,
        residual_ss: line.residual_ss,
    };
    if !breakpoint_search {
        return Ok(single);
    }
    let n = t.len();
    if n < 5 {
        return Err(Error::InsufficientPoints { needed: 5, got: n });
    }
    let mut best: Option<(f64, f64, crate::lsq::LinearFit)> = None;
    // at least two points on each side of the knot, and a distinct knot time
    for k in 1..n - 1 {
        let knot = t[k];
        if t[..=k].iter().filter(|&&v| v < knot).count() < 1 || t[k..].iter().filter(|&&v| v > knot).count() < 1 {
            continue;
        }
        if k + 1 < 2 || n - k < 2 {
            continue;
        }
        let design = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => t[i],
            _ => (t[i] - knot).max(0.0),
        });
        let Ok(fit) = weighted_linear_fit(&design, &d, &vec![1.0; n], true) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| fit.wssr < b.1) {
            best = Some((knot, fit.wssr, fit));
        }
    }
    let Some((knot, sse, fit)) = best else {
        return Err(Error::RankDeficient("no admissible breakpoint".to_string()));
    };
    let c = &fit.covariance;
    let second_rate = fit.coef[1] + fit.coef[2];
    let second_sigma = (c[(1, 1)] + c[(2, 2)] + 2.0 * c[(1, 2)]).max(0.0).sqrt();
    Ok(EtchRateFit {
        segments: vec![
            EtchSegment {
                t_start_s: t0,
                t_end_s: knot,
                rate_pm_per_s: fit.coef[1] * 1e3,
                rate_sigma_pm_per_s: c[(1, 1)].sqrt() * 1e3,
            },
            EtchSegment {
                t_start_s: knot,
                t_end_s: t1,
                rate_pm_per_s: second_rate * 1e3,
                rate_sigma_pm_per_s: second_sigma * 1e3,
            },
        ],
        breakpoint_s: Some(knot),
        intercept_nm: fit.coef[0],
        intercept_sigma_nm: c[(0, 0)].sqrt(),
        residual_ss: sse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selectivity {
    pub ratio: f64,
    pub label: String,
}

/// Ratio of two etch rates (signs ignored), labelled against the largest
/// 1-2-5 series value it reaches, e.g. 217 → ">200:1".
pub fn selectivity(fast_rate: f64, slow_rate: f64) -> Result<Selectivity> {
    ensure_finite("fast rate", fast_rate)?;
    ensure_finite("slow rate", slow_rate)?;
    if slow_rate == 0.0 {
        return Err(Error::Domain("slow etch rate is zero".to_string()));
    }
    let ratio = (fast_rate / slow_rate).abs();
    let label = if ratio < 1.0 {
        format!("{ratio:.2}:1")
    } else {
        let decade = 10f64.powf(ratio.log10().floor());
        let mark = [5.0, 2.0, 1.0]
            .iter()
            .map(|m| m * decade)
            .find(|&m| m <= ratio)
            .unwrap_or(decade);
        if ratio > mark {
            format!(">{mark:.0}:1")
        } else {
            format!("{mark:.0}:1")
        }
    };
    Ok(Selectivity { ratio, label })
}
