//! Analysis library for superconducting resonator loss studies.
//!
//! * [`resonance`]: one-port reflection model, quality-factor algebra and
//!   photon-number calibration.
//! * [`trace_fit`]: background normalisation and complex least-squares fits of
//!   reflection traces.
//! * [`tls`]: two-level-system loss and frequency-shift models and their fits.
//! * [`xps`]: core-level peak fitting, oxide thickness inversion and etch rates.
//! * [`budget`]: per-chip statistics and interface loss attribution.
//! * [`synth`]: seeded forward generator used as a test oracle.
//! * [`formats`]: CSV and JSON file formats shared with the command-line tool.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod constants;
pub mod error;
pub mod formats;
pub mod lsq;
pub mod resonance;
pub mod special;
pub mod stats;
pub mod synth;
pub mod tls;
pub mod trace_fit;
pub mod xps;

pub use constants::PhysicalConstants;
pub use error::{Error, Result};
pub use lsq::FitConfig;
pub use resonance::{photon_number, power_chain_attenuation, q_int_from, s11_model, ComplexTrace, ResonanceParams};
pub use trace_fit::{fit_power_series, fit_trace, FitResult};
