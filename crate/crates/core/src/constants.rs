//! Physical constants used by the resonator and TLS models.

use serde::{Deserialize, Serialize};

/// Planck and Boltzmann constants.
///
/// Production code uses [`PhysicalConstants::CODATA`]; other values exist so
/// tests can probe how results scale with the constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Planck constant, J·s.
    pub h: f64,
    /// Boltzmann constant, J/K.
    pub k_b: f64,
}

/// Elementary charge in coulombs (J per eV).
pub const ELECTRON_VOLT: f64 = 1.602_176_634e-19;

impl PhysicalConstants {
    /// Exact SI 2019 values.
    pub const CODATA: PhysicalConstants = PhysicalConstants {
        h: 6.626_070_15e-34,
        k_b: 1.380_649e-23,
    };

    /// Ratio h·f / (k_B·T).
    pub fn reduced_energy(&self, f_hz: f64, t_k: f64) -> f64 {
        self.h * f_hz / (self.k_b * t_k)
    }

    /// Photon energy at `f_hz` in electron-volts.
    pub fn photon_energy_ev(&self, f_hz: f64) -> f64 {
        self.h * f_hz / ELECTRON_VOLT
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::CODATA
    }
}
