//! Analysis settings: constants, calibration, fit tolerances and XPS line
//! setups. Read from `--config`, else `$RESOLVE_CONFIG_DIR/resolve.json`,
//! else built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use resolve_core::xps::{Layer, LayerStack, LineConfig, Substrate};
use resolve_core::{FitConfig, PhysicalConstants};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::failure::{CmdResult, Stage};

pub const CONFIG_DIR_VAR: &str = "RESOLVE_CONFIG_DIR";
pub const CONFIG_FILE: &str = "resolve.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Free-text remarks; ignored by the tool.
    pub notes: BTreeMap<String, String>,
    pub constants: PhysicalConstants,
    pub calibration: Calibration,
    pub fit: FitConfig,
    pub tls: TlsSettings,
    pub xps: XpsSettings,
    pub budget: BudgetSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    /// Loss between source and chip, dB.
    pub attenuation_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TlsSettings {
    /// Stage temperature assumed when `--temperature` is not given, K.
    pub temperature_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSetup {
    pub line: LineConfig,
    /// Layers to solve for. A layer without an oxidation state takes every
    /// oxidised state not claimed by another layer.
    pub stack: LayerStack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XpsSettings {
    pub nb3d: LineSetup,
    pub si2p: LineSetup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSettings {
    /// Leave unetched chips out of the loss-versus-thickness lines.
    pub exclude_unetched: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            notes: BTreeMap::new(),
            constants: PhysicalConstants::CODATA,
            calibration: Calibration::default(),
            fit: FitConfig::default(),
            tls: TlsSettings::default(),
            xps: XpsSettings::default(),
            budget: BudgetSettings::default(),
        }
    }
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration { attenuation_db: 100.0 }
    }
}

impl Default for TlsSettings {
    fn default() -> Self {
        TlsSettings { temperature_k: 0.01 }
    }
}

impl Default for BudgetSettings {
    fn default() -> Self {
        BudgetSettings { exclude_unetched: true }
    }
}

impl Default for XpsSettings {
    fn default() -> Self {
        XpsSettings {
            nb3d: LineSetup {
                line: LineConfig::nb3d(),
                stack: LayerStack::niobium_oxides([0.0; 3]),
            },
            si2p: LineSetup {
                line: LineConfig::si2p(),
                stack: LayerStack {
                    layers: vec![Layer {
                        name: "SiOx".to_string(),
                        thickness: 0.0,
                        eal: 2.84,
                        relative_density: 1.0,
                        sensitivity_ratio: 1.0,
                        oxidation_state: None,
                        thickness_sigma: None,
                    }],
                    substrate: Substrate {
                        name: "Si".to_string(),
                        eal: 2.84,
                    },
                },
            },
        }
    }
}

const SECTIONS: [&str; 7] = ["notes", "constants", "calibration", "fit", "tls", "xps", "budget"];

impl Config {
    /// Parses a full config, or a bare section object which is placed under
    /// `section` (so `--config fit.json` may hold just the fit settings).
    pub fn from_json(text: &str, section: &str) -> CmdResult<Config> {
        let value: Value = serde_json::from_str(text).input()?;
        let is_full = value
            .as_object()
            .is_some_and(|m| m.is_empty() || m.keys().any(|k| SECTIONS.contains(&k.as_str())));
        let value = if is_full {
            value
        } else {
            let mut wrapped = serde_json::Map::new();
            wrapped.insert(section.to_string(), value);
            Value::Object(wrapped)
        };
        serde_json::from_value(value).input()
    }

    pub fn load(explicit: Option<&Path>, section: &str) -> CmdResult<Config> {
        let path: Option<PathBuf> = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_DIR_VAR)
                .map(|dir| Path::new(&dir).join(CONFIG_FILE))
                .filter(|p| p.is_file()),
        };
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(&path).input_at(&path)?;
        let config = Config::from_json(&text, section).map_err(|e| e.at(&path))?;
        config.fit.validate().input_at(&path)?;
        Ok(config)
    }

    pub fn line_setup(&self, line: LineName) -> &LineSetup {
        match line {
            LineName::Nb3d => &self.xps.nb3d,
            LineName::Si2p => &self.xps.si2p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LineName {
    Nb3d,
    Si2p,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_fit_section_is_accepted() {
        let c = Config::from_json(r#"{"max_iter": 50}"#, "fit").unwrap();
        assert_eq!(c.fit.max_iter, 50);
        assert_eq!(c.fit.gradient_tol, FitConfig::default().gradient_tol);
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        assert!(Config::from_json(r#"{"fit": {}, "fitt": {}}"#, "fit").is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let text = serde_json::to_string(&Config::default()).unwrap();
        assert_eq!(Config::from_json(&text, "fit").unwrap(), Config::default());
    }
}
