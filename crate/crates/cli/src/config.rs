//! TOML run configuration. Units live in the key names.

use std::path::{Path, PathBuf};

use pixfas::em_model::{CouplingParams, PixelLayout, PowerAngularSpectrum};
use pixfas::impm::{Circuit, SwitchModel};
use pixfas::numerics::{PasSupport, Resolution};
use pixfas::search::GaParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub array: ArraySection,
    #[serde(default)]
    pub design: DesignSection,
    pub frequency: FrequencySection,
    #[serde(default)]
    pub pas: PasSection,
    #[serde(default)]
    pub quadrature: Resolution,
    pub model: ModelSection,
    #[serde(default)]
    pub surrogate: SurrogateSection,
    #[serde(default = "default_switch")]
    pub switch: SwitchSection,
    #[serde(default)]
    pub ga: GaParams,
    #[serde(default)]
    pub search: SearchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    /// FAS port count N.
    pub ports: usize,
    pub aperture_wavelengths: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSection {
    /// Switch count P.
    pub switches: usize,
    pub z0_ohm: f64,
    /// Hardwire bits for `eval`, one character per internal port.
    pub hardwire: Option<String>,
    /// Switch positions for `eval` (1-based internal ports).
    pub switch_positions: Option<Vec<usize>>,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self { switches: 6, z0_ohm: 50.0, hardwire: None, switch_positions: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySection {
    pub f_lower_hz: f64,
    pub f_upper_hz: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PasSection {
    pub support: PasSupport,
    pub density: f64,
}

impl Default for PasSection {
    fn default() -> Self {
        Self { support: PasSupport::UpperHemisphere, density: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Network and pattern bundle read from disk.
    Files,
    /// Synthetic pixel surrogate built from `[surrogate]`.
    Surrogate,
    /// Translated dipoles injected as the state set, bypassing the circuit model.
    DipoleOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub network: Option<PathBuf>,
    pub patterns: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    pub internal_ports: usize,
    pub seed: u64,
    pub layout: PixelLayout,
    pub coupling: CouplingParams,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        Self { internal_ports: 60, seed: 1, layout: PixelLayout::default(), coupling: CouplingParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSection {
    pub on: Circuit,
    pub off: Circuit,
}

fn default_switch() -> SwitchSection {
    SwitchSection { on: Circuit::ResistorOhm(5.0), off: Circuit::CapacitorF(0.05e-12) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub seed: u64,
    /// Step 1 candidate draws.
    pub budget: u64,
    pub target_matched_sets: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self { seed: 1, budget: 20_000, target_matched_sets: 100 }
    }
}

impl RunConfig {
    /// Parses and validates; relative model paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| CliError::Config(format!("{}: not valid UTF-8", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.model.network, &mut cfg.model.patterns].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok((cfg, bytes))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.array.ports < 2 {
            return bad(format!("array.ports = {} must be at least 2", self.array.ports));
        }
        if !(self.array.aperture_wavelengths > 0.0 && self.array.aperture_wavelengths.is_finite()) {
            return bad("array.aperture_wavelengths must be positive".into());
        }
        if !(self.design.z0_ohm > 0.0 && self.design.z0_ohm.is_finite()) {
            return bad("design.z0_ohm must be positive".into());
        }
        let f = &self.frequency;
        if f.samples == 0 || f.f_lower_hz.is_nan() || f.f_lower_hz <= 0.0 || f.f_upper_hz < f.f_lower_hz {
            return bad("frequency window needs 0 < f_lower_hz <= f_upper_hz and samples >= 1".into());
        }
        if !(self.pas.density > 0.0 && self.pas.density.is_finite()) {
            return bad("pas.density must be positive".into());
        }
        match self.model.kind {
            ModelKind::Files => {
                for (key, p) in [("model.network", &self.model.network), ("model.patterns", &self.model.patterns)] {
                    match p {
                        None => return bad(format!("{key} is required for kind = \"files\"")),
                        Some(p) if !p.exists() => return bad(format!("{key}: {} does not exist", p.display())),
                        _ => {}
                    }
                }
            }
            ModelKind::Surrogate => {
                if self.surrogate.internal_ports <= self.design.switches {
                    return bad(format!(
                        "surrogate.internal_ports = {} must exceed design.switches = {}",
                        self.surrogate.internal_ports, self.design.switches
                    ));
                }
            }
            ModelKind::DipoleOracle => {}
        }
        if self.model.kind != ModelKind::DipoleOracle {
            if self.design.switches == 0 || self.design.switches > 20 {
                return bad(format!("design.switches = {} must be in 1..=20", self.design.switches));
            }
            if self.array.ports > 1 << self.design.switches {
                return bad(format!(
                    "array.ports = {} exceeds the 2^{} states of one matched set",
                    self.array.ports, self.design.switches
                ));
            }
        }
        SwitchModel::new(self.switch.on.clone(), self.switch.off.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        self.ga.validate().map_err(|e| CliError::Config(format!("ga: {e}")))?;
        if self.search.budget == 0 || self.search.target_matched_sets == 0 {
            return bad("search.budget and search.target_matched_sets must be at least 1".into());
        }
        Ok(())
    }

    pub fn switch_model(&self) -> SwitchModel {
        SwitchModel { on: self.switch.on.clone(), off: self.switch.off.clone() }
    }

    pub fn pas(&self) -> PowerAngularSpectrum {
        PowerAngularSpectrum { support: self.pas.support, density: self.pas.density }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[array]
ports = 12
aperture_wavelengths = 0.5

[frequency]
f_lower_hz = 2.5e9
f_upper_hz = 2.5e9
samples = 1

[model]
kind = "surrogate"
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.design.switches, 6);
        assert_eq!(cfg.design.z0_ohm, 50.0);
        assert_eq!(cfg.surrogate.internal_ports, 60);
        assert_eq!(cfg.ga.population_size, 600);
        assert_eq!(cfg.search.target_matched_sets, 100);
        assert_eq!(cfg.quadrature, Resolution::default());
    }

    #[test]
    fn switch_circuits_parse() {
        let text = format!(
            "{MINIMAL}\n[switch]\non = {{ series = [{{ resistor_ohm = 4.5 }}, {{ inductor_h = 1e-10 }}] }}\noff = {{ parallel = [{{ capacitor_f = 5e-14 }}, {{ resistor_ohm = 1e4 }}] }}\n"
        );
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.switch.on, Circuit::Series(vec![Circuit::ResistorOhm(4.5), Circuit::InductorH(1e-10)]));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("ports = 12", "ports = 12\nport_count = 3");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.design.z0_ohm = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.design.switches = 3;
        assert!(cfg.validate().is_err(), "12 ports cannot fit in 8 states");
        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.model.kind = ModelKind::Files;
        assert!(cfg.validate().is_err());
    }
}
