//! Scenario configuration: one JSON file with geometry, source, noise, and
//! clock blocks plus a scenario block. Unknown keys are errors everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dtsim_core::analog::FrontendParams;
use dtsim_core::constants::PhysicsConstants;
use dtsim_core::geometry::{ArrayGeometry, ArrayParams};
use dtsim_core::physics::SceneParams;
use dtsim_core::readout::{CasConfig, ClockConfig, ReadoutConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Isotope definition file, relative to the config file.
    pub isotope_file: String,
    pub activity_uci: f64,
    /// Source position in mm relative to the chip center; defaults to
    /// on-axis at the geometry's source distance.
    #[serde(default)]
    pub position_mm: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearityConfig {
    pub activities_uci: Vec<f64>,
    #[serde(default = "default_acquisition_s")]
    pub acquisition_s: f64,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub a0_uci: f64,
    pub total_hours: f64,
    #[serde(default = "default_acquisition_s")]
    pub acquisition_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default = "default_acquisition_s")]
    pub acquisition_s: f64,
    /// Lookup-table candidate files, relative to the config file.
    pub table_files: Vec<String>,
    #[serde(default = "default_bin_width_kev")]
    pub bin_width_kev: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterizeConfig {
    pub pulse_magnitudes_v: Vec<f64>,
    #[serde(default = "default_repeats_per_pixel")]
    pub repeats_per_pixel: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenTableConfig {
    pub scenario_id: String,
    #[serde(default = "default_table_samples")]
    pub n_samples: u64,
    #[serde(default = "default_bin_width_kev")]
    pub bin_width_kev: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    #[serde(default = "default_window_s")]
    pub window_s: f64,
    #[serde(default = "default_max_dark_counts")]
    pub max_expected_dark_counts: f64,
    /// When set (seconds) and a source is configured, also run the
    /// energy calibration scene and report the chosen clock period.
    #[serde(default)]
    pub energy_calibration_s: Option<f64>,
}

fn default_acquisition_s() -> f64 {
    300.0
}
fn default_repeats() -> u32 {
    1
}
fn default_bin_width_kev() -> f64 {
    0.1
}
fn default_repeats_per_pixel() -> u32 {
    400
}
fn default_table_samples() -> u64 {
    100_000
}
fn default_window_s() -> f64 {
    30.0
}
fn default_max_dark_counts() -> f64 {
    0.02
}

/// Externally tagged scenario block, e.g. `{"linearity": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ScenarioConfig {
    #[serde(rename = "linearity")]
    Linearity(LinearityConfig),
    #[serde(rename = "decay")]
    Decay(DecayConfig),
    #[serde(rename = "spectrum")]
    Spectrum(SpectrumConfig),
    #[serde(rename = "characterize")]
    Characterize(CharacterizeConfig),
    #[serde(rename = "gen_table")]
    GenTable(GenTableConfig),
    #[serde(rename = "calibrate")]
    Calibrate(CalibrateConfig),
}

impl ScenarioConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ScenarioConfig::Linearity(_) => "linearity",
            ScenarioConfig::Decay(_) => "decay",
            ScenarioConfig::Spectrum(_) => "spectrum",
            ScenarioConfig::Characterize(_) => "characterize",
            ScenarioConfig::GenTable(_) => "gen_table",
            ScenarioConfig::Calibrate(_) => "calibrate",
        }
    }
}

fn default_clock_select_code() -> u8 {
    0
}
fn default_drain_interval_us() -> Option<f64> {
    Some(10.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub geometry: ArrayGeometry,
    #[serde(default)]
    pub array: ArrayParams,
    #[serde(default)]
    pub frontend: FrontendParams,
    #[serde(default)]
    pub physics: SceneParams,
    #[serde(default)]
    pub constants: PhysicsConstants,
    #[serde(default = "default_clock_select_code")]
    pub clock_select_code: u8,
    #[serde(default)]
    pub cas: CasConfig,
    #[serde(default = "default_drain_interval_us")]
    pub drain_interval_us: Option<f64>,
    #[serde(default)]
    pub source: Option<SourceConfig>,
    /// Attenuation table file, relative to the config file.
    #[serde(default)]
    pub attenuation_file: Option<String>,
    pub scenario: ScenarioConfig,
}

/// A parsed configuration plus everything needed to resolve its relative
/// paths and reproduce it bit-exactly in reports.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: SimConfig,
    pub base_dir: PathBuf,
    pub sha256_hex: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: SimConfig = serde_json::from_slice(&bytes)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let sha256_hex = hex_string(&hasher.finalize());
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { config, base_dir, sha256_hex })
    }

    /// Resolve a config-relative path.
    pub fn resolve(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry
            .validate()
            .map_err(|e| anyhow::anyhow!("geometry: {e}"))?;
        self.constants
            .validate()
            .map_err(|e| anyhow::anyhow!("constants: {e}"))?;
        if self.clock_select_code > 7 {
            bail!("clock_select_code must be 0-7, got {}", self.clock_select_code);
        }
        self.cas
            .validate()
            .map_err(|e| anyhow::anyhow!("cas: {e}"))?;
        match &self.scenario {
            ScenarioConfig::Linearity(l) => {
                if l.activities_uci.len() < 3 {
                    bail!("linearity needs at least 3 activities");
                }
                if l.repeats == 0 {
                    bail!("linearity repeats must be at least 1");
                }
            }
            ScenarioConfig::Decay(d) => {
                if !(d.total_hours > 0.0) {
                    bail!("decay total_hours must be positive");
                }
            }
            ScenarioConfig::Spectrum(s) => {
                if s.table_files.is_empty() {
                    bail!("spectrum needs at least one lookup table");
                }
            }
            ScenarioConfig::Characterize(c) => {
                if c.pulse_magnitudes_v.len() < 2 {
                    bail!("characterize needs at least 2 pulse magnitudes");
                }
            }
            ScenarioConfig::GenTable(g) => {
                if g.n_samples == 0 {
                    bail!("gen_table n_samples must be positive");
                }
            }
            ScenarioConfig::Calibrate(_) => {}
        }
        Ok(())
    }

    pub fn clock(&self) -> ClockConfig {
        ClockConfig::new(self.clock_select_code).expect("validated code")
    }

    pub fn readout(&self) -> ReadoutConfig {
        ReadoutConfig {
            clock: self.clock(),
            cas: self.cas.clone(),
            drain_interval_us: self.drain_interval_us,
        }
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
