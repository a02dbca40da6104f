//! Scenario configuration file.
//!
//! Powers are written in dBm and converted to watts by [`ScenarioConfig::resolve`].
//! Unknown keys are rejected at every level.

use std::path::Path;

use passlab_core::beamforming::{dbm_to_watts, PowerConfig};
use passlab_core::channel::{BlockageModel, RadioConfig};
use passlab_core::codebook::{generate_grid_codebook, Codebook, GridPattern, GridSpec, JointMode, ProbeMode};
use passlab_core::geometry::{Point3, SystemGeometry};
use passlab_core::predictor::TrainConfig;
use passlab_core::scene::Scenario;
use passlab_core::tokens::{CameraModel, TokenDims};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub waveguides: usize,
    pub pas_per_waveguide: usize,
    pub x_max: f64,
    pub y_max: f64,
    pub height: f64,
    pub waveguide_spacing: f64,
    pub min_pa_spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    pub carrier_hz: f64,
    pub n_eff: f64,
    /// Overrides the free-space amplitude `η`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    pub p_max_dbm: f64,
    pub noise_dbm: f64,
    pub users: usize,
    /// Per-user power split; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockageSection {
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSection {
    pub grid_points: usize,
    pub pattern: GridPattern,
    pub antenna_step: f64,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub slot: f64,
    pub max_speed: f64,
    pub horizon: usize,
    pub top_s: usize,
    pub joint_mode: JointMode,
    pub joint_cap: usize,
    pub probe_mode: ProbeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialsSection {
    pub simulate: usize,
    pub dataset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutagePolicy {
    /// One antenna per waveguide moved to the user.
    Movable,
    /// A single fixed antenna at the conventional site.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageSection {
    pub rate_threshold: f64,
    pub user_x: f64,
    pub trials: usize,
    pub densities: Vec<f64>,
    pub p_max_dbm: Vec<f64>,
    pub policy: OutagePolicy,
    /// Conventional antenna site; region center at height `d0` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conventional_site: Option<Point3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub trials: usize,
    /// Training samples per point for the trained variant; 0 skips it.
    pub train_samples: usize,
    pub snr_db: Vec<f64>,
    pub sinr_min_db: Vec<f64>,
    pub power_dbm: Vec<f64>,
    pub pas: Vec<usize>,
    pub grid_resolution: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub radio: RadioSection,
    pub power: PowerSection,
    pub blockage: BlockageSection,
    pub codebook: CodebookSection,
    pub tokens: TokenDims,
    pub scene: SceneSection,
    pub train: TrainConfig,
    pub trials: TrialsSection,
    pub outage: OutageSection,
    pub sweep: SweepSection,
}

/// Configuration with every unit converted and every object validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub grid: GridSpec,
    pub probe_mode: ProbeMode,
}

fn bad(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {reason}"))
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form (sorted keys, compact).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn geometry(&self) -> Result<SystemGeometry, CliError> {
        let g = &self.geometry;
        SystemGeometry::new(
            g.waveguides,
            g.pas_per_waveguide,
            g.x_max,
            g.y_max,
            g.height,
            g.waveguide_spacing,
            g.min_pa_spacing,
        )
        .map_err(|e| bad("geometry", e))
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let geometry = self.geometry()?;
        let mut radio = RadioConfig::new(self.radio.carrier_hz, self.radio.n_eff).map_err(|e| bad("radio", e))?;
        if let Some(gain) = self.radio.gain {
            if !(gain.is_finite() && gain > 0.0) {
                return Err(bad("radio.gain", "must be positive"));
            }
            radio = radio.with_gain(gain);
        }
        let p = &self.power;
        if p.users == 0 {
            return Err(bad("power.users", "must be at least 1"));
        }
        let alpha = p.alpha.clone().unwrap_or_else(|| vec![1.0 / p.users as f64; p.users]);
        if alpha.len() != p.users {
            return Err(bad("power.alpha", "length must equal power.users"));
        }
        let power = PowerConfig::new(dbm_to_watts(p.p_max_dbm), dbm_to_watts(p.noise_dbm), alpha).map_err(|e| bad("power", e))?;
        let blockage = BlockageModel::exponential(self.blockage.density).map_err(|e| bad("blockage.density", e))?;
        self.tokens.validate().map_err(|e| bad("tokens", e))?;
        let s = &self.scene;
        if !(s.slot > 0.0) {
            return Err(bad("scene.slot", "must be positive"));
        }
        if !(s.max_speed >= 0.0) {
            return Err(bad("scene.max_speed", "must be non-negative"));
        }
        if s.top_s == 0 {
            return Err(bad("scene.top_s", "must be at least 1"));
        }
        let c = &self.codebook;
        if c.grid_points == 0 {
            return Err(bad("codebook.grid_points", "must be at least 1"));
        }
        let grid = GridSpec {
            grid_points: c.grid_points,
            pattern: c.pattern,
            antenna_step: c.antenna_step,
            cap: c.cap,
        };
        let o = &self.outage;
        if o.densities.is_empty() || o.densities.iter().any(|d| !(*d >= 0.0)) {
            return Err(bad("outage.densities", "must be a non-empty list of non-negative values"));
        }
        if o.p_max_dbm.is_empty() {
            return Err(bad("outage.p_max_dbm", "must be non-empty"));
        }
        if o.trials == 0 {
            return Err(bad("outage.trials", "must be at least 1"));
        }
        if !(o.rate_threshold > 0.0) {
            return Err(bad("outage.rate_threshold", "must be positive"));
        }
        if !(0.0..=geometry.waveguide_length).contains(&o.user_x) {
            return Err(bad("outage.user_x", "must lie on the waveguide"));
        }
        let camera = CameraModel::behind_region(geometry.waveguide_length, geometry.region_depth);
        let scenario = Scenario {
            geometry,
            radio,
            power,
            blockage,
            dims: self.tokens,
            camera,
            slot: s.slot,
            max_speed: s.max_speed,
            horizon: s.horizon,
            top_s: s.top_s,
            joint_mode: s.joint_mode,
            joint_cap: s.joint_cap,
        };
        Ok(Resolved {
            scenario,
            grid,
            probe_mode: s.probe_mode,
        })
    }
}

impl Resolved {
    pub fn codebook(&self) -> Result<Codebook, CliError> {
        generate_grid_codebook(&self.scenario.geometry, &self.grid).map_err(|e| bad("codebook", e))
    }
}
