//! Run configuration: one TOML file with a section per component.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::drem::EstimatorConfig;
use crate::error::{DseError, Result};
use crate::machine::{GovernorTurbineParams, SgParams};
use crate::network::NetworkParams;
use crate::pipeline::PipelineSettings;
use crate::sim::SimulationConfig;

/// Input and output locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory for files written by the command-line tool.
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("."),
        }
    }
}

/// Everything a run needs. Missing sections and keys take their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed of the measurement-noise generator.
    pub seed: u64,
    pub machine: SgParams,
    pub network: NetworkParams,
    pub governor: GovernorTurbineParams,
    pub estimator: EstimatorConfig,
    pub simulation: SimulationConfig,
    pub pipeline: PipelineSettings,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Every invariant violation as `key.path: reason`.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.machine.violations("machine");
        v.extend(self.network.violations("network"));
        v.extend(self.governor.violations("governor"));
        v.extend(self.estimator.violations("estimator"));
        v.extend(self.simulation.violations("simulation"));
        v.extend(self.pipeline.violations("pipeline"));
        v
    }

    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| DseError::ConfigParse(e.to_string()))?;
        let v = cfg.violations();
        if !v.is_empty() {
            return Err(DseError::ConfigInvalid(v));
        }
        if cfg.estimator.c3.is_some() {
            log::info!("estimator.c3 is accepted for compatibility and ignored");
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DseError::ConfigParse(e.to_string()))
    }
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path.as_ref())?;
    RunConfig::from_toml_str(&text)
}
