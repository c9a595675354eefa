use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DataConfig, ExperimentError, TargetConfig};
use crate::cloth::{ClothMesh, ClothParams};
use crate::koopman::FitOptions;
use crate::mpc::OcpConfig;
use crate::sim::{SimConfig, SimContext};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub rows: usize,
    pub cols: usize,
    #[serde(rename = "width_m")]
    pub width: f64,
    #[serde(rename = "height_m")]
    pub height: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { rows: 9, cols: 7, width: 0.59, height: 0.42 }
    }
}

impl MeshConfig {
    /// The full-resolution 17×13 mesh of the same cloth.
    pub fn full_scale() -> Self {
        Self { rows: 17, cols: 13, ..Self::default() }
    }

    pub fn build(&self) -> Result<ClothMesh, ExperimentError> {
        Ok(ClothMesh::new(self.rows, self.cols, self.width, self.height).map_err(crate::sim::SimError::from)?)
    }
}

/// Length of each closed-loop fold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub total_steps: usize,
    pub settle_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { total_steps: 150, settle_steps: 30 }
    }
}

/// Pass criteria used by `eval`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Largest acceptable relative folding error per target.
    pub max_fold_error: f64,
    /// Targets that must meet `max_fold_error`.
    pub min_passing: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { max_fold_error: 0.10, min_passing: 4 }
    }
}

/// Everything a run needs, stored as TOML with unit-suffixed keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub seed: u64,
    pub mesh: MeshConfig,
    pub cloth: ClothParams,
    pub sim: SimConfig,
    pub data: DataConfig,
    pub targets: TargetConfig,
    pub model: FitOptions,
    pub mpc: OcpConfig,
    pub run: RunConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            seed: 0,
            mesh: MeshConfig::default(),
            cloth: ClothParams::default(),
            sim: SimConfig::default(),
            data: DataConfig::default(),
            targets: TargetConfig::default(),
            model: FitOptions::default(),
            mpc: OcpConfig::default(),
            run: RunConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ExperimentError> {
        toml::to_string_pretty(self).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.format_version != CONFIG_FORMAT_VERSION {
            return bad(format!("unsupported config version {}", self.format_version));
        }
        if self.data.n_traj == 0 {
            return bad("n_traj must be at least 1".into());
        }
        if self.run.total_steps == 0 {
            return bad("total_steps must be at least 1".into());
        }
        if !(self.eval.max_fold_error >= 0.0) || self.eval.min_passing > self.targets.n_targets {
            return bad("eval thresholds are inconsistent with the target count".into());
        }
        self.mesh.build()?;
        self.cloth.validate().map_err(crate::sim::SimError::from)?;
        self.sim.validate()?;
        self.mpc.validate()?;
        Ok(())
    }

    /// Shared simulator context for this configuration.
    pub fn context(&self) -> Result<Arc<SimContext>, ExperimentError> {
        Ok(Arc::new(SimContext::new(self.mesh.build()?, self.cloth, self.sim)?))
    }
}
