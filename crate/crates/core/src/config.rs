//! Run configuration. Every field has a default, so an empty JSON object
//! is a valid config file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::VarianceMode;
use crate::error::{Error, Result};
use crate::labels::{ClassMap, DEFAULT_MIN_COMPONENT_SIZE};
use crate::morphology::{Connectivity, StructuringElement};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub cleanup: CleanupConfig,
    pub preprocess: PreprocessConfig,
    pub pathology: PathologyConfig,
    pub diffusion: DiffusionConfig,
    pub training: TrainingConfig,
}

impl Config {
    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.pathology;
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("pathology.vm_budget", p.vm_budget)?;
        unit("pathology.hypoplasia_max_shrink", p.hypoplasia_max_shrink)?;
        unit("pathology.microcephaly_max_shrink", p.microcephaly_max_shrink)?;
        if !(p.vm_clearance >= 0.0 && p.vm_clearance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pathology.vm_clearance = {} must be a finite non-negative distance",
                p.vm_clearance
            )));
        }
        if self.preprocess.target_dims.contains(&0) {
            return Err(Error::InvalidArgument("preprocess.target_dims must be positive".into()));
        }
        let d = &self.diffusion;
        if d.timesteps == 0 || !(0.0 < d.beta_start && d.beta_start <= d.beta_end && d.beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "diffusion schedule T = {}, beta = ({}, {}) is invalid",
                d.timesteps, d.beta_start, d.beta_end
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanupConfig {
    /// Components strictly smaller than this are reassigned.
    pub min_component_size: usize,
    pub connectivity: Connectivity,
}

impl Default for CleanupConfig {
    fn default() -> Self {
        Self {
            min_component_size: DEFAULT_MIN_COMPONENT_SIZE,
            connectivity: Connectivity::TwentySix,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_dims: [usize; 3],
    /// Background margin (voxels) kept around the foreground when cropping.
    pub crop_margin: usize,
    pub class_map: ClassMap,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_dims: [160; 3],
            crop_margin: 2,
            class_map: ClassMap::default(),
        }
    }
}

/// How the hypoplasia shrink cap is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShrinkReading {
    /// The cap is a linear x-y extent: factor `1 - cap * severity`.
    #[default]
    Linear,
    /// The cap is a cross-sectional area: factor `sqrt(1 - cap * severity)`
    /// per in-plane axis.
    Volumetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathologyConfig {
    /// Largest ventricle volume as a fraction of the hemisphere's WM volume.
    pub vm_budget: f64,
    /// Claimed ventricle voxels keep at least this Euclidean distance
    /// (voxels) from every non-WM, non-ventricle structure.
    pub vm_clearance: f64,
    pub vm_element: StructuringElement,
    /// Upper bound on dilation steps searched for the budget.
    pub vm_max_iterations: usize,
    /// Rotation about z (degrees) aligning the anterior-posterior axis with
    /// y before the hemisphere split.
    pub hemisphere_rotation: Option<f64>,
    pub hypoplasia_max_shrink: f64,
    pub hypoplasia_reading: ShrinkReading,
    pub microcephaly_max_shrink: f64,
}

impl Default for PathologyConfig {
    fn default() -> Self {
        Self {
            vm_budget: 0.65,
            vm_clearance: 2.0,
            vm_element: StructuringElement::face6(),
            vm_max_iterations: 256,
            hemisphere_rotation: None,
            hypoplasia_max_shrink: 0.20,
            hypoplasia_reading: ShrinkReading::Linear,
            microcephaly_max_shrink: 0.10,
        }
    }
}

impl PathologyConfig {
    /// Per-axis in-plane hypoplasia factor for `severity`.
    pub fn hypoplasia_factor(&self, severity: f64) -> f64 {
        let linear = 1.0 - self.hypoplasia_max_shrink * severity;
        match self.hypoplasia_reading {
            ShrinkReading::Linear => linear,
            ShrinkReading::Volumetric => linear.sqrt(),
        }
    }

    pub fn microcephaly_factor(&self, severity: f64) -> f64 {
        1.0 - self.microcephaly_max_shrink * severity
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub variance: VarianceMode,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            variance: VarianceMode::Stochastic,
        }
    }
}

/// Hyperparameters of the external denoiser training run. Recorded for
/// the run record only; nothing here trains a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: u64,
    pub learning_rate: f64,
    pub learning_rate_late: f64,
    pub learning_rate_switch_epoch: u64,
    pub ema_decay: f64,
    pub loss: String,
    pub optimizer: String,
    pub image_size: [usize; 3],
    pub classes: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 500_000,
            learning_rate: 1e-5,
            learning_rate_late: 1e-6,
            learning_rate_switch_epoch: 100_000,
            ema_decay: 0.995,
            loss: "l1".into(),
            optimizer: "adam".into(),
            image_size: [160; 3],
            classes: 4,
        }
    }
}

impl TrainingConfig {
    pub fn learning_rate_at(&self, epoch: u64) -> f64 {
        if epoch < self.learning_rate_switch_epoch {
            self.learning_rate
        } else {
            self.learning_rate_late
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let cfg: Config = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, Config::default());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<Config>(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_override_and_unknown_field() {
        let cfg: Config =
            serde_json::from_str(r#"{"pathology": {"hypoplasia_reading": "volumetric"}}"#).unwrap();
        assert_eq!(cfg.pathology.vm_budget, 0.65);
        assert!((cfg.pathology.hypoplasia_factor(1.0) - 0.8f64.sqrt()).abs() < 1e-15);
        assert!(serde_json::from_str::<Config>(r#"{"pathology": {"budget": 1}}"#).is_err());
    }

    #[test]
    fn factors_and_rates() {
        let p = PathologyConfig::default();
        assert_eq!(p.hypoplasia_factor(1.0), 0.8);
        assert_eq!(p.hypoplasia_factor(0.0), 1.0);
        assert_eq!(p.microcephaly_factor(1.0), 0.9);
        let t = TrainingConfig::default();
        assert_eq!(t.learning_rate_at(99_999), 1e-5);
        assert_eq!(t.learning_rate_at(100_000), 1e-6);
    }

    #[test]
    fn validation() {
        let mut cfg = Config::default();
        cfg.diffusion.beta_end = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = Config::default();
        cfg.pathology.vm_budget = 1.5;
        assert!(cfg.validate().is_err());
        assert!(Config::default().validate().is_ok());
    }
}
