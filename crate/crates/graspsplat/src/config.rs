//! TOML run configuration. Every key is optional; unknown keys are errors.
//!
//! ```toml
//! [train]
//! iterations = 5000
//! accumulation_steps = 4
//! init_per_bone = 300      # hand
//! init_count = 3000        # object
//! [train.lr]
//! position = 1.6e-4
//! [train.weights]
//! l1 = 0.7
//! [contact]
//! tau = 0.004
//! mode = "intensity"
//! [pose]
//! iterations = 2000
//! ```

use std::path::Path;

use graspsplat_core::contact::{AccumulationMode, DEFAULT_TAU};
use graspsplat_core::loss::LossWeights;
use graspsplat_core::skinning::DEFAULT_GRID_DIMS;
use graspsplat_core::pose_fit::{IkParams, OneEuroParams, DEFAULT_IK_ITERATIONS, DEFAULT_IK_LR, DEFAULT_LAMBDA};
use graspsplat_core::train::{LearningRates, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::read_bytes;

pub const DEFAULT_INIT_PER_BONE: usize = 300;
pub const DEFAULT_INIT_COUNT: usize = 3000;
pub const DEFAULT_MIN_VIEWS: usize = 2;
pub const DEFAULT_STOP_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub train: TrainSection,
    pub contact: ContactSection,
    pub pose: PoseSection,
}

impl Default for Config {
    fn default() -> Self {
        Self { train: TrainSection::default(), contact: ContactSection::default(), pose: PoseSection::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub accumulation_steps: usize,
    pub prune_interval: usize,
    pub prune_threshold: f64,
    pub mask_cull_interval: usize,
    pub mask_min_views: usize,
    pub isotropy_target: f64,
    pub background: [f64; 3],
    pub init_per_bone: usize,
    pub init_count: usize,
    /// Voxel counts of the skinning grid built when no grid file is given.
    pub grid_dims: [usize; 3],
    pub lr: LrSection,
    pub weights: WeightSection,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            iterations: d.iterations,
            accumulation_steps: d.accumulation_steps,
            prune_interval: d.prune_interval,
            prune_threshold: d.prune_threshold,
            mask_cull_interval: d.mask_cull_interval,
            mask_min_views: d.mask_min_views,
            isotropy_target: d.isotropy_target,
            background: d.background,
            init_per_bone: DEFAULT_INIT_PER_BONE,
            init_count: DEFAULT_INIT_COUNT,
            grid_dims: DEFAULT_GRID_DIMS,
            lr: LrSection::default(),
            weights: WeightSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSection {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh: f64,
}

impl Default for LrSection {
    fn default() -> Self {
        let d = LearningRates::default();
        Self { position: d.position, rotation: d.rotation, log_scale: d.log_scale, opacity: d.opacity, sh: d.sh }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSection {
    pub l1: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub iso: f64,
}

impl Default for WeightSection {
    fn default() -> Self {
        let d = LossWeights::default();
        Self { l1: d.l1, ssim: d.ssim, perceptual: d.perceptual, iso: d.iso }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    #[default]
    Intensity,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactSection {
    pub tau: f64,
    pub mode: ModeName,
}

impl Default for ContactSection {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, mode: ModeName::Intensity }
    }
}

impl ContactSection {
    pub fn accumulation_mode(&self) -> AccumulationMode {
        match self.mode {
            ModeName::Intensity => AccumulationMode::Intensity,
            ModeName::Distance => AccumulationMode::Distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseSection {
    pub iterations: usize,
    pub lambda: f64,
    pub lr: f64,
    /// Views needed to triangulate a joint.
    pub min_views: usize,
    /// IK stops once every joint is within this fraction of the hand scale.
    pub stop_fraction: f64,
    pub min_cutoff: f64,
    pub beta: f64,
    pub d_cutoff: f64,
}

impl Default for PoseSection {
    fn default() -> Self {
        let e = OneEuroParams::default();
        Self {
            iterations: DEFAULT_IK_ITERATIONS,
            lambda: DEFAULT_LAMBDA,
            lr: DEFAULT_IK_LR,
            min_views: DEFAULT_MIN_VIEWS,
            stop_fraction: DEFAULT_STOP_FRACTION,
            min_cutoff: e.min_cutoff,
            beta: e.beta,
            d_cutoff: e.d_cutoff,
        }
    }
}

impl PoseSection {
    pub fn ik_params(&self, stop_error: Option<f64>) -> IkParams {
        IkParams { lambda: self.lambda, lr: self.lr, iterations: self.iterations, stop_error }
    }

    pub fn one_euro(&self) -> OneEuroParams {
        OneEuroParams { min_cutoff: self.min_cutoff, beta: self.beta, d_cutoff: self.d_cutoff }
    }
}

impl Config {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let cfg: Config =
            toml::from_str(text).map_err(|e| Error::Config { path: path.to_path_buf(), message: e.message().to_string() })?;
        cfg.train_config(0)
            .validate()
            .map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
        if !(cfg.contact.tau > 0.0 && cfg.contact.tau.is_finite()) {
            return Err(Error::Config { path: path.to_path_buf(), message: "contact.tau must be positive".into() });
        }
        if !(cfg.pose.stop_fraction >= 0.0 && cfg.pose.stop_fraction.is_finite()) {
            return Err(Error::Config { path: path.to_path_buf(), message: "pose.stop_fraction must be finite and >= 0".into() });
        }
        Ok(cfg)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let bytes = read_bytes(p)?;
                let text = String::from_utf8(bytes).map_err(|_| Error::format(p, "config is not UTF-8"))?;
                Self::parse(p, &text)
            }
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            iterations: t.iterations,
            lr: LearningRates {
                position: t.lr.position,
                rotation: t.lr.rotation,
                log_scale: t.lr.log_scale,
                opacity: t.lr.opacity,
                sh: t.lr.sh,
            },
            accumulation_steps: t.accumulation_steps,
            prune_interval: t.prune_interval,
            prune_threshold: t.prune_threshold,
            mask_cull_interval: t.mask_cull_interval,
            mask_min_views: t.mask_min_views,
            isotropy_target: t.isotropy_target,
            weights: LossWeights { l1: t.weights.l1, ssim: t.weights.ssim, perceptual: t.weights.perceptual, iso: t.weights.iso },
            background: t.background,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_core() {
        let cfg = Config::parse(Path::new("c.toml"), "").unwrap();
        assert_eq!(cfg.train_config(3), TrainConfig { seed: 3, ..TrainConfig::default() });
        assert_eq!(cfg.contact.tau, 0.004);
        assert_eq!((cfg.pose.lambda, cfg.pose.lr), (1.0, 0.001));
        assert_eq!(cfg.train.accumulation_steps, 4);
    }

    #[test]
    fn values_override() {
        let cfg = Config::parse(
            Path::new("c.toml"),
            "[train]\niterations = 7\n[train.weights]\nssim = 0.2\n[contact]\ntau = 0.01\nmode = \"distance\"\n",
        )
        .unwrap();
        assert_eq!(cfg.train.iterations, 7);
        assert_eq!(cfg.train.weights.ssim, 0.2);
        assert_eq!(cfg.contact.accumulation_mode(), AccumulationMode::Distance);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::parse(Path::new("c.toml"), "[train]\niteratons = 7\n").unwrap_err();
        assert!(err.to_string().contains("iteratons"), "{err}");
        assert_eq!(err.exit_code(), 2);
        let err = Config::parse(Path::new("c.toml"), "bogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::parse(Path::new("c.toml"), "[contact]\ntau = 0.0\n").is_err());
        assert!(Config::parse(Path::new("c.toml"), "[train]\naccumulation_steps = 0\n").is_err());
    }
}
