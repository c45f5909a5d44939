//! Application configuration file: one JSON document with sections for the
//! world generator, camera, planner, safety margins, losses, training and
//! the benchmark matrix. Every field has a default, so a partial file (or
//! none at all) works.

use crate::camera::Intrinsics;
use crate::harness::{BenchConfig, DatasetConfig};
use crate::micronet::{AdamConfig, PolicyConfig};
use crate::objectives::{GuidanceConfig, LossWeights};
use crate::planner::PlannerConfig;
use crate::shield::SafetyParams;
use crate::world::WorldGenConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub max_range: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 72,
            hfov_deg: 87.0,
            max_range: 5.0,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::default_for(self.width, self.height, self.hfov_deg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LossesConfig {
    pub weights: LossWeights,
    pub guidance: GuidanceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub dataset: DatasetConfig,
    pub adam: AdamConfig,
    pub policy: PolicyConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            steps: 200,
            batch_size: 8,
            dataset: DatasetConfig::default(),
            adam: AdamConfig::default(),
            policy: PolicyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AppConfig {
    pub world: WorldGenConfig,
    pub camera: CameraConfig,
    pub planner: PlannerConfig,
    pub safety: SafetyParams,
    pub losses: LossesConfig,
    pub training: TrainingConfig,
    pub bench: BenchConfig,
}

impl AppConfig {
    /// Parse a config document and propagate the shared sections (safety,
    /// guidance) into the planner, which embeds copies.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut config: AppConfig = serde_json::from_str(text)?;
        config.planner.safety = config.safety;
        config.planner.guidance = config.losses.guidance;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let config = AppConfig::default();
        let text = config.to_json();
        let back = AppConfig::from_json(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let config = AppConfig::from_json(r#"{"camera": {"width": 64}}"#).unwrap();
        assert_eq!(config.camera.width, 64);
        assert_eq!(config.camera.height, 72);
        assert_eq!(config.world.wall_count, 300);
    }

    #[test]
    fn safety_section_propagates_into_planner() {
        let config =
            AppConfig::from_json(r#"{"safety": {"radius": 0.4, "buffer": 0.1, "oov_policy": "Conservative"}}"#)
                .unwrap();
        assert_eq!(config.planner.safety.radius, 0.4);
        assert_eq!(config.planner.safety.buffer, 0.1);
    }
}
