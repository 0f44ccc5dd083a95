//! Experiment configuration: one JSON document covering world, data,
//! training, and evaluation, with defaults echoed into every artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::ContextTrainConfig;
use crate::error::{Error, Result};
use crate::gail::TrainConfig;
use crate::genmodel::{BcTrainConfig, ModelDims};
use crate::planner::PlanMode;
use crate::taskworld::WorldConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub demos_per_task: usize,
    /// Train share of the 70/30 trajectory split.
    pub train_fraction: f64,
    /// Share of train trajectories that get one hindsight relabel.
    pub her_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            demos_per_task: 200,
            train_fraction: 0.7,
            her_fraction: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub context_hidden_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latent_dim: 16,
            hidden_dim: 64,
            context_hidden_dim: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Horizons evaluated, each over sliding windows of the test split.
    pub horizons: Vec<usize>,
    pub max_queries_per_horizon: usize,
    pub plan_mode: PlanMode,
    pub plan_samples: usize,
    pub max_horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            horizons: vec![3, 4],
            max_queries_per_horizon: 2000,
            plan_mode: PlanMode::Mean,
            plan_samples: 1,
            max_horizon: 16,
        }
    }
}

/// Everything one experiment needs, serialized alongside its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub data: DataConfig,
    pub nets: NetConfig,
    pub context_train: ContextTrainConfig,
    pub bc_train: BcTrainConfig,
    pub gail_train: TrainConfig,
    pub eval: EvalConfig,
    /// Master seed; every stage derives its stream from this.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig {
                num_tasks: 8,
                steps_min: 4,
                steps_max: 6,
                action_vocab: 30,
                obs_dim: 40,
                noise_sigma: 0.05,
                interchangeable_fraction: 0.5,
                seed: 1,
            },
            data: DataConfig::default(),
            nets: NetConfig::default(),
            context_train: ContextTrainConfig::default(),
            bc_train: BcTrainConfig::default(),
            gail_train: TrainConfig::default(),
            eval: EvalConfig::default(),
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            state_dim: self.world.obs_dim,
            latent_dim: self.nets.latent_dim,
            action_vocab: self.world.action_vocab,
            hidden_dim: self.nets.hidden_dim,
        }
    }

    /// Cross-field consistency checks, run at load time.
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.gail_train.validate()?;
        if !(0.0..1.0).contains(&self.data.train_fraction) || self.data.train_fraction <= 0.0 {
            return Err(Error::InvalidConfig(
                "train_fraction must lie in (0, 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.data.her_fraction) {
            return Err(Error::InvalidConfig("her_fraction must lie in [0, 1]".into()));
        }
        if self.data.demos_per_task == 0 {
            return Err(Error::InvalidConfig("demos_per_task must be positive".into()));
        }
        if self.nets.latent_dim == 0 || self.nets.hidden_dim == 0 || self.nets.context_hidden_dim == 0 {
            return Err(Error::InvalidConfig("network dims must be positive".into()));
        }
        if self.eval.horizons.is_empty() {
            return Err(Error::InvalidConfig("at least one eval horizon".into()));
        }
        for &t in &self.eval.horizons {
            if t < 2 {
                return Err(Error::InvalidConfig(format!("horizon {t} below 2")));
            }
            if t > self.world.steps_max {
                return Err(Error::InvalidConfig(format!(
                    "horizon {t} exceeds longest task ({} steps): no windows exist",
                    self.world.steps_max
                )));
            }
            if t > self.eval.max_horizon {
                return Err(Error::InvalidConfig(format!(
                    "horizon {t} exceeds max_horizon {}",
                    self.eval.max_horizon
                )));
            }
        }
        if self.eval.plan_samples == 0 {
            return Err(Error::InvalidConfig("plan_samples must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn load_rejects_inconsistent_horizons() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.eval.horizons = vec![3, 9];
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
        assert!(ExperimentConfig::load(&path).is_err());
    }

    #[test]
    fn roundtrip_preserves_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let path = dir.path().join("cfg.json");
        cfg.save(&path).unwrap();
        let back = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.json");
        std::fs::write(&path, r#"{"seed": 9}"#).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.world.action_vocab, 30);
    }
}
