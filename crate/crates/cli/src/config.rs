use std::fs;
use std::path::Path;

use pcal::correction::LoopConfig;
use pcal::dataset::GenConfig;
use pcal::regressor::TrainConfig;
use pcal::SceneConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_trials: usize,
    pub seed: u64,
    /// Minimum convergence rate for a zero exit status.
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_trials: 30,
            seed: 2024,
            threshold: 0.9,
        }
    }
}

/// Everything a run needs, from one JSON file. Missing sections and fields
/// take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub gen: GenConfig,
    pub train: TrainConfig,
    #[serde(rename = "loop")]
    pub loop_: LoopConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
    }

    pub fn override_seed(&mut self, seed: u64) {
        self.gen.rng_seed = seed;
        self.train.rng_seed = seed;
        self.eval.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        fn at(section: &str, e: impl std::fmt::Display) -> CliError {
            CliError::invalid(format!("{section}: {e}"))
        }
        self.scene.validate().map_err(|e| at("scene", e))?;
        self.gen.validate().map_err(|e| at("gen", e))?;
        self.train.validate().map_err(|e| at("train", e))?;
        self.loop_.validate().map_err(|e| at("loop", e))?;
        if self.eval.n_trials < 1 {
            return Err(CliError::invalid("eval: n_trials must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(CliError::invalid("eval: threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}
