//! Experiment configuration: everything a run needs, serialized next to
//! every output so results are reproducible from the manifest alone.

use crate::error::{Error, Result};
use crate::genetics::GAConfig;
use crate::rl::TeacherConfig;
use crate::worldmodel::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Fitness = discounted return on the world model.
    Gprl,
    /// Fitness = negative regression error against teacher actions.
    Regress,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub env: String,
    pub mode: Mode,
    pub seed: u64,
    /// Transitions to collect for world-model training.
    pub dataset_size: usize,
    pub model: TrainConfig,
    pub ga: GAConfig,
    pub teacher: TeacherConfig,
    /// Rollout horizon T and terminal reward weight q.
    pub horizon: usize,
    pub q: f64,
    /// Start states sampled (seeded) for GA fitness rollouts.
    pub train_starts: usize,
    /// Fresh start states for real-dynamics evaluation.
    pub eval_starts: usize,
    /// Starts whose teacher rollouts form the imitation dataset; its size
    /// is imitation_starts * horizon.
    pub imitation_starts: usize,
}

impl ExperimentConfig {
    /// Built-in profiles. "full" carries full experiment population,
    /// generation, and start-state counts; "desk" scales them down for
    /// quick runs and CI.
    pub fn profile(name: &str, env: &str) -> Result<ExperimentConfig> {
        let (horizon, q) = match env {
            "mc" => (200, 0.05),
            "cpb" => (100, 0.05),
            other => {
                return Err(Error::Usage(format!(
                    "unknown environment {other:?} (expected \"mc\" or \"cpb\")"
                )))
            }
        };
        let mut cfg = ExperimentConfig {
            schema_version: 1,
            env: env.to_string(),
            mode: Mode::Gprl,
            seed: 0,
            dataset_size: 10_000,
            model: TrainConfig::default(),
            ga: GAConfig::default(),
            teacher: TeacherConfig::default(),
            horizon,
            q,
            train_starts: 30,
            eval_starts: 100,
            imitation_starts: 30,
        };
        match name {
            "desk" => {
                cfg.ga.population_size = 100;
                cfg.ga.generations = 100;
            }
            "full" => {
                cfg.ga.generations = 1000;
                cfg.ga.population_size = if env == "mc" { 100 } else { 1000 };
                cfg.train_starts = 1000;
                cfg.eval_starts = 1000;
                // Imitation datasets of 70,000 samples (starts * horizon).
                cfg.imitation_starts = 70_000 / horizon;
                cfg.teacher.epochs = 500;
            }
            other => {
                return Err(Error::Usage(format!(
                    "unknown profile {other:?} (expected \"full\" or \"desk\")"
                )))
            }
        }
        Ok(cfg)
    }

    /// Full-scale regression baselines use larger populations than GPRL runs.
    pub fn with_mode(mut self, mode: Mode, profile: &str) -> ExperimentConfig {
        self.mode = mode;
        if mode == Mode::Regress && profile == "full" {
            self.ga.population_size = if self.env == "mc" { 1000 } else { 10_000 };
        }
        self
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: bad config: {e}", path.display())))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
