use crate::error::{CliError, CliResult};
use conplan::eval::EvalConfig;
use conplan::planner::ScoringMode;
use conplan::scene::{SuiteConfig, SuiteKind};
use conplan::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Everything a run needs, loadable from one TOML file. Command-line flags
/// override the file; the resolved value is written next to every output.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Worker threads (0 = all cores).
    pub jobs: usize,
    pub inputs: Inputs,
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episodes: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub kind: SuiteKind,
    pub count: usize,
    pub seed: u64,
    pub scenarios: SuiteConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            kind: SuiteKind::Mixed,
            count: 20,
            seed: 0,
            scenarios: SuiteConfig::default(),
        }
    }
}

/// Closed-loop options. Without `mode` the scoring follows the checkpoint:
/// baseline for models trained without constraints, constrained otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub replan_every: usize,
    pub goal_radius: f64,
    pub timeout_slack: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ScoringMode>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        EvalSection {
            replan_every: d.replan_every,
            goal_radius: d.goal_radius,
            timeout_slack: d.timeout_slack,
            mode: None,
        }
    }
}

impl EvalSection {
    pub fn resolve(&self, mode: ScoringMode) -> EvalConfig {
        EvalConfig {
            replan_every: self.replan_every,
            goal_radius: self.goal_radius,
            timeout_slack: self.timeout_slack,
            mode,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| conplan::Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Validation(format!("cannot serialize config: {e}")))
    }

    /// Writes the resolved config as `config.toml` in `dir`.
    pub fn write_resolved(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| conplan::Error::io(&path, e))?;
        Ok(())
    }
}
