//! JSON experiment configuration shared by every subcommand.
//!
//! ```json
//! {
//!   "game": "tictacmo",
//!   "network": { "preset": "desk", "channels": 16 },
//!   "train": { "batch_size": 64, "learning_rate": 0.001, "steps_per_iteration": 200 },
//!   "selfplay": { "search": { "rollouts_per_turn": 50, "c_puct": 3.0 }, "first_move_noise": true },
//!   "gauntlet": { "subject_rollouts": 50, "opponent_rollout_ladder": [50, 100, 200] },
//!   "iterations": 30
//! }
//! ```
//!
//! Every section and field is optional; missing values take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::GauntletConfig;
use crate::game::{GameDescriptor, GameError};
use crate::network::{NetworkConfig, PolicyMask};
use crate::selfplay::SelfPlayConfig;
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("unknown network preset '{0}' (expected reference, desk or tiny)")]
    UnknownPreset(String),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Network preset plus optional per-field overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub preset: Option<String>,
    pub channels: Option<usize>,
    pub num_blocks: Option<usize>,
    pub se_reduction: Option<usize>,
    pub value_hidden: Option<usize>,
    pub policy_mask: Option<PolicyMask>,
}

impl NetworkSpec {
    /// Resolves against a game; the default preset is `desk`.
    pub fn resolve(&self, game: &GameDescriptor) -> Result<NetworkConfig, ConfigError> {
        let mut cfg = match self.preset.as_deref().unwrap_or("desk") {
            "reference" => NetworkConfig::reference(game),
            "desk" => NetworkConfig::desk(game),
            "tiny" => NetworkConfig::tiny(game),
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        cfg.channels = self.channels.unwrap_or(cfg.channels);
        cfg.num_blocks = self.num_blocks.unwrap_or(cfg.num_blocks);
        cfg.se_reduction = self.se_reduction.unwrap_or(cfg.se_reduction);
        cfg.value_hidden = self.value_hidden.unwrap_or(cfg.value_hidden);
        cfg.policy_mask = self.policy_mask.unwrap_or(cfg.policy_mask);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub game: Option<String>,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub selfplay: SelfPlayConfig,
    pub gauntlet: GauntletConfig,
    pub iterations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            game: None,
            network: NetworkSpec::default(),
            train: TrainConfig::default(),
            selfplay: SelfPlayConfig::default(),
            gauntlet: GauntletConfig::default(),
            iterations: 30,
        }
    }
}

impl ExperimentConfig {
    /// Tic-Tac-Mo run sized for a single desktop CPU: 60 iterations of 60
    /// self-play games, each followed by 50 optimiser steps.
    pub fn desk() -> Self {
        ExperimentConfig {
            game: Some("tictacmo".into()),
            network: NetworkSpec {
                preset: Some("desk".into()),
                ..NetworkSpec::default()
            },
            train: TrainConfig {
                steps_per_iteration: 50,
                games_per_iteration: 60,
                ..TrainConfig::default()
            },
            iterations: 60,
            ..ExperimentConfig::default()
        }
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn game(&self) -> Result<Option<GameDescriptor>, ConfigError> {
        Ok(self.game.as_deref().map(GameDescriptor::by_name).transpose()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        let cfg = ExperimentConfig::from_json("{}", "inline").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.selfplay.search.rollouts_per_turn, 50);
    }

    #[test]
    fn overrides_apply_on_top_of_presets() {
        let cfg = ExperimentConfig::from_json(
            r#"{"game": "connect3x3", "network": {"preset": "tiny", "channels": 6}, "train": {"steps_per_iteration": 7}}"#,
            "inline",
        )
        .unwrap();
        let game = cfg.game().unwrap().unwrap();
        let net = cfg.network.resolve(&game).unwrap();
        assert_eq!((net.channels, net.num_blocks, net.policy_size), (6, 1, 7));
        assert_eq!(cfg.train.steps_per_iteration, 7);
        assert_eq!(cfg.train.games_per_iteration, 20);
    }

    #[test]
    fn unknown_fields_and_presets_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"trian": {}}"#, "inline").is_err());
        let spec = NetworkSpec {
            preset: Some("huge".into()),
            ..NetworkSpec::default()
        };
        assert!(matches!(
            spec.resolve(&GameDescriptor::TIC_TAC_MO),
            Err(ConfigError::UnknownPreset(_))
        ));
        let cfg = ExperimentConfig::from_json(r#"{"game": "chess"}"#, "inline").unwrap();
        assert!(cfg.game().is_err());
    }
}
