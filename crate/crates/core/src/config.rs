//! Run configuration: one JSON document with a section per module. Every
//! section is optional and falls back to its defaults; unknown keys are
//! rejected with their full path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arena::ArenaConfig;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::eval::{EvalEnv, ADV_BUDGET, BENCH_EPISODES, PROBE_EPISODES};
use crate::nn::MemoryKind;
use crate::obs::DetectionConfig;
use crate::policy::{ActMode, PidParams};
use crate::reward::RewardParams;
use crate::train::{NetConfig, RlConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub episodes: usize,
    /// How pool opponents pick actions during evaluation.
    pub opponent_mode: ActMode,
    /// How neural trackers pick actions during evaluation.
    pub tracker_mode: ActMode,
    pub probe_episodes: usize,
    pub adv_budget: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            episodes: BENCH_EPISODES,
            opponent_mode: ActMode::Sample,
            tracker_mode: ActMode::Sample,
            probe_episodes: PROBE_EPISODES,
            adv_budget: ADV_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub arena: ArenaConfig,
    pub reward: RewardParams,
    pub detection: DetectionConfig,
    pub net: NetConfig,
    pub rl: RlConfig,
    pub distill: DistillConfig,
    pub eval: EvalSettings,
    pub pid: PidParams,
}

impl Config {
    /// Small networks and budgets that train in minutes on one CPU core.
    pub fn desk() -> Self {
        Config {
            net: NetConfig {
                encoder_hidden: 16,
                memory: MemoryKind::Gru,
                memory_hidden: 32,
                ..NetConfig::default()
            },
            rl: RlConfig {
                lr: 3e-3,
                ..RlConfig::default()
            },
            distill: DistillConfig {
                total_steps: 300_000,
                lr: 3e-3,
                steps_per_update: 40,
                ..DistillConfig::default()
            },
            ..Config::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.arena.validate()?;
        self.reward.validate()?;
        self.detection.validate()?;
        self.net.spec(1, 0).validate().map_err(|e| Error::Config(format!("net: {e}")))?;
        self.rl.validate()?;
        self.distill.validate()?;
        if self.eval.episodes == 0 || self.eval.probe_episodes == 0 {
            return Err(Error::Config("eval episode counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn eval_env(&self) -> EvalEnv {
        EvalEnv {
            arena: self.arena.clone(),
            reward: self.reward.clone(),
            detection: self.detection.clone(),
            opponent_mode: self.eval.opponent_mode,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(Config::parse("{}").unwrap(), Config::default());
    }

    #[test]
    fn round_trips() {
        let c = Config::desk();
        assert_eq!(Config::parse(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn shipped_desk_file_matches() {
        let text = include_str!("../../../configs/desk.json");
        assert_eq!(Config::parse(text).unwrap(), Config::desk());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::parse(r#"{"rl": {"lr": 0.1, "learning_rate": 2}}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("learning_rate") && msg.contains("rl"), "{msg}");
        let err = Config::parse(r#"{"bogus": 1}"#).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            r#"{"rl": {"gamma": 1.5}}"#,
            r#"{"distill": {"batch": 0}}"#,
            r#"{"arena": {"dt": -1}}"#,
            r#"{"eval": {"episodes": 0}}"#,
            r#"{"net": {"memory_hidden": 0}}"#,
            "not json",
        ] {
            let e = Config::parse(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
    }
}
