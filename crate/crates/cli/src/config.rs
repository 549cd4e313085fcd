//! The run configuration file.
//!
//! A TOML document with a global `seed` and `out_dir` plus one section per
//! component:
//!
//! ```toml
//! seed = 1
//! out_dir = "run"
//!
//! [corpus]     # synthetic corpus shape, see `CorpusConfig`
//! [model]      # network shape, see `ModelConfig`
//! [training]   # losses, optimizer and schedule, see `TrainingPlan`
//! [decode]     # decoder settings, see `DecodeConfig`
//! ```
//!
//! Every key is optional. `blxam config` prints the complete default file.
//! `training.stage`, `training.seed` and `model.combination_mode` are set by
//! the command line.

use std::path::{Path, PathBuf};

use anyhow::Context;
use blxam::decode::DecodeConfig;
use blxam::synthdata::CorpusConfig;
use blxam::{ModelConfig, TrainingPlan};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Keys accepted although absent from the serialized defaults, because
/// their default is "unset".
const OPTIONAL_KEYS: &[&str] = &["model.left_context_frames", "decode.lm_weight"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub training: TrainingPlan,
    pub decode: DecodeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("run"),
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            training: TrainingPlan::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses `text`, reporting every unknown key and then every invalid
    /// value in one error.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, Failure> {
        let value: toml::Table = toml::from_str(text)
            .map_err(|e| Failure::usage(format!("{}: {e}", origin.display())))?;
        let schema = toml::Table::try_from(Self::default()).expect("defaults serialize");
        let mut unknown = Vec::new();
        unknown_keys(&value, &schema, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Failure::usage(format!(
                "{}: unknown keys: {}",
                origin.display(),
                unknown.join(", ")
            )));
        }
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e| Failure::usage(format!("{}: {e}", origin.display())))?;
        cfg.validate()
            .map_err(|p| Failure::usage(format!("{}: {p}", origin.display())))?;
        Ok(cfg)
    }

    /// Loads `path`, or the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))
                    .map_err(Failure::usage_from)?;
                Self::from_toml(&text, p)
            }
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = self.corpus.problems();
        out.extend(self.model.problems());
        out.extend(self.training.problems());
        out.extend(self.decode.problems());
        if self.model.feature_dim != self.corpus.feature_dim {
            out.push(format!(
                "model.feature_dim ({}) must equal corpus.feature_dim ({})",
                self.model.feature_dim, self.corpus.feature_dim
            ));
        }
        if self.model.locales != self.corpus.locales {
            out.push(format!(
                "model.locales {:?} must equal corpus.locales {:?}",
                self.model.locales, self.corpus.locales
            ));
        }
        out
    }

    fn validate(&self) -> Result<(), String> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(format!("invalid values: {}", p.join("; ")))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The training plan for `stage`, seeded from the global seed.
    pub fn plan(&self, stage: blxam::Stage) -> TrainingPlan {
        TrainingPlan {
            stage,
            seed: self.seed,
            ..self.training.clone()
        }
    }
}

fn unknown_keys(value: &toml::Table, schema: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in value {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match schema.get(k) {
            Some(toml::Value::Table(sub)) => {
                if let toml::Value::Table(vt) = v {
                    unknown_keys(vt, sub, &path, out);
                }
            }
            Some(_) => {}
            None if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            None => out.push(path),
        }
    }
}
