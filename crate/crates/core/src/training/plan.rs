use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Hard-routed: each utterance goes through its own locale's PE and head.
    BilingualPretrain,
    /// Shared stack frozen; PE, LID and combined head trained jointly.
    LidFinetune,
    /// Single stage from scratch with the shared and per-locale heads.
    AuxJoint,
}

impl Stage {
    pub const ALL: [Stage; 3] = [
        Stage::BilingualPretrain,
        Stage::LidFinetune,
        Stage::AuxJoint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::BilingualPretrain => "bilingual-pretrain",
            Stage::LidFinetune => "lid-finetune",
            Stage::AuxJoint => "aux-joint",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown stage {s:?} (expected bilingual-pretrain, lid-finetune or aux-joint)"
                ))
            })
    }
}

/// Loss weights, optimizer settings and schedule for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingPlan {
    pub stage: Stage,
    pub main_loss_weight: f64,
    pub lid_loss_weight: f64,
    /// Per-locale auxiliary head weights, primary first.
    pub aux_loss_weights: [f64; 2],
    pub learning_rate: f64,
    /// Linear warmup length in optimizer steps, counted from the stage start.
    pub warmup_steps: usize,
    /// Learning rate at the last step as a fraction of `learning_rate`; the
    /// rate decays linearly to it after warmup. 1.0 keeps it constant.
    pub final_lr_fraction: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_utterances: usize,
    pub seed: u64,
    /// Keep the input projection and shared stack fixed during lid-finetune.
    pub freeze_shared: bool,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        Self {
            stage: Stage::AuxJoint,
            main_loss_weight: 1.0,
            lid_loss_weight: 0.02,
            aux_loss_weights: [0.5, 0.5],
            learning_rate: 1e-3,
            warmup_steps: 100,
            final_lr_fraction: 1.0,
            adam: AdamConfig::default(),
            epochs: 10,
            batch_utterances: 8,
            seed: 0,
            freeze_shared: true,
        }
    }
}

impl TrainingPlan {
    pub fn for_stage(stage: Stage) -> Self {
        Self {
            stage,
            ..Self::default()
        }
    }

    /// Parameter-name prefixes held fixed in this stage.
    pub fn frozen_prefixes(&self) -> Vec<String> {
        let v: &[&str] = match self.stage {
            // LID and output heads for combination are not part of pretraining.
            Stage::BilingualPretrain => &["lid.", "head.combined.", "head.shared."],
            Stage::LidFinetune if self.freeze_shared => {
                &["input.", "shared.", "head.a.", "head.b."]
            }
            Stage::LidFinetune => &["head.a.", "head.b."],
            Stage::AuxJoint => &[],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        !self
            .frozen_prefixes()
            .iter()
            .any(|p| name.starts_with(p.as_str()))
    }

    /// Learning rate for the 0-based optimizer `step` of a stage lasting
    /// `total_steps` steps.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        };
        let decay_steps = total_steps.saturating_sub(self.warmup_steps);
        let decay = if decay_steps <= 1 || step < self.warmup_steps {
            1.0
        } else {
            let t = ((step - self.warmup_steps) as f64 / (decay_steps - 1) as f64).min(1.0);
            1.0 - t * (1.0 - self.final_lr_fraction)
        };
        self.learning_rate * warm * decay
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let weights = [
            ("main_loss_weight", self.main_loss_weight),
            ("lid_loss_weight", self.lid_loss_weight),
            ("aux_loss_weights[0]", self.aux_loss_weights[0]),
            ("aux_loss_weights[1]", self.aux_loss_weights[1]),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                out.push(format!(
                    "training.{name} must be finite and nonnegative, got {w}"
                ));
            }
        }
        if self.stage != Stage::BilingualPretrain && self.main_loss_weight <= 0.0 {
            out.push("training.main_loss_weight must be positive".into());
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            out.push(format!(
                "training.final_lr_fraction must be in (0, 1], got {}",
                self.final_lr_fraction
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            out.push(format!(
                "training.learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        let b = [
            ("adam.beta1", self.adam.beta1),
            ("adam.beta2", self.adam.beta2),
        ];
        for (name, v) in b {
            if !(0.0..1.0).contains(&v) {
                out.push(format!("training.{name} must be in [0, 1), got {v}"));
            }
        }
        if !(self.adam.eps.is_finite() && self.adam.eps > 0.0) {
            out.push("training.adam.eps must be positive".into());
        }
        if self.batch_utterances == 0 {
            out.push("training.batch_utterances must be at least 1".into());
        }
        if self.epochs == 0 {
            out.push("training.epochs must be at least 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}
