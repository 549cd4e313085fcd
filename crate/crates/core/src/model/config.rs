use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::locale::{Locale, LocaleId};

/// How the two parallel encoders are merged into bilingual posteriors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinationMode {
    /// LID-weighted soft combination followed by a linear output head.
    Lid,
    /// Concatenation into a shared projection, with per-locale auxiliary heads.
    Aux,
}

impl fmt::Display for CombinationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombinationMode::Lid => "lid",
            CombinationMode::Aux => "aux",
        })
    }
}

/// Which projection path produces frame posteriors at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    Bilingual,
    MonoA,
    MonoB,
    LidCombined,
}

impl DecodeMode {
    pub const ALL: [DecodeMode; 4] = [
        DecodeMode::Bilingual,
        DecodeMode::MonoA,
        DecodeMode::MonoB,
        DecodeMode::LidCombined,
    ];

    /// The locale whose per-locale head is used, for the mono modes.
    pub fn mono_locale(self) -> Option<Locale> {
        match self {
            DecodeMode::MonoA => Some(Locale::A),
            DecodeMode::MonoB => Some(Locale::B),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DecodeMode::Bilingual => "bilingual",
            DecodeMode::MonoA => "mono-a",
            DecodeMode::MonoB => "mono-b",
            DecodeMode::LidCombined => "lid-combined",
        }
    }

    /// Whether a model built for `combination` can decode in this mode.
    pub fn supported_by(self, combination: CombinationMode) -> bool {
        match self {
            DecodeMode::Bilingual => combination == CombinationMode::Aux,
            DecodeMode::LidCombined => combination == CombinationMode::Lid,
            DecodeMode::MonoA | DecodeMode::MonoB => true,
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DecodeMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown decode mode {s:?} (expected bilingual, mono-a, mono-b or lid-combined)"
                ))
            })
    }
}

/// Shape of the acoustic model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub n_shared_layers: usize,
    pub n_pe_layers: usize,
    pub n_lid_layers: usize,
    /// Attention chunk: a frame sees every earlier frame and the rest of its
    /// own chunk, never a later chunk.
    pub chunk_frames: usize,
    /// Frames of history before the current chunk; `None` is unlimited.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub left_context_frames: Option<usize>,
    /// Primary and secondary locale names.
    pub locales: [LocaleId; 2],
    pub combination_mode: CombinationMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            model_dim: 64,
            heads: 4,
            ff_dim: 128,
            n_shared_layers: 4,
            n_pe_layers: 2,
            n_lid_layers: 1,
            chunk_frames: 8,
            left_context_frames: None,
            locales: [LocaleId::new("it"), LocaleId::new("en")],
            combination_mode: CombinationMode::Aux,
        }
    }
}

impl ModelConfig {
    /// Every violated constraint, in field order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("feature_dim", self.feature_dim),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("n_shared_layers", self.n_shared_layers),
            ("n_pe_layers", self.n_pe_layers),
            ("n_lid_layers", self.n_lid_layers),
            ("chunk_frames", self.chunk_frames),
        ];
        for (name, v) in positive {
            if v == 0 {
                out.push(format!("model.{name} must be at least 1"));
            }
        }
        if self.heads > 0 && self.model_dim % self.heads != 0 {
            out.push(format!(
                "model.model_dim ({}) must be divisible by model.heads ({})",
                self.model_dim, self.heads
            ));
        }
        if self.locales[0] == self.locales[1] {
            out.push(format!(
                "model.locales must differ, both are {:?}",
                self.locales[0].as_str()
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn reports_every_problem() {
        let cfg = ModelConfig {
            n_pe_layers: 0,
            heads: 3,
            chunk_frames: 0,
            ..ModelConfig::default()
        };
        let p = cfg.problems();
        assert_eq!(p.len(), 3, "{p:?}");
        assert!(p.iter().any(|s| s.contains("n_pe_layers")));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ModelConfig {
            left_context_frames: Some(16),
            combination_mode: CombinationMode::Lid,
            ..ModelConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert!(text.contains("combination_mode = \"lid\""));
        let back: ModelConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn decode_mode_names() {
        for m in DecodeMode::ALL {
            assert_eq!(m.as_str().parse::<DecodeMode>().unwrap(), m);
        }
        assert!(!DecodeMode::Bilingual.supported_by(CombinationMode::Lid));
        assert!(DecodeMode::MonoB.supported_by(CombinationMode::Lid));
    }
}
