//! Deterministic synthetic bilingual corpora.
//!
//! Each locale has a generated word list and one diagonal Gaussian prototype
//! per (unit, locale); silence has a single prototype shared by both locales.
//! Utterances sample frames from the prototypes of their words' units and
//! record the generating unit per frame as the ground-truth alignment.
//! Code-mixed utterances join a locale-A and a locale-B utterance.

mod corpus;
mod spec;
mod utterance;

use serde::{Deserialize, Serialize};

pub use corpus::{
    build_corpus, derive_seed, Condition, Corpus, CorpusManifest, ManifestEntry, Split,
    MANIFEST_FILE,
};
pub use spec::{
    gen_locale_specs, make_code_mixed, synth_utterance, Prototype, SyntheticLocaleSpec, ALPHABET_A,
    ALPHABET_B, CODE_MIX_GAP,
};
pub use utterance::{Utterance, WordSpan, UTTERANCE_MAGIC};

use crate::error::{Error, Result};
use crate::locale::LocaleId;

/// Utterance counts of one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub mono_a: usize,
    pub mono_b: usize,
    pub code_mixed: usize,
}

impl SplitSizes {
    pub fn get(&self, c: Condition) -> usize {
        match c {
            Condition::MonoA => self.mono_a,
            Condition::MonoB => self.mono_b,
            Condition::CodeMixed => self.code_mixed,
        }
    }
}

/// Utterance counts per split and condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSizes {
    pub train: SplitSizes,
    pub dev: SplitSizes,
    pub test: SplitSizes,
}

impl CorpusSizes {
    pub fn get(&self, s: Split) -> &SplitSizes {
        match s {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

impl Default for CorpusSizes {
    fn default() -> Self {
        Self {
            train: SplitSizes {
                mono_a: 400,
                mono_b: 400,
                code_mixed: 400,
            },
            dev: SplitSizes {
                mono_a: 50,
                mono_b: 50,
                code_mixed: 0,
            },
            test: SplitSizes {
                mono_a: 100,
                mono_b: 100,
                code_mixed: 100,
            },
        }
    }
}

/// Parameters of the synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub locales: [LocaleId; 2],
    pub n_words: usize,
    pub shared_fraction: f64,
    pub feature_dim: usize,
    /// Standard deviation of each prototype mean coordinate.
    pub prototype_scale: f64,
    /// Minimum L2 distance between any two prototype means.
    pub min_separation: f64,
    /// Per-dimension variance of every prototype.
    pub noise_variance: f64,
    pub frames_per_unit: [usize; 2],
    pub silence_frames: [usize; 2],
    pub word_length: [usize; 2],
    /// Words per monolingual utterance; code-mixed ones join two of these.
    pub words_per_utterance: [usize; 2],
    pub sizes: CorpusSizes,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            locales: [LocaleId::new("it"), LocaleId::new("en")],
            n_words: 50,
            shared_fraction: 0.1,
            feature_dim: 16,
            prototype_scale: 0.5,
            min_separation: 0.5,
            noise_variance: 0.05,
            frames_per_unit: [2, 5],
            silence_frames: [1, 3],
            word_length: [2, 6],
            words_per_utterance: [1, 3],
            sizes: CorpusSizes::default(),
        }
    }
}

impl CorpusConfig {
    /// All schema violations, in field order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.locales[0] == self.locales[1] {
            out.push(format!(
                "corpus.locales must differ, both are {:?}",
                self.locales[0].as_str()
            ));
        }
        if self.n_words < 5 {
            out.push(format!(
                "corpus.n_words must be at least 5, got {}",
                self.n_words
            ));
        }
        if !(0.0..=0.5).contains(&self.shared_fraction) {
            out.push(format!(
                "corpus.shared_fraction must be in [0, 0.5], got {}",
                self.shared_fraction
            ));
        }
        if self.feature_dim == 0 {
            out.push("corpus.feature_dim must be positive".into());
        }
        for (name, v) in [
            ("prototype_scale", self.prototype_scale),
            ("noise_variance", self.noise_variance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("corpus.{name} must be positive, got {v}"));
            }
        }
        if !(self.min_separation.is_finite() && self.min_separation >= 0.0) {
            out.push(format!(
                "corpus.min_separation must be nonnegative, got {}",
                self.min_separation
            ));
        }
        for (name, [lo, hi], min) in [
            ("frames_per_unit", self.frames_per_unit, 1),
            ("silence_frames", self.silence_frames, 1),
            ("word_length", self.word_length, 1),
            ("words_per_utterance", self.words_per_utterance, 1),
        ] {
            if lo < min || lo > hi {
                out.push(format!("corpus.{name} must be a range [lo, hi] with {min} <= lo <= hi, got [{lo}, {hi}]"));
            }
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
