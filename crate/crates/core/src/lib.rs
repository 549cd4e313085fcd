//! Bilingual hybrid-ASR acoustic modeling at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! - [`lexicon`]: grapheme-letter lexicons with word boundary units and the
//!   merged bilingual unit space.
//! - [`numcore`]: dense `f64` tensors with a define-by-run reverse-mode tape,
//!   Adam, and the binary checkpoint format.
//! - [`model`]: shared + parallel-encoder streaming Transformer with a LID
//!   head, per-locale auxiliary heads and a shared bilingual head.
//! - [`training`]: frame targets, the three losses and staged training.
//! - [`synthdata`]: deterministic synthetic bilingual corpora with
//!   ground-truth frame alignments.
//! - [`decode`]: posterior collapse, lexicon lookup, beam search, WER and
//!   evaluation reports.

pub mod decode;
pub mod error;
pub mod lexicon;
pub mod locale;
pub mod model;
pub mod numcore;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
pub use lexicon::{BilingualSpaceMap, GraphemeLexicon, UnitInventory, UnitToken};
pub use locale::{Locale, LocaleId};
pub use model::{AcousticModel, CombinationMode, DecodeMode, ModelConfig, StreamState};
pub use numcore::{ParameterStore, Tape, Tensor, Var};
pub use synthdata::{Corpus, CorpusManifest, SyntheticLocaleSpec, Utterance};
pub use training::{FrameTargets, Stage, TrainLog, TrainingPlan};
