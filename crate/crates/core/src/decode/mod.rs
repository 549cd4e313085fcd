//! Posterior decoding, WER scoring and cross-system reports.
//!
//! The default decoder takes the per-frame argmax, collapses the path and
//! maps unit segments back to words through the lexicons of the active
//! mode. An optional lexicon-constrained beam search with a bigram word LM
//! is available for sensitivity checks.

mod eval;
mod path;
mod trends;
mod wer;

pub use eval::{
    evaluate, evaluate_with, mode_lexicons, DecodeConfig, EvalReport, ReportRow, Search, UttScore,
};
pub use path::{
    beam_decode, collapse_path, greedy_decode, units_to_words, BigramLm, DecodedWord, Hypothesis,
    Lexicons,
};
pub use trends::{compare_modes, werr, TrendRow, TrendSummary};
pub use wer::{wer, ErrorCounts};
