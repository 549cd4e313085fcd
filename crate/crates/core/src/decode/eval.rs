use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::path::{beam_decode, greedy_decode, BigramLm, Lexicons};
use super::wer::{wer, ErrorCounts};
use crate::error::{Error, Result};
use crate::lexicon::{BilingualSpaceMap, UnitInventory};
use crate::locale::Locale;
use crate::model::{AcousticModel, DecodeMode};
use crate::numcore::{argmax, Tensor};
use crate::synthdata::{Condition, Corpus, Split, Utterance};
use crate::training::make_frame_targets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Search {
    Greedy,
    Beam,
}

/// How posteriors are turned into words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub search: Search,
    pub beam_width: usize,
    /// Weight of the bigram word LM in beam search; `None` disables it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm_weight: Option<f64>,
    /// Frames fed to the streaming model per call.
    pub chunk_frames: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Bilingual,
            search: Search::Greedy,
            beam_width: 4,
            lm_weight: None,
            chunk_frames: 8,
        }
    }
}

impl DecodeConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.beam_width == 0 {
            out.push("decode.beam_width must be at least 1".into());
        }
        if let Some(w) = self.lm_weight {
            if !(w.is_finite() && w >= 0.0) {
                out.push(format!("decode.lm_weight must be nonnegative, got {w}"));
            }
        }
        if self.chunk_frames == 0 {
            out.push("decode.chunk_frames must be at least 1".into());
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

/// Scores of one utterance under one decode mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UttScore {
    pub id: String,
    pub condition: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    pub counts: ErrorCounts,
    pub oov_words: usize,
    pub frames: usize,
    pub frames_correct: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lid_correct: Option<usize>,
}

/// Aggregate over one (condition, mode) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: String,
    pub mode: DecodeMode,
    pub utterances: usize,
    pub counts: ErrorCounts,
    /// WER in percent, rounded to 2 decimals.
    pub wer: f64,
    pub oov_words: usize,
    pub frames: usize,
    pub frame_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lid_accuracy: Option<f64>,
}

/// Evaluation of one system over a corpus split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub split: String,
    pub inventory_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param_checksum: Option<String>,
    pub search: Search,
    pub chunk_frames: usize,
    /// Condition to a fingerprint of the corpus and its sorted utterance ids.
    pub test_sets: BTreeMap<String, String>,
    pub rows: Vec<ReportRow>,
    pub utterances: Vec<UttScore>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// Fingerprint of a test set: the corpus identity plus the sorted ids.
fn test_set_hash<'a>(corpus: &Corpus, ids: impl Iterator<Item = &'a str>) -> String {
    let mut ids: Vec<&str> = ids.collect();
    ids.sort_unstable();
    let mut h = Sha256::new();
    h.update(corpus.manifest.seed.to_le_bytes());
    for spec in &corpus.manifest.spec_hashes {
        h.update(spec.as_bytes());
        h.update([0u8]);
    }
    for id in ids {
        h.update(id.as_bytes());
        h.update([0u8]);
    }
    h.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl ReportRow {
    /// Sums per-utterance scores into a row.
    pub fn aggregate(condition: &str, mode: DecodeMode, scores: &[UttScore]) -> Self {
        let mut counts = ErrorCounts::default();
        let (mut frames, mut correct, mut oov) = (0, 0, 0);
        let mut lid: Option<usize> = Some(0);
        for s in scores {
            counts.add(&s.counts);
            frames += s.frames;
            correct += s.frames_correct;
            oov += s.oov_words;
            lid = match (lid, s.lid_correct) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            };
        }
        if scores.is_empty() {
            lid = None;
        }
        Self {
            condition: condition.to_string(),
            mode,
            utterances: scores.len(),
            wer: round2(counts.wer()),
            counts,
            oov_words: oov,
            frames,
            frame_accuracy: round2(pct(correct, frames)),
            lid_accuracy: lid.map(|c| round2(pct(c, frames))),
        }
    }
}

impl EvalReport {
    pub fn row(&self, condition: Condition, mode: DecodeMode) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.condition == condition.as_str() && r.mode == mode)
    }

    /// Appends another mode's rows for the same system and test sets.
    pub fn merge(&mut self, other: EvalReport) -> Result<()> {
        if other.inventory_hash != self.inventory_hash || other.split != self.split {
            return Err(Error::Invalid(
                "cannot merge reports over different corpora".into(),
            ));
        }
        for (c, h) in &other.test_sets {
            if let Some(mine) = self.test_sets.get(c) {
                if mine != h {
                    return Err(Error::Invalid(format!(
                        "test set {c} differs between reports"
                    )));
                }
            }
        }
        self.test_sets.extend(other.test_sets);
        self.rows.extend(other.rows);
        self.utterances.extend(other.utterances);
        Ok(())
    }

    /// Plain-text table, one line per (condition, mode).
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "system {} | split {} | search {} | chunk {} frames\n",
            self.label,
            self.split,
            match self.search {
                Search::Greedy => "greedy",
                Search::Beam => "beam",
            },
            self.chunk_frames
        );
        out.push_str(&format!(
            "{:<11} {:<13} {:>5} {:>6} {:>7} {:>5} {:>5} {:>5} {:>5} {:>8} {:>8}\n",
            "condition", "mode", "utts", "words", "WER%", "S", "I", "D", "OOV", "frame%", "lid%"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<11} {:<13} {:>5} {:>6} {:>7.2} {:>5} {:>5} {:>5} {:>5} {:>8.2} {:>8}\n",
                r.condition,
                r.mode.as_str(),
                r.utterances,
                r.counts.reference_words,
                r.wer,
                r.counts.substitutions,
                r.counts.insertions,
                r.counts.deletions,
                r.oov_words,
                r.frame_accuracy,
                r.lid_accuracy
                    .map_or("-".to_string(), |a| format!("{a:.2}")),
            ));
        }
        out
    }

    /// One JSON record per row, tagged with the system label.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            label: &'a str,
            split: &'a str,
            #[serde(flatten)]
            row: &'a ReportRow,
        }
        let mut out = String::new();
        for row in &self.rows {
            let line = Line {
                label: &self.label,
                split: &self.split,
                row,
            };
            out.push_str(&serde_json::to_string(&line).expect("rows serialize"));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("eval report: {e}")))
    }
}

/// Output space and word index for `mode`.
pub fn mode_lexicons(corpus: &Corpus, mode: DecodeMode) -> Result<(UnitInventory, Lexicons)> {
    let space = match mode.mono_locale() {
        Some(l) => corpus.map.locale(l).clone(),
        None => corpus.map.bilingual.clone(),
    };
    let lexicons = match mode.mono_locale() {
        Some(l) => vec![(l, corpus.lexicon(l)?)],
        None => vec![
            (Locale::A, corpus.lexicon(Locale::A)?),
            (Locale::B, corpus.lexicon(Locale::B)?),
        ],
    };
    let refs: Vec<(Locale, &crate::lexicon::GraphemeLexicon)> =
        lexicons.iter().map(|(l, x)| (*l, x)).collect();
    let index = Lexicons::new(&space, &refs);
    Ok((space, index))
}

fn frame_truth(
    utt: &Utterance,
    map: &BilingualSpaceMap,
    mode: DecodeMode,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let t = make_frame_targets(utt, map)?;
    let units = match mode.mono_locale() {
        Some(l) => t.locale[l.index()].clone(),
        None => t.bilingual,
    };
    Ok((units, t.lid))
}

/// Scores every utterance of `split` under `cfg`, taking posteriors from
/// `posteriors`, which returns frame log-posteriors in the mode's space and
/// optional LID probabilities.
///
/// Utterances are scored in parallel and aggregated in utterance id order.
pub fn evaluate_with<F>(
    corpus: &Corpus,
    split: Split,
    cfg: &DecodeConfig,
    label: &str,
    posteriors: F,
) -> Result<EvalReport>
where
    F: Fn(&Utterance) -> Result<(Tensor, Option<Tensor>)> + Sync,
{
    cfg.validate()?;
    let (space, lexicons) = mode_lexicons(corpus, cfg.mode)?;
    let lm = match (cfg.search, cfg.lm_weight) {
        (Search::Beam, Some(w)) if w > 0.0 => {
            let mut sentences = Vec::new();
            for c in corpus.manifest.conditions(Split::Train) {
                for u in corpus.load(Split::Train, c)? {
                    sentences.push(
                        u.transcript()
                            .into_iter()
                            .map(str::to_string)
                            .collect::<Vec<_>>(),
                    );
                }
            }
            Some((BigramLm::train(&sentences, 0.5), w))
        }
        _ => None,
    };
    let mut report = EvalReport {
        label: label.to_string(),
        split: split.as_str().to_string(),
        inventory_hash: corpus.map.hash(),
        param_checksum: None,
        search: cfg.search,
        chunk_frames: cfg.chunk_frames,
        test_sets: BTreeMap::new(),
        rows: Vec::new(),
        utterances: Vec::new(),
    };
    for condition in corpus.manifest.conditions(split) {
        let utts = corpus.load(split, condition)?;
        let mut scores = utts
            .par_iter()
            .map(|utt| {
                let (post, lid) = posteriors(utt)?;
                if post.rows() != utt.frames() || post.cols() != space.len() {
                    return Err(Error::ShapeMismatch {
                        op: "evaluate",
                        left: post.shape().to_vec(),
                        right: vec![utt.frames(), space.len()],
                    });
                }
                let hyp = match cfg.search {
                    Search::Greedy => greedy_decode(&post, &lexicons),
                    Search::Beam => beam_decode(
                        &post,
                        &lexicons,
                        cfg.beam_width,
                        lm.as_ref().map(|(l, w)| (l, *w)),
                    ),
                };
                let reference: Vec<String> =
                    utt.transcript().into_iter().map(str::to_string).collect();
                let hypothesis: Vec<String> =
                    hyp.word_texts().into_iter().map(str::to_string).collect();
                let counts = if reference.is_empty() {
                    ErrorCounts {
                        insertions: hypothesis.len(),
                        ..ErrorCounts::default()
                    }
                } else {
                    wer(&reference, &hypothesis)?
                };
                let (truth, lid_truth) = frame_truth(utt, &corpus.map, cfg.mode)?;
                let frames_correct = post
                    .argmax_rows()
                    .iter()
                    .zip(&truth)
                    .filter(|(a, b)| a == b)
                    .count();
                let lid_correct = lid.map(|p| {
                    (0..p.rows())
                        .zip(&lid_truth)
                        .filter(|&(i, &t)| argmax(p.row(i)) == t)
                        .count()
                });
                Ok(UttScore {
                    id: utt.id.clone(),
                    condition: condition.as_str().to_string(),
                    reference,
                    hypothesis,
                    counts,
                    oov_words: hyp.oov_count(),
                    frames: utt.frames(),
                    frames_correct,
                    lid_correct,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        scores.sort_by(|a, b| a.id.cmp(&b.id));
        report.test_sets.insert(
            condition.as_str().to_string(),
            test_set_hash(corpus, scores.iter().map(|s| s.id.as_str())),
        );
        report
            .rows
            .push(ReportRow::aggregate(condition.as_str(), cfg.mode, &scores));
        report.utterances.extend(scores);
    }
    Ok(report)
}

/// Streams every utterance of `split` through `model` and scores it.
pub fn evaluate(
    model: &AcousticModel,
    corpus: &Corpus,
    split: Split,
    cfg: &DecodeConfig,
    label: &str,
) -> Result<EvalReport> {
    if model.map().hash() != corpus.manifest.inventory_hash {
        return Err(Error::InventoryMismatch {
            model: model.map().hash(),
            corpus: corpus.manifest.inventory_hash.clone(),
        });
    }
    if !cfg.mode.supported_by(model.combination_mode()) {
        return Err(Error::Config(format!(
            "decode mode {} is not available for a {} model",
            cfg.mode,
            model.combination_mode()
        )));
    }
    let mut report = evaluate_with(corpus, split, cfg, label, |utt| {
        model.stream_utterance(&utt.features, cfg.mode, cfg.chunk_frames)
    })?;
    report.param_checksum = Some(model.store().checksum());
    Ok(report)
}
