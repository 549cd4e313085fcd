use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::utterance::{Utterance, WordSpan};
use super::CorpusConfig;
use crate::error::{Error, Result};
use crate::lexicon::{
    build_lexicon, merge_inventories, BilingualSpaceMap, GraphemeLexicon, SIL_ID,
};
use crate::locale::{Locale, LocaleId};
use crate::numcore::Tensor;

/// Letters of the primary locale (Italian-like, no j k w x y).
pub const ALPHABET_A: &str = "abcdefghilmnopqrstuvz";
/// Letters of the secondary locale (English).
pub const ALPHABET_B: &str = "abcdefghijklmnopqrstuvwxyz";

/// Diagonal Gaussian emitting the frames of one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    /// Bilingual unit id this prototype is labeled with.
    pub unit_id: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Everything needed to synthesize one locale's speech.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLocaleSpec {
    pub locale: Locale,
    pub id: LocaleId,
    /// Sorted word list.
    pub words: Vec<String>,
    /// Prototype per rendered unit.
    pub prototypes: BTreeMap<String, Prototype>,
    /// Silence, identical in both locales.
    pub silence: Prototype,
    pub frames_per_unit: [usize; 2],
    pub silence_frames: [usize; 2],
    pub shared_word_fraction: f64,
}

impl SyntheticLocaleSpec {
    pub fn feature_dim(&self) -> usize {
        self.silence.mean.len()
    }

    pub fn lexicon(&self) -> Result<GraphemeLexicon> {
        build_lexicon(&self.words, self.id.clone())
    }

    /// Content hash over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let d = Sha256::digest(&json);
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// All prototypes including silence, as (unit id, mean) pairs.
    pub fn means(&self) -> impl Iterator<Item = (usize, &[f64])> {
        std::iter::once((self.silence.unit_id, self.silence.mean.as_slice())).chain(
            self.prototypes
                .values()
                .map(|p| (p.unit_id, p.mean.as_slice())),
        )
    }
}

fn gen_word(rng: &mut ChaCha8Rng, alphabet: &[char], len: [usize; 2]) -> String {
    let n = rng.random_range(len[0]..=len[1]);
    let mut w = String::with_capacity(n);
    let mut prev = None;
    for _ in 0..n {
        let c = loop {
            let c = alphabet[rng.random_range(0..alphabet.len())];
            if Some(c) != prev {
                break c;
            }
        };
        w.push(c);
        prev = Some(c);
    }
    w
}

/// Draws `n` new distinct words not in `taken`, adding them to it.
fn draw_words(
    rng: &mut ChaCha8Rng,
    alphabet: &str,
    len: [usize; 2],
    n: usize,
    taken: &mut BTreeSet<String>,
) -> Result<Vec<String>> {
    let alphabet: Vec<char> = alphabet.chars().collect();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * (n + 1) {
            return Err(Error::Config(format!(
                "cannot draw {n} distinct words of length {}..={}",
                len[0], len[1]
            )));
        }
        let w = gen_word(rng, &alphabet, len);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    Ok(out)
}

/// Builds both locales' word lists and acoustic prototypes, plus the merged
/// bilingual unit space.
///
/// `floor(n_words · shared_fraction)` words are common to both locales. Each
/// (unit, locale) pair gets its own prototype mean, drawn from
/// `N(0, prototype_scale²)` per dimension; a draw closer than
/// `min_separation` to any earlier prototype is redrawn, at most 1000 times.
pub fn gen_locale_specs(
    seed: u64,
    n_words: usize,
    shared_fraction: f64,
    cfg: &CorpusConfig,
) -> Result<(SyntheticLocaleSpec, SyntheticLocaleSpec, BilingualSpaceMap)> {
    if n_words < 5 {
        return Err(Error::Config(format!(
            "n_words must be at least 5, got {n_words}"
        )));
    }
    if !(0.0..=0.5).contains(&shared_fraction) {
        return Err(Error::Config(format!(
            "shared_fraction must be in [0, 0.5], got {shared_fraction}"
        )));
    }
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_shared = (n_words as f64 * shared_fraction).floor() as usize;
    let mut taken = BTreeSet::new();
    // Shared words use only letters both locales have.
    let shared = draw_words(&mut rng, ALPHABET_A, cfg.word_length, n_shared, &mut taken)?;
    let own_a = draw_words(
        &mut rng,
        ALPHABET_A,
        cfg.word_length,
        n_words - n_shared,
        &mut taken,
    )?;
    let own_b = draw_words(
        &mut rng,
        ALPHABET_B,
        cfg.word_length,
        n_words - n_shared,
        &mut taken,
    )?;
    let mut words_a: Vec<String> = shared.iter().chain(&own_a).cloned().collect();
    let mut words_b: Vec<String> = shared.iter().chain(&own_b).cloned().collect();
    words_a.sort();
    words_b.sort();

    let ids = [
        LocaleId::new(cfg.locales[0].as_str()),
        LocaleId::new(cfg.locales[1].as_str()),
    ];
    let lex_a = build_lexicon(&words_a, ids[0].clone())?;
    let lex_b = build_lexicon(&words_b, ids[1].clone())?;
    let map = merge_inventories(&lex_a, &lex_b)?;

    let dim = cfg.feature_dim;
    let normal = Normal::new(0.0, cfg.prototype_scale).expect("positive scale");
    let mut placed: Vec<Vec<f64>> = Vec::new();
    let mut draw = |rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
        for _ in 0..1000 {
            let m: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
            let ok = placed.iter().all(|p| {
                p.iter()
                    .zip(&m)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    >= cfg.min_separation
            });
            if ok {
                placed.push(m.clone());
                return Ok(m);
            }
        }
        Err(Error::InfeasibleSeparation {
            attempts: 1000,
            feature_dim: dim,
        })
    };
    let variance = vec![cfg.noise_variance; dim];
    let silence = Prototype {
        unit_id: SIL_ID,
        mean: draw(&mut rng)?,
        variance: variance.clone(),
    };
    let mut specs = Vec::new();
    for (locale, words, lex) in [(Locale::A, words_a, &lex_a), (Locale::B, words_b, &lex_b)] {
        let mut prototypes = BTreeMap::new();
        for unit in lex.rendered_units() {
            let unit_id = map.bilingual.id(&unit).expect("merged");
            let mean = draw(&mut rng)?;
            prototypes.insert(
                unit,
                Prototype {
                    unit_id,
                    mean,
                    variance: variance.clone(),
                },
            );
        }
        specs.push(SyntheticLocaleSpec {
            locale,
            id: ids[locale.index()].clone(),
            words,
            prototypes,
            silence: silence.clone(),
            frames_per_unit: cfg.frames_per_unit,
            silence_frames: cfg.silence_frames,
            shared_word_fraction: shared_fraction,
        });
    }
    let b = specs.pop().expect("two specs");
    let a = specs.pop().expect("two specs");
    Ok((a, b, map))
}

fn emit(
    rng: &mut ChaCha8Rng,
    p: &Prototype,
    frames: usize,
    features: &mut Vec<f64>,
    alignment: &mut Vec<usize>,
) {
    for _ in 0..frames {
        for (m, v) in p.mean.iter().zip(&p.variance) {
            let n: f64 = rng.sample(rand_distr::StandardNormal);
            features.push(m + v.sqrt() * n);
        }
        alignment.push(p.unit_id);
    }
}

/// Synthesizes an utterance speaking `words` in `spec`'s locale.
///
/// Layout is silence, word, silence, ..., word, silence; every unit lasts a
/// uniform number of frames in `frames_per_unit` and every silence a uniform
/// number in `silence_frames`. Zero words give a single silence segment.
pub fn synth_utterance(
    spec: &SyntheticLocaleSpec,
    words: &[&str],
    id: &str,
    seed: u64,
) -> Result<Utterance> {
    let lexicon = spec.lexicon()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::new();
    let mut alignment = Vec::new();
    let mut spans = Vec::new();
    let [smin, smax] = spec.silence_frames;
    let [fmin, fmax] = spec.frames_per_unit;
    let n = rng.random_range(smin..=smax);
    emit(&mut rng, &spec.silence, n, &mut features, &mut alignment);
    for &w in words {
        let units = lexicon.get(w).ok_or_else(|| {
            Error::Invalid(format!("word {w:?} is not in the {} lexicon", spec.id))
        })?;
        let start = alignment.len();
        for u in units {
            let p = &spec.prototypes[&u.render()];
            let n = rng.random_range(fmin..=fmax);
            emit(&mut rng, p, n, &mut features, &mut alignment);
        }
        spans.push(WordSpan {
            word: w.to_string(),
            locale: spec.locale,
            start,
            end: alignment.len(),
        });
        let n = rng.random_range(smin..=smax);
        emit(&mut rng, &spec.silence, n, &mut features, &mut alignment);
    }
    let frames = alignment.len();
    let utt = Utterance {
        id: id.to_string(),
        seed,
        features: Tensor::new(vec![frames, spec.feature_dim()], features)?,
        alignment,
        words: spans,
    };
    utt.validate()?;
    Ok(utt)
}

/// Silence frames inserted between the two halves of a code-mixed utterance.
pub const CODE_MIX_GAP: usize = 2;

/// Joins utterances from different locales with a two-frame silence gap.
///
/// The gap repeats the first utterance's final frame and the second
/// utterance's first frame, both silence by construction.
pub fn make_code_mixed(first: &Utterance, second: &Utterance) -> Result<Utterance> {
    let (la, lb) = match (first.mono_locale(), second.mono_locale()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Invalid(
                "code-mixing needs two non-empty monolingual utterances".into(),
            ))
        }
    };
    if la == lb {
        return Err(Error::Invalid(format!("both utterances are locale {la}")));
    }
    let fa = first.frames();
    let (last, head) = (fa - 1, 0);
    if first.alignment[last] != SIL_ID || second.alignment[head] != SIL_ID {
        return Err(Error::Invalid(
            "utterances must start and end in silence".into(),
        ));
    }
    let dim = first.features.cols();
    if second.features.cols() != dim {
        return Err(Error::ShapeMismatch {
            op: "make_code_mixed",
            left: first.features.shape().to_vec(),
            right: second.features.shape().to_vec(),
        });
    }
    let mut features = first.features.data().to_vec();
    features.extend_from_slice(first.features.row(last));
    features.extend_from_slice(second.features.row(head));
    features.extend_from_slice(second.features.data());
    let mut alignment = first.alignment.clone();
    alignment.extend([SIL_ID; CODE_MIX_GAP]);
    alignment.extend_from_slice(&second.alignment);
    let offset = fa + CODE_MIX_GAP;
    let mut words = first.words.clone();
    words.extend(second.words.iter().map(|w| WordSpan {
        start: w.start + offset,
        end: w.end + offset,
        ..w.clone()
    }));
    let frames = alignment.len();
    let utt = Utterance {
        id: format!("{}+{}", first.id, second.id),
        seed: first.seed ^ second.seed.rotate_left(1),
        features: Tensor::new(vec![frames, dim], features)?,
        alignment,
        words,
    };
    utt.validate()?;
    Ok(utt)
}
