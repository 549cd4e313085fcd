use std::collections::{BTreeMap, HashMap};

use crate::lexicon::{GraphemeLexicon, UnitInventory, UnitToken, SIL_ID};
use crate::locale::Locale;
use crate::numcore::{argmax, Tensor};

/// Collapses a frame-level unit path.
///
/// SIL frames are dropped first, then consecutive repeats are merged, so the
/// result never holds SIL or adjacent duplicates. In a per-locale space a run
/// of FOREIGN frames thereby becomes a single foreign-segment marker, which
/// [`units_to_words`] treats as a word separator.
pub fn collapse_path(frame_ids: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for &id in frame_ids {
        if id == SIL_ID {
            continue;
        }
        if out.last() != Some(&id) {
            out.push(id);
        }
    }
    out
}

/// A recovered word.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DecodedWord {
    pub text: String,
    /// Locale of the lexicon that matched; `None` for words in both lexicons
    /// and for OOV segments.
    pub locale: Option<Locale>,
    /// True when no lexicon holds the segment; `text` is then its letters.
    pub oov: bool,
}

/// Best path through one utterance's posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Collapsed unit ids in the decode space.
    pub units: Vec<usize>,
    pub words: Vec<DecodedWord>,
    /// Total log-posterior of the chosen frame path plus any LM score.
    pub score: f64,
}

impl Hypothesis {
    pub fn word_texts(&self) -> Vec<&str> {
        self.words.iter().map(|w| w.text.as_str()).collect()
    }

    pub fn oov_count(&self) -> usize {
        self.words.iter().filter(|w| w.oov).count()
    }
}

#[derive(Debug, Clone)]
struct Entry {
    word: String,
    locales: Vec<Locale>,
}

#[derive(Debug, Default, Clone)]
struct TrieNode {
    children: BTreeMap<usize, usize>,
    word: Option<usize>,
}

/// Maps unit sequences in one decode space back to words.
#[derive(Debug, Clone)]
pub struct Lexicons {
    space: UnitInventory,
    foreign: Option<usize>,
    entries: Vec<Entry>,
    by_units: HashMap<Vec<usize>, usize>,
    trie: Vec<TrieNode>,
}

impl Lexicons {
    /// Indexes `lexicons` over the unit ids of `space`. Words whose units are
    /// not all in `space` cannot be produced and are left out.
    pub fn new(space: &UnitInventory, lexicons: &[(Locale, &GraphemeLexicon)]) -> Self {
        let mut merged: BTreeMap<Vec<usize>, Entry> = BTreeMap::new();
        for &(locale, lex) in lexicons {
            for (word, units) in lex.entries() {
                let ids: Option<Vec<usize>> = units.iter().map(|u| space.id(&u.render())).collect();
                let Some(ids) = ids else { continue };
                merged
                    .entry(ids)
                    .and_modify(|e| {
                        if !e.locales.contains(&locale) {
                            e.locales.push(locale)
                        }
                    })
                    .or_insert_with(|| Entry {
                        word: word.clone(),
                        locales: vec![locale],
                    });
            }
        }
        let mut out = Self {
            space: space.clone(),
            foreign: space.foreign_id(),
            entries: Vec::new(),
            by_units: HashMap::new(),
            trie: vec![TrieNode::default()],
        };
        for (ids, entry) in merged {
            let idx = out.entries.len();
            let mut node = 0;
            for &u in &ids {
                node = match out.trie[node].children.get(&u) {
                    Some(&n) => n,
                    None => {
                        out.trie.push(TrieNode::default());
                        let n = out.trie.len() - 1;
                        out.trie[node].children.insert(u, n);
                        n
                    }
                };
            }
            out.trie[node].word = Some(idx);
            out.by_units.insert(ids, idx);
            out.entries.push(entry);
        }
        out
    }

    pub fn space(&self) -> &UnitInventory {
        &self.space
    }

    pub fn foreign_id(&self) -> Option<usize> {
        self.foreign
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn decoded(&self, idx: usize) -> DecodedWord {
        let e = &self.entries[idx];
        DecodedWord {
            text: e.word.clone(),
            locale: if e.locales.len() == 1 {
                Some(e.locales[0])
            } else {
                None
            },
            oov: false,
        }
    }

    fn token(&self, id: usize) -> Option<UnitToken> {
        self.space.token(id)
    }
}

/// Segments a collapsed unit sequence into words.
///
/// A segment starts at a word-opening unit (`_x` or `=x`) and ends after a
/// word-closing unit (`x_` or `=x`); FOREIGN markers also end a segment and
/// produce no word. Each segment is matched exactly against the lexicons;
/// an unmatched segment becomes its literal letters flagged as OOV.
pub fn units_to_words(units: &[usize], lexicons: &Lexicons) -> Vec<DecodedWord> {
    let mut words = Vec::new();
    let mut seg: Vec<usize> = Vec::new();
    let flush = |seg: &mut Vec<usize>, words: &mut Vec<DecodedWord>| {
        if seg.is_empty() {
            return;
        }
        match lexicons.by_units.get(seg.as_slice()) {
            Some(&idx) => words.push(lexicons.decoded(idx)),
            None => words.push(DecodedWord {
                text: seg
                    .iter()
                    .filter_map(|&id| lexicons.token(id).map(|t| t.letter))
                    .collect(),
                locale: None,
                oov: true,
            }),
        }
        seg.clear();
    };
    for &id in units {
        if Some(id) == lexicons.foreign || id == SIL_ID {
            flush(&mut seg, &mut words);
            continue;
        }
        let Some(tok) = lexicons.token(id) else {
            flush(&mut seg, &mut words);
            continue;
        };
        if tok.opens_word() {
            flush(&mut seg, &mut words);
        }
        seg.push(id);
        if tok.closes_word() {
            flush(&mut seg, &mut words);
        }
    }
    flush(&mut seg, &mut words);
    words
}

/// Frame argmax, collapse and word recovery.
pub fn greedy_decode(log_posteriors: &Tensor, lexicons: &Lexicons) -> Hypothesis {
    let mut path = Vec::with_capacity(log_posteriors.rows());
    let mut score = 0.0;
    for i in 0..log_posteriors.rows() {
        let row = log_posteriors.row(i);
        let j = argmax(row);
        score += row[j];
        path.push(j);
    }
    let units = collapse_path(&path);
    let words = units_to_words(&units, lexicons);
    Hypothesis {
        units,
        words,
        score,
    }
}

/// Add-k smoothed word bigram model with sentence boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramLm {
    vocab: BTreeMap<String, usize>,
    unigrams: Vec<f64>,
    bigrams: HashMap<(usize, usize), f64>,
    smoothing: f64,
}

impl BigramLm {
    const BOUNDARY: usize = 0;

    /// Counts bigrams over `sentences`, including the sentence start and end.
    pub fn train<S: AsRef<str>>(sentences: &[Vec<S>], smoothing: f64) -> Self {
        let mut vocab = BTreeMap::new();
        for s in sentences {
            for w in s {
                let n = vocab.len() + 1;
                vocab.entry(w.as_ref().to_string()).or_insert(n);
            }
        }
        let mut unigrams = vec![0.0; vocab.len() + 1];
        let mut bigrams = HashMap::new();
        for s in sentences {
            let mut prev = Self::BOUNDARY;
            let ids = s.iter().map(|w| vocab[w.as_ref()]).chain([Self::BOUNDARY]);
            for id in ids {
                unigrams[prev] += 1.0;
                *bigrams.entry((prev, id)).or_insert(0.0) += 1.0;
                prev = id;
            }
        }
        Self {
            vocab,
            unigrams,
            bigrams,
            smoothing,
        }
    }

    fn id(&self, w: Option<&str>) -> Option<usize> {
        match w {
            None => Some(Self::BOUNDARY),
            Some(w) => self.vocab.get(w).copied(),
        }
    }

    /// `log P(next | prev)`; `None` stands for the sentence boundary. Words
    /// outside the training vocabulary share one extra smoothed slot.
    pub fn log_prob(&self, prev: Option<&str>, next: Option<&str>) -> f64 {
        let v = (self.vocab.len() + 2) as f64;
        let (Some(p), n) = (self.id(prev), self.id(next)) else {
            return -(v.ln());
        };
        let count = n
            .and_then(|n| self.bigrams.get(&(p, n)))
            .copied()
            .unwrap_or(0.0);
        ((count + self.smoothing) / (self.unigrams[p] + self.smoothing * v)).ln()
    }
}

#[derive(Debug, Clone)]
struct BeamState {
    node: usize,
    last: usize,
    prev_word: Option<usize>,
    words: Vec<usize>,
    units: Vec<usize>,
    score: f64,
}

impl BeamState {
    fn key(&self) -> (usize, usize, Option<usize>) {
        (self.node, self.last, self.prev_word)
    }
}

/// Lexicon-constrained frame-synchronous beam search.
///
/// Hypotheses walk a unit trie of the lexicons. At every frame a hypothesis
/// either stays on its last unit, emits SIL between words, or advances to a
/// child unit; completing a word adds `lm_weight · log P(word | previous)`.
/// Hypotheses that agree on (trie node, last unit, previous word) are merged
/// keeping the best. Returns the greedy result when no path ends on a word
/// boundary.
pub fn beam_decode(
    log_posteriors: &Tensor,
    lexicons: &Lexicons,
    beam_width: usize,
    lm: Option<(&BigramLm, f64)>,
) -> Hypothesis {
    let lm_score = |prev: Option<usize>, next: Option<usize>| -> f64 {
        match lm {
            Some((lm, w)) if w > 0.0 => {
                let name = |i: Option<usize>| i.map(|i| lexicons.entries[i].word.as_str());
                w * lm.log_prob(name(prev), name(next))
            }
            _ => 0.0,
        }
    };
    let mut beam = vec![BeamState {
        node: 0,
        last: SIL_ID,
        prev_word: None,
        words: Vec::new(),
        units: Vec::new(),
        score: 0.0,
    }];
    for f in 0..log_posteriors.rows() {
        let row = log_posteriors.row(f);
        let mut next: BTreeMap<(usize, usize, Option<usize>), BeamState> = BTreeMap::new();
        let mut push = |s: BeamState| {
            let k = s.key();
            match next.get(&k) {
                Some(o) if o.score >= s.score => {}
                _ => {
                    next.insert(k, s);
                }
            }
        };
        for s in &beam {
            let at_boundary = s.node == 0;
            // Stay on the current unit.
            if s.last != SIL_ID || at_boundary {
                let mut t = s.clone();
                t.score += row[s.last];
                push(t);
            }
            if at_boundary && s.last != SIL_ID {
                let mut t = s.clone();
                t.last = SIL_ID;
                t.score += row[SIL_ID];
                push(t);
            }
            for (&u, &child) in &lexicons.trie[s.node].children {
                if u == s.last {
                    continue;
                }
                let mut t = s.clone();
                t.units.push(u);
                t.last = u;
                t.score += row[u];
                t.node = child;
                if let Some(w) = lexicons.trie[child].word {
                    if lexicons.trie[child].children.is_empty() {
                        t.score += lm_score(s.prev_word, Some(w));
                        t.prev_word = Some(w);
                        t.words.push(w);
                        t.node = 0;
                    }
                }
                push(t);
            }
        }
        let mut states: Vec<BeamState> = next.into_values().collect();
        states.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.key().cmp(&b.key()))
        });
        states.truncate(beam_width.max(1));
        beam = states;
    }
    let best = beam
        .into_iter()
        .filter(|s| s.node == 0)
        .map(|mut s| {
            s.score += lm_score(s.prev_word, None);
            s
        })
        .max_by(|a, b| {
            a.score
                .total_cmp(&b.score)
                .then_with(|| b.key().cmp(&a.key()))
        });
    match best {
        Some(s) => Hypothesis {
            words: s.words.iter().map(|&w| lexicons.decoded(w)).collect(),
            units: s.units,
            score: s.score,
        },
        None => greedy_decode(log_posteriors, lexicons),
    }
}
