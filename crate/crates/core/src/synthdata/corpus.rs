use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::spec::{make_code_mixed, synth_utterance, SyntheticLocaleSpec};
use super::utterance::Utterance;
use super::CorpusSizes;
use crate::error::{Error, Result};
use crate::lexicon::{BilingualSpaceMap, GraphemeLexicon};
use crate::locale::Locale;

pub const MANIFEST_FILE: &str = "manifest.tsv";
const MANIFEST_TITLE: &str = "# blxam corpus manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| {
                Error::Invalid(format!("unknown split {s:?} (expected train, dev or test)"))
            })
    }
}

/// Test condition of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    MonoA,
    MonoB,
    CodeMixed,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::MonoA, Condition::MonoB, Condition::CodeMixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::MonoA => "mono-a",
            Condition::MonoB => "mono-b",
            Condition::CodeMixed => "code-mixed",
        }
    }

    pub fn mono(locale: Locale) -> Self {
        match locale {
            Locale::A => Condition::MonoA,
            Locale::B => Condition::MonoB,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "unknown condition {s:?} (expected mono-a, mono-b or code-mixed)"
                ))
            })
    }
}

/// One manifest line: utterance file path relative to the corpus root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub split: Split,
    pub condition: Condition,
}

impl ManifestEntry {
    /// Utterance id, taken from the file stem.
    pub fn id(&self) -> &str {
        let name = self.path.rsplit('/').next().unwrap_or(&self.path);
        name.strip_suffix(".utt").unwrap_or(name)
    }
}

/// Index of a generated corpus.
///
/// Text form: `#` header lines carrying `seed`, `spec_a`, `spec_b` and
/// `inventory` values, then one `path<TAB>split<TAB>condition` line per
/// utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub seed: u64,
    pub spec_hashes: [String; 2],
    pub inventory_hash: String,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn entries_for(
        &self,
        split: Split,
        condition: Condition,
    ) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| e.split == split && e.condition == condition)
    }

    pub fn count(&self, split: Split, condition: Condition) -> usize {
        self.entries_for(split, condition).count()
    }

    /// Conditions present in `split`, in canonical order.
    pub fn conditions(&self, split: Split) -> Vec<Condition> {
        Condition::ALL
            .into_iter()
            .filter(|&c| self.count(split, c) > 0)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MANIFEST_TITLE}\n# seed {}\n# spec_a {}\n# spec_b {}\n# inventory {}\n",
            self.seed, self.spec_hashes[0], self.spec_hashes[1], self.inventory_hash
        );
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.path, e.split, e.condition));
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut seed = None;
        let mut spec_a = None;
        let mut spec_b = None;
        let mut inventory = None;
        let mut entries = Vec::new();
        let mut ids = std::collections::BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |m: String| Error::parse(path, i + 1, m);
            if line.trim().is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let mut it = h.split_whitespace();
                match (it.next(), it.next()) {
                    (Some("seed"), Some(v)) => {
                        seed = Some(v.parse::<u64>().map_err(|e| bad(format!("seed: {e}")))?)
                    }
                    (Some("spec_a"), Some(v)) => spec_a = Some(v.to_string()),
                    (Some("spec_b"), Some(v)) => spec_b = Some(v.to_string()),
                    (Some("inventory"), Some(v)) => inventory = Some(v.to_string()),
                    _ => {}
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(format!(
                    "expected 3 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            let entry = ManifestEntry {
                path: fields[0].to_string(),
                split: fields[1].parse().map_err(|e: Error| bad(e.to_string()))?,
                condition: fields[2].parse().map_err(|e: Error| bad(e.to_string()))?,
            };
            if !ids.insert(entry.id().to_string()) {
                return Err(bad(format!("utterance id {} listed twice", entry.id())));
            }
            entries.push(entry);
        }
        let missing = |what: &str| Error::parse(path, 0, format!("manifest header lacks {what}"));
        Ok(Self {
            seed: seed.ok_or_else(|| missing("seed"))?,
            spec_hashes: [
                spec_a.ok_or_else(|| missing("spec_a"))?,
                spec_b.ok_or_else(|| missing("spec_b"))?,
            ],
            inventory_hash: inventory.ok_or_else(|| missing("inventory"))?,
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Per-utterance seed: the first 8 bytes of SHA-256 over the corpus seed and id.
pub fn derive_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn spec_file(l: Locale) -> String {
    format!("spec.{}.json", l.tag())
}

fn lexicon_file(l: Locale) -> String {
    format!("lexicon.{}.txt", l.tag())
}

/// Distinct word sequences available to one locale.
fn variety(n_words: usize, [lo, hi]: [usize; 2]) -> f64 {
    let n = n_words as f64;
    (lo..=hi).map(|k| n * (n - 1.0).powi(k as i32 - 1)).sum()
}

fn mono_utterance(
    spec: &SyntheticLocaleSpec,
    words_per_utterance: [usize; 2],
    id: &str,
    seed: u64,
) -> Result<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, id));
    let n = rng.random_range(words_per_utterance[0]..=words_per_utterance[1]);
    let mut words: Vec<&str> = Vec::with_capacity(n);
    while words.len() < n {
        let w = spec.words[rng.random_range(0..spec.words.len())].as_str();
        if spec.words.len() < 2 || words.last() != Some(&w) {
            words.push(w);
        }
    }
    synth_utterance(spec, &words, id, rng.next_u64())
}

/// Generates every utterance of a corpus into `out_dir` and writes the
/// manifest, both locale specs, lexicons and inventories next to them.
///
/// Ids are `{split}-{condition}-{index:05}`. A code-mixed utterance joins two
/// fresh sources of its own split, locale A first for even indices and
/// locale B first for odd ones. Every utterance is generated from a seed
/// derived from `(seed, id)`, so the output does not depend on scheduling.
pub fn build_corpus(
    specs: (&SyntheticLocaleSpec, &SyntheticLocaleSpec),
    map: &BilingualSpaceMap,
    sizes: &CorpusSizes,
    words_per_utterance: [usize; 2],
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    let specs = [specs.0, specs.1];
    let expected = crate::lexicon::merge_inventories(&specs[0].lexicon()?, &specs[1].lexicon()?)?;
    if expected.hash() != map.hash() {
        return Err(Error::InventoryMismatch {
            model: map.hash(),
            corpus: expected.hash(),
        });
    }
    for (l, s) in Locale::BOTH.into_iter().zip(specs) {
        if s.locale != l {
            return Err(Error::Invalid(format!(
                "spec for slot {l} has locale {}",
                s.locale
            )));
        }
        let needed: usize = Split::ALL
            .iter()
            .map(|&sp| sizes.get(sp).get(Condition::mono(l)) + sizes.get(sp).code_mixed)
            .sum();
        if needed as f64 > variety(s.words.len(), words_per_utterance) {
            return Err(Error::Invalid(format!(
                "locale {l} has {} words, too few for {needed} distinct utterances",
                s.words.len()
            )));
        }
    }
    let utt_dir = out_dir.join("utts");
    std::fs::create_dir_all(&utt_dir).map_err(|e| Error::io(&utt_dir, e))?;

    let mut jobs = Vec::new();
    for split in Split::ALL {
        for cond in Condition::ALL {
            for i in 0..sizes.get(split).get(cond) {
                jobs.push((split, cond, format!("{split}-{cond}-{i:05}"), i));
            }
        }
    }
    let entries = jobs
        .par_iter()
        .map(|(split, cond, id, i)| {
            let utt = match cond {
                Condition::MonoA => mono_utterance(specs[0], words_per_utterance, id, seed)?,
                Condition::MonoB => mono_utterance(specs[1], words_per_utterance, id, seed)?,
                Condition::CodeMixed => {
                    let a =
                        mono_utterance(specs[0], words_per_utterance, &format!("{id}/a"), seed)?;
                    let b =
                        mono_utterance(specs[1], words_per_utterance, &format!("{id}/b"), seed)?;
                    let mut u = if i % 2 == 0 {
                        make_code_mixed(&a, &b)?
                    } else {
                        make_code_mixed(&b, &a)?
                    };
                    u.id = id.clone();
                    u.seed = derive_seed(seed, id);
                    u
                }
            };
            let rel = format!("utts/{id}.utt");
            utt.write(&out_dir.join(&rel))?;
            Ok(ManifestEntry {
                path: rel,
                split: *split,
                condition: *cond,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    for (l, s) in Locale::BOTH.into_iter().zip(specs) {
        let path = out_dir.join(spec_file(l));
        let json = serde_json::to_string_pretty(s).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        let path = out_dir.join(lexicon_file(l));
        std::fs::write(&path, s.lexicon()?.to_text()).map_err(|e| Error::io(&path, e))?;
    }
    map.write_dir(out_dir)?;
    let manifest = CorpusManifest {
        seed,
        spec_hashes: [specs[0].hash(), specs[1].hash()],
        inventory_hash: map.hash(),
        entries,
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// A corpus directory opened for reading.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: CorpusManifest,
    pub map: BilingualSpaceMap,
    pub specs: [SyntheticLocaleSpec; 2],
}

impl Corpus {
    /// Opens a directory written by [`build_corpus`], checking that its
    /// inventories and specs match the manifest hashes.
    pub fn open(root: &Path) -> Result<Self> {
        let manifest_path = root.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(Error::MissingPrerequisite(format!(
                "no corpus at {} (missing {MANIFEST_FILE})",
                root.display()
            )));
        }
        let manifest = CorpusManifest::read(&manifest_path)?;
        let map = BilingualSpaceMap::read_dir(root)?;
        if map.hash() != manifest.inventory_hash {
            return Err(Error::InventoryMismatch {
                model: manifest.inventory_hash.clone(),
                corpus: map.hash(),
            });
        }
        let mut specs = Vec::new();
        for l in Locale::BOTH {
            let path = root.join(spec_file(l));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let spec: SyntheticLocaleSpec = serde_json::from_str(&text)
                .map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
            if spec.hash() != manifest.spec_hashes[l.index()] {
                return Err(Error::Format(format!(
                    "{}: hash {} does not match manifest {}",
                    path.display(),
                    spec.hash(),
                    manifest.spec_hashes[l.index()]
                )));
            }
            specs.push(spec);
        }
        let b = specs.pop().expect("two specs");
        let a = specs.pop().expect("two specs");
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            map,
            specs: [a, b],
        })
    }

    pub fn lexicon(&self, l: Locale) -> Result<GraphemeLexicon> {
        self.specs[l.index()].lexicon()
    }

    pub fn load(&self, split: Split, condition: Condition) -> Result<Vec<Utterance>> {
        self.manifest
            .entries_for(split, condition)
            .map(|e| Utterance::read(&self.root.join(&e.path)))
            .collect()
    }
}
