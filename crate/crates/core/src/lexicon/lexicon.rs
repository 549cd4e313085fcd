use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::romanize::romanize;
use super::units::{parse_units, render_units, word_to_units, UnitToken};
use crate::error::{Error, Result};
use crate::locale::LocaleId;

/// Word to letter-unit mapping for one locale. Entries are kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphemeLexicon {
    pub locale: LocaleId,
    entries: BTreeMap<String, Vec<UnitToken>>,
}

impl GraphemeLexicon {
    pub fn entries(&self) -> &BTreeMap<String, Vec<UnitToken>> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[UnitToken]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Distinct units used by any entry.
    pub fn unit_set(&self) -> BTreeSet<UnitToken> {
        self.entries.values().flatten().copied().collect()
    }

    /// Rendered forms of `unit_set`, sorted as strings.
    pub fn rendered_units(&self) -> BTreeSet<String> {
        self.entries
            .values()
            .flatten()
            .map(UnitToken::render)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (word, units) in &self.entries {
            let _ = writeln!(out, "{word}\t{}", render_units(units));
        }
        out
    }

    /// Parses the `word<TAB>units` text form, checking every entry.
    pub fn from_text(locale: LocaleId, text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut previous: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let (word, units) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, line_no, "expected word<TAB>units"))?;
            let units =
                parse_units(units).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
            let expected =
                word_to_units(word).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
            if units != expected {
                return Err(Error::parse(path, line_no, "units do not spell the word"));
            }
            if previous.as_deref().is_some_and(|p| p >= word) {
                return Err(Error::parse(
                    path,
                    line_no,
                    "entries must be sorted and unique",
                ));
            }
            previous = Some(word.to_string());
            entries.insert(word.to_string(), units);
        }
        Ok(Self { locale, entries })
    }

    pub fn read(locale: LocaleId, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(locale, &text, path)
    }
}

/// Romanizes, deduplicates and sorts `words` into a lexicon.
pub fn build_lexicon<S: AsRef<str>>(words: &[S], locale: LocaleId) -> Result<GraphemeLexicon> {
    let mut entries = BTreeMap::new();
    for raw in words {
        let raw = raw.as_ref();
        let wrap = |e: Error| Error::BadWord {
            word: raw.to_string(),
            source: Box::new(e),
        };
        let word = romanize(raw).map_err(wrap)?;
        if entries.contains_key(&word) {
            continue;
        }
        let units = word_to_units(&word).map_err(wrap)?;
        entries.insert(word, units);
    }
    if entries.is_empty() {
        return Err(Error::Invalid(format!("lexicon for {locale} has no words")));
    }
    Ok(GraphemeLexicon { locale, entries })
}
