use std::path::Path;

use crate::error::{Error, Result};
use crate::lexicon::SIL_ID;
use crate::locale::Locale;
use crate::numcore::Tensor;

pub const UTTERANCE_MAGIC: &[u8; 6] = b"BLXUT1";

/// A transcript word with its locale and frame span `start..end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub word: String,
    pub locale: Locale,
    pub start: usize,
    pub end: usize,
}

/// Features plus ground-truth alignment and locale-tagged transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub seed: u64,
    /// `frames × feature_dim`.
    pub features: Tensor,
    /// Bilingual unit id per frame.
    pub alignment: Vec<usize>,
    pub words: Vec<WordSpan>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.alignment.len()
    }

    pub fn transcript(&self) -> Vec<&str> {
        self.words.iter().map(|w| w.word.as_str()).collect()
    }

    /// The single locale of a monolingual utterance; `None` when mixed or empty.
    pub fn mono_locale(&self) -> Option<Locale> {
        let first = self.words.first()?.locale;
        self.words
            .iter()
            .all(|w| w.locale == first)
            .then_some(first)
    }

    /// Checks shape agreement and that word spans cover exactly the
    /// non-silence frames, in order and without overlap.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(format!("utterance {}: {msg}", self.id)));
        if self.features.rank() != 2 || self.features.rows() != self.alignment.len() {
            return bad(format!(
                "{} alignment frames for features of shape {:?}",
                self.alignment.len(),
                self.features.shape()
            ));
        }
        let mut in_word = vec![false; self.frames()];
        let mut prev_end = 0;
        for w in &self.words {
            if w.start >= w.end || w.end > self.frames() || w.start < prev_end {
                return bad(format!("bad span {}..{} for {:?}", w.start, w.end, w.word));
            }
            in_word[w.start..w.end].iter_mut().for_each(|f| *f = true);
            prev_end = w.end;
        }
        for (t, (&id, &inside)) in self.alignment.iter().zip(&in_word).enumerate() {
            if (id != SIL_ID) != inside {
                return bad(format!("frame {t} silence/word mismatch"));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(UTTERANCE_MAGIC);
        put_str(&mut out, &self.id);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.features.cols() as u32).to_le_bytes());
        for v in self.features.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &a in &self.alignment {
            out.extend_from_slice(&(a as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.words.len() as u32).to_le_bytes());
        for w in &self.words {
            put_str(&mut out, &w.word);
            out.push(w.locale.index() as u8);
            out.extend_from_slice(&(w.start as u32).to_le_bytes());
            out.extend_from_slice(&(w.end as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        if r.take(6)? != UTTERANCE_MAGIC {
            return Err(Error::Format("not an utterance file (bad magic)".into()));
        }
        let id = r.string()?;
        let seed = r.u64()?;
        let frames = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let n = frames
            .checked_mul(dim)
            .filter(|n| n.saturating_mul(8) <= bytes.len())
            .ok_or_else(|| Error::Format("implausible utterance size".into()))?;
        let data = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let features = Tensor::new(vec![frames, dim], data)?;
        let mut alignment = Vec::with_capacity(frames);
        for _ in 0..frames {
            alignment.push(r.u32()? as usize);
        }
        let nw = r.u32()? as usize;
        let mut words = Vec::new();
        for _ in 0..nw {
            let word = r.string()?;
            let locale = Locale::from_index(r.take(1)?[0] as usize)
                .ok_or_else(|| Error::Format("bad locale tag".into()))?;
            let start = r.u32()? as usize;
            let end = r.u32()? as usize;
            words.push(WordSpan {
                word,
                locale,
                start,
                end,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes in utterance file".into()));
        }
        let utt = Utterance {
            id,
            seed,
            features,
            alignment,
            words,
        };
        utt.validate()?;
        Ok(utt)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) | Error::Invalid(m) => {
                Error::Format(format!("{}: {m}", path.display()))
            }
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("string is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Utterance {
        Utterance {
            id: "u1".into(),
            seed: 7,
            features: Tensor::new(vec![4, 2], vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.0, -2.0, 0.25])
                .unwrap(),
            alignment: vec![0, 3, 3, 0],
            words: vec![WordSpan {
                word: "a".into(),
                locale: Locale::B,
                start: 1,
                end: 3,
            }],
        }
    }

    #[test]
    fn bytes_round_trip() {
        let u = sample();
        let back = Utterance::from_bytes(&u.to_bytes()).unwrap();
        assert_eq!(back, u);
        assert_eq!(back.mono_locale(), Some(Locale::B));
    }

    #[test]
    fn truncated_rejected() {
        let b = sample().to_bytes();
        assert!(Utterance::from_bytes(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn validate_catches_span_gaps() {
        let mut u = sample();
        u.words[0].end = 2;
        assert!(u.validate().is_err());
        let mut u = sample();
        u.alignment.pop();
        assert!(u.validate().is_err());
    }
}
