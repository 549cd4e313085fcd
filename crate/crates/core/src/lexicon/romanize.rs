//! Romanization of accented Latin letters to the 26-letter base alphabet.
//!
//! The fold table covers U+00C0..=U+017F (Latin-1 Supplement letters and
//! Latin Extended-A). Each entry is the canonical decomposition with combining
//! marks dropped; stroke and dot variants (ø, đ, ł, ŀ, ħ, ŧ, ı, ſ) fold to
//! their base letter as well. Ligatures and letters with no single base letter
//! (æ, œ, ß, ĳ, ð, þ, ŋ, ĸ, ŉ) are rejected so that folding preserves length.

use crate::error::{Error, Result};

const FOLD_START: u32 = 0xC0;

#[rustfmt::skip]
static FOLD: [u8; 192] = [
    b'a', b'a', b'a', b'a', b'a', b'a', 0, b'c', b'e', b'e', b'e', b'e', b'i', b'i', b'i', b'i', // U+00C0
    0, b'n', b'o', b'o', b'o', b'o', b'o', 0, b'o', b'u', b'u', b'u', b'u', b'y', 0, 0, // U+00D0
    b'a', b'a', b'a', b'a', b'a', b'a', 0, b'c', b'e', b'e', b'e', b'e', b'i', b'i', b'i', b'i', // U+00E0
    0, b'n', b'o', b'o', b'o', b'o', b'o', 0, b'o', b'u', b'u', b'u', b'u', b'y', 0, b'y', // U+00F0
    b'a', b'a', b'a', b'a', b'a', b'a', b'c', b'c', b'c', b'c', b'c', b'c', b'c', b'c', b'd', b'd', // U+0100
    b'd', b'd', b'e', b'e', b'e', b'e', b'e', b'e', b'e', b'e', b'e', b'e', b'g', b'g', b'g', b'g', // U+0110
    b'g', b'g', b'g', b'g', b'h', b'h', b'h', b'h', b'i', b'i', b'i', b'i', b'i', b'i', b'i', b'i', // U+0120
    b'i', b'i', 0, 0, b'j', b'j', b'k', b'k', 0, b'l', b'l', b'l', b'l', b'l', b'l', b'l', // U+0130
    b'l', b'l', b'l', b'n', b'n', b'n', b'n', b'n', b'n', 0, 0, 0, b'o', b'o', b'o', b'o', // U+0140
    b'o', b'o', 0, 0, b'r', b'r', b'r', b'r', b'r', b'r', b's', b's', b's', b's', b's', b's', // U+0150
    b's', b's', b't', b't', b't', b't', b't', b't', b'u', b'u', b'u', b'u', b'u', b'u', b'u', b'u', // U+0160
    b'u', b'u', b'u', b'u', b'w', b'w', b'y', b'y', b'y', b'z', b'z', b'z', b'z', b'z', b'z', b's', // U+0170
];

/// Folds one character to a base letter or apostrophe.
pub fn fold_char(c: char) -> Option<char> {
    match c {
        'a'..='z' | '\'' => Some(c),
        'A'..='Z' => Some(c.to_ascii_lowercase()),
        '\u{2019}' => Some('\''),
        _ => {
            let cp = c as u32;
            if (FOLD_START..FOLD_START + FOLD.len() as u32).contains(&cp) {
                match FOLD[(cp - FOLD_START) as usize] {
                    0 => None,
                    b => Some(b as char),
                }
            } else {
                None
            }
        }
    }
}

/// Lowercases and strips diacritics, rejecting anything outside the table.
pub fn romanize(word: &str) -> Result<String> {
    if word.is_empty() {
        return Err(Error::EmptyWord);
    }
    word.chars()
        .map(|c| {
            fold_char(c).ok_or_else(|| Error::Unromanizable {
                word: word.to_string(),
                character: c,
            })
        })
        .collect()
}

/// True for characters that may appear in a romanized word.
pub fn is_base_letter(c: char) -> bool {
    c.is_ascii_lowercase() || c == '\''
}
