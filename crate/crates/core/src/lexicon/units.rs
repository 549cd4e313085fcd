use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::romanize::is_base_letter;
use crate::error::{Error, Result};

/// Where a letter sits inside its word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Position {
    Initial,
    Internal,
    Final,
    Singleton,
}

/// A position-dependent letter unit, rendered as `_x`, `x`, `x_` or `=x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UnitToken {
    pub letter: char,
    pub position: Position,
}

impl UnitToken {
    pub fn new(letter: char, position: Position) -> Result<Self> {
        if !is_base_letter(letter) {
            return Err(Error::InvalidUnit(letter.to_string()));
        }
        Ok(Self { letter, position })
    }

    pub fn render(&self) -> String {
        self.to_string()
    }

    /// Starts a word: word-initial or singleton.
    pub fn opens_word(&self) -> bool {
        matches!(self.position, Position::Initial | Position::Singleton)
    }

    /// Ends a word: word-final or singleton.
    pub fn closes_word(&self) -> bool {
        matches!(self.position, Position::Final | Position::Singleton)
    }
}

impl fmt::Display for UnitToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.position {
            Position::Initial => write!(f, "_{}", self.letter),
            Position::Internal => write!(f, "{}", self.letter),
            Position::Final => write!(f, "{}_", self.letter),
            Position::Singleton => write!(f, "={}", self.letter),
        }
    }
}

impl FromStr for UnitToken {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        let bad = || Error::InvalidUnit(s.to_string());
        let (letter, position) = match chars.as_slice() {
            [c] => (*c, Position::Internal),
            ['_', c] => (*c, Position::Initial),
            ['=', c] => (*c, Position::Singleton),
            [c, '_'] => (*c, Position::Final),
            _ => return Err(bad()),
        };
        UnitToken::new(letter, position).map_err(|_| bad())
    }
}

/// Splits an already romanized word into boundary-marked letter units.
pub fn word_to_units(word: &str) -> Result<Vec<UnitToken>> {
    let letters: Vec<char> = word.chars().collect();
    if letters.is_empty() {
        return Err(Error::EmptyWord);
    }
    if let Some(&c) = letters.iter().find(|c| !is_base_letter(**c)) {
        return Err(Error::Unromanizable {
            word: word.to_string(),
            character: c,
        });
    }
    let last = letters.len() - 1;
    Ok(letters
        .iter()
        .enumerate()
        .map(|(i, &letter)| {
            let position = match (i == 0, i == last) {
                (true, true) => Position::Singleton,
                (true, false) => Position::Initial,
                (false, true) => Position::Final,
                (false, false) => Position::Internal,
            };
            UnitToken { letter, position }
        })
        .collect())
}

/// Letters of a unit sequence, markers removed.
pub fn units_to_letters(units: &[UnitToken]) -> String {
    units.iter().map(|u| u.letter).collect()
}

pub fn render_units(units: &[UnitToken]) -> String {
    units
        .iter()
        .map(UnitToken::render)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_units(s: &str) -> Result<Vec<UnitToken>> {
    s.split_whitespace().map(str::parse).collect()
}
