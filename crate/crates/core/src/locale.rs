use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Human-readable locale name such as `it` or `en`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocaleId(pub String);

impl LocaleId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LocaleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Slot of a locale in the bilingual pair: `A` is primary, `B` secondary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Locale {
    A,
    B,
}

impl Locale {
    pub const BOTH: [Locale; 2] = [Locale::A, Locale::B];

    pub fn index(self) -> usize {
        match self {
            Locale::A => 0,
            Locale::B => 1,
        }
    }

    pub fn other(self) -> Locale {
        match self {
            Locale::A => Locale::B,
            Locale::B => Locale::A,
        }
    }

    pub fn from_index(i: usize) -> Option<Locale> {
        match i {
            0 => Some(Locale::A),
            1 => Some(Locale::B),
            _ => None,
        }
    }

    /// Lowercase tag used in file names and parameter names.
    pub fn tag(self) -> &'static str {
        match self {
            Locale::A => "a",
            Locale::B => "b",
        }
    }
}

impl fmt::Display for Locale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Locale::A => "A",
            Locale::B => "B",
        })
    }
}

impl FromStr for Locale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Locale::A),
            "B" | "b" => Ok(Locale::B),
            _ => Err(Error::Invalid(format!("unknown locale slot {s:?}"))),
        }
    }
}
