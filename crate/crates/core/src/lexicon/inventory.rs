use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::lexicon::GraphemeLexicon;
use super::units::UnitToken;
use crate::error::{Error, Result};
use crate::locale::Locale;

pub const SIL: &str = "SIL";
pub const FOREIGN: &str = "FOREIGN";
pub const SIL_ID: usize = 0;
pub const FOREIGN_ID: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InventoryKind {
    /// SIL at 0, then units.
    Bilingual,
    /// SIL at 0, FOREIGN at 1, then units.
    PerLocale,
}

/// Dense id space over rendered units plus reserved labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitInventory {
    kind: InventoryKind,
    units: Vec<String>,
    index: HashMap<String, usize>,
}

impl UnitInventory {
    /// Builds an inventory from unit renderings; they are sorted here.
    pub fn new(kind: InventoryKind, units: impl IntoIterator<Item = String>) -> Result<Self> {
        let sorted: BTreeSet<String> = units.into_iter().collect();
        let mut all = vec![SIL.to_string()];
        if kind == InventoryKind::PerLocale {
            all.push(FOREIGN.to_string());
        }
        for u in sorted {
            u.parse::<UnitToken>()?;
            all.push(u);
        }
        Self::from_ordered(kind, all)
    }

    fn from_ordered(kind: InventoryKind, units: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(units.len());
        for (i, u) in units.iter().enumerate() {
            if index.insert(u.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate unit {u:?}")));
            }
        }
        Ok(Self { kind, units, index })
    }

    pub fn kind(&self) -> InventoryKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn id(&self, rendered: &str) -> Option<usize> {
        self.index.get(rendered).copied()
    }

    pub fn unit(&self, id: usize) -> Option<&str> {
        self.units.get(id).map(String::as_str)
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn foreign_id(&self) -> Option<usize> {
        (self.kind == InventoryKind::PerLocale).then_some(FOREIGN_ID)
    }

    /// Parsed letter unit for `id`, or `None` for SIL/FOREIGN.
    pub fn token(&self, id: usize) -> Option<UnitToken> {
        let first = match self.kind {
            InventoryKind::Bilingual => 1,
            InventoryKind::PerLocale => 2,
        };
        if id < first {
            return None;
        }
        self.units.get(id).and_then(|u| u.parse().ok())
    }

    /// Letter units only, without reserved labels.
    pub fn letter_units(&self) -> impl Iterator<Item = &str> {
        let skip = match self.kind {
            InventoryKind::Bilingual => 1,
            InventoryKind::PerLocale => 2,
        };
        self.units.iter().skip(skip).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, u) in self.units.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{u}");
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut units = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (id, unit) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected id<TAB>unit"))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad id {id:?}")))?;
            if id != i {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("ids must be dense, found {id}"),
                ));
            }
            units.push(unit.to_string());
        }
        if units.first().map(String::as_str) != Some(SIL) {
            return Err(Error::parse(path, 1, "SIL must have id 0"));
        }
        let kind = if units.get(1).map(String::as_str) == Some(FOREIGN) {
            InventoryKind::PerLocale
        } else {
            InventoryKind::Bilingual
        };
        let skip = if kind == InventoryKind::PerLocale {
            2
        } else {
            1
        };
        for (i, u) in units.iter().enumerate().skip(skip) {
            u.parse::<UnitToken>()
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        Self::from_ordered(kind, units).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// The bilingual target space and its projections onto each locale's space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BilingualSpaceMap {
    pub bilingual: UnitInventory,
    pub locales: [UnitInventory; 2],
    to_locale: [Vec<usize>; 2],
}

impl BilingualSpaceMap {
    /// Assembles the map from three inventories, deriving id projections by name.
    pub fn from_inventories(
        bilingual: UnitInventory,
        a: UnitInventory,
        b: UnitInventory,
    ) -> Result<Self> {
        if bilingual.kind() != InventoryKind::Bilingual
            || a.kind() != InventoryKind::PerLocale
            || b.kind() != InventoryKind::PerLocale
        {
            return Err(Error::Invalid("inventory kinds do not match roles".into()));
        }
        let project = |inv: &UnitInventory| -> Vec<usize> {
            bilingual
                .units()
                .iter()
                .map(|u| inv.id(u).unwrap_or(FOREIGN_ID))
                .collect()
        };
        let to_locale = [project(&a), project(&b)];
        for inv in [&a, &b] {
            if let Some(u) = inv.letter_units().find(|u| bilingual.id(u).is_none()) {
                return Err(Error::Invalid(format!(
                    "locale unit {u:?} missing from bilingual inventory"
                )));
            }
        }
        if bilingual
            .letter_units()
            .any(|u| a.id(u).is_none() && b.id(u).is_none())
        {
            return Err(Error::Invalid(
                "bilingual unit absent from both locales".into(),
            ));
        }
        Ok(Self {
            bilingual,
            locales: [a, b],
            to_locale,
        })
    }

    pub fn locale(&self, locale: Locale) -> &UnitInventory {
        &self.locales[locale.index()]
    }

    /// Per-locale id for a bilingual id; FOREIGN when the unit is not in `locale`.
    pub fn to_locale_id(&self, locale: Locale, bilingual_id: usize) -> usize {
        self.to_locale[locale.index()][bilingual_id]
    }

    pub fn projection(&self, locale: Locale) -> &[usize] {
        &self.to_locale[locale.index()]
    }

    /// Fraction of bilingual letter units present in both locales.
    pub fn sharing(&self) -> f64 {
        let total = self.bilingual.len() - 1;
        if total == 0 {
            return 0.0;
        }
        let shared = (1..self.bilingual.len())
            .filter(|&id| {
                self.to_locale_id(Locale::A, id) != FOREIGN_ID
                    && self.to_locale_id(Locale::B, id) != FOREIGN_ID
            })
            .count();
        shared as f64 / total as f64
    }

    /// Stable content hash over all three inventories.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for inv in [&self.bilingual, &self.locales[0], &self.locales[1]] {
            h.update(inv.to_text().as_bytes());
            h.update([0u8]);
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub const BILINGUAL_FILE: &'static str = "inventory.bilingual.txt";

    pub fn locale_file(locale: Locale) -> String {
        format!("inventory.{}.txt", locale.tag())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path, e))
        };
        write(Self::BILINGUAL_FILE, self.bilingual.to_text())?;
        for l in Locale::BOTH {
            write(&Self::locale_file(l), self.locale(l).to_text())?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let bilingual = UnitInventory::read(&dir.join(Self::BILINGUAL_FILE))?;
        let a = UnitInventory::read(&dir.join(Self::locale_file(Locale::A)))?;
        let b = UnitInventory::read(&dir.join(Self::locale_file(Locale::B)))?;
        Self::from_inventories(bilingual, a, b)
    }
}

/// Unions two lexicons' units into the bilingual space.
pub fn merge_inventories(a: &GraphemeLexicon, b: &GraphemeLexicon) -> Result<BilingualSpaceMap> {
    let units_a = a.rendered_units();
    let units_b = b.rendered_units();
    let union: BTreeSet<String> = units_a.union(&units_b).cloned().collect();
    let bilingual = UnitInventory::new(InventoryKind::Bilingual, union)?;
    let inv_a = UnitInventory::new(InventoryKind::PerLocale, units_a)?;
    let inv_b = UnitInventory::new(InventoryKind::PerLocale, units_b)?;
    BilingualSpaceMap::from_inventories(bilingual, inv_a, inv_b)
}
