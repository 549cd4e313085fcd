//! Grapheme-letter lexicons and the bilingual unit space.
//!
//! Words are romanized to a 26-letter alphabet (plus apostrophe) and spelled
//! as position-dependent letter units: `_x` opens a word, `x_` closes it, `=x`
//! is a one-letter word and a bare `x` is word-internal. Each locale gets its
//! own inventory with SIL and FOREIGN reserved; the bilingual inventory is the
//! union of both locales' units with SIL reserved.

mod inventory;
#[allow(clippy::module_inception)]
mod lexicon;
mod romanize;
mod units;

pub use inventory::{
    merge_inventories, BilingualSpaceMap, InventoryKind, UnitInventory, FOREIGN, FOREIGN_ID, SIL,
    SIL_ID,
};
pub use lexicon::{build_lexicon, GraphemeLexicon};
pub use romanize::{fold_char, is_base_letter, romanize};
pub use units::{parse_units, render_units, units_to_letters, word_to_units, Position, UnitToken};
