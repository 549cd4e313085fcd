//! Model checkpoints: a directory holding the binary parameter file, a TOML
//! header and the three inventory files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::{Stage, TrainingPlan};
use crate::error::{Error, Result};
use crate::lexicon::BilingualSpaceMap;
use crate::locale::Locale;
use crate::model::{AcousticModel, ModelConfig};
use crate::numcore::checkpoint;

pub const PARAMS_FILE: &str = "params.blxam";
pub const HEADER_FILE: &str = "header.toml";
const FORMAT: &str = "BLXAM1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InventoryFiles {
    bilingual: String,
    a: String,
    b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    params_file: String,
    inventory_hash: String,
    stages: Vec<Stage>,
    inventory_files: InventoryFiles,
    model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plan: Option<TrainingPlan>,
}

/// Writes `model` (parameters and optimizer state) and the plan that
/// produced it into directory `dir`, creating it if needed.
pub fn save_checkpoint(
    model: &AcousticModel,
    plan: Option<&TrainingPlan>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = Header {
        format: FORMAT.into(),
        params_file: PARAMS_FILE.into(),
        inventory_hash: model.map().hash(),
        stages: model.stages().to_vec(),
        inventory_files: InventoryFiles {
            bilingual: BilingualSpaceMap::BILINGUAL_FILE.into(),
            a: BilingualSpaceMap::locale_file(Locale::A),
            b: BilingualSpaceMap::locale_file(Locale::B),
        },
        model: model.config().clone(),
        plan: plan.cloned(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::Format(format!("header: {e}")))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
    };
    write(PARAMS_FILE, &checkpoint::encode(model.store()))?;
    model.map().write_dir(dir)?;
    write(HEADER_FILE, text.as_bytes())
}

/// Reads a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<(AcousticModel, Option<TrainingPlan>)> {
    let header_path = dir.join(HEADER_FILE);
    if !header_path.exists() {
        return Err(Error::MissingPrerequisite(format!(
            "no checkpoint at {} (missing {HEADER_FILE})",
            dir.display()
        )));
    }
    let text = std::fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: Header = toml::from_str(&text).map_err(|e| Error::Parse {
        path: header_path.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    if header.format != FORMAT {
        return Err(Error::Version {
            expected: FORMAT.into(),
            found: header.format,
        });
    }
    let map = BilingualSpaceMap::from_inventories(
        crate::lexicon::UnitInventory::read(&dir.join(&header.inventory_files.bilingual))?,
        crate::lexicon::UnitInventory::read(&dir.join(&header.inventory_files.a))?,
        crate::lexicon::UnitInventory::read(&dir.join(&header.inventory_files.b))?,
    )?;
    if map.hash() != header.inventory_hash {
        return Err(Error::InventoryMismatch {
            model: header.inventory_hash,
            corpus: map.hash(),
        });
    }
    let params_path = dir.join(&header.params_file);
    let bytes = std::fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    let store = checkpoint::decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", params_path.display())),
        other => other,
    })?;
    let model = AcousticModel::from_parts(header.model, map, store, header.stages)?;
    Ok((model, header.plan))
}
