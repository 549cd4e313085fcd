//! Output directory locking and atomic artifact commits.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::failure::Failure;

pub const LOCK_FILE: &str = ".blxam.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::from)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                // The pid is informational only.
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Failure::data(format!(
                "{} is in use by another blxam command; delete {} if none is running",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(anyhow::Error::new(e)
                .context(format!("creating {}", path.display()))
                .into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Builds a directory artifact in a temporary sibling and moves it to
/// `parent/name` only if `build` succeeds, replacing any previous version.
pub fn commit_dir<T>(
    parent: &Path,
    name: &str,
    build: impl FnOnce(&Path) -> Result<T, Failure>,
) -> Result<(PathBuf, T), Failure> {
    std::fs::create_dir_all(parent)
        .with_context(|| format!("creating {}", parent.display()))
        .map_err(Failure::from)?;
    let tmp = tempfile::Builder::new()
        .prefix(&format!(".tmp-{name}-"))
        .tempdir_in(parent)
        .with_context(|| format!("creating a temporary directory in {}", parent.display()))
        .map_err(Failure::from)?;
    let out = build(tmp.path())?;
    let target = parent.join(name);
    let staged = tmp.keep();
    let io = |r: std::io::Result<()>, what: &str| {
        r.with_context(|| what.to_string()).map_err(Failure::from)
    };
    if target.exists() {
        let old = parent.join(format!(".old-{name}-{}", std::process::id()));
        io(
            std::fs::rename(&target, &old),
            "moving the previous artifact aside",
        )?;
        io(
            std::fs::rename(&staged, &target),
            "committing the new artifact",
        )?;
        io(
            std::fs::remove_dir_all(&old),
            "removing the previous artifact",
        )?;
    } else {
        io(
            std::fs::rename(&staged, &target),
            "committing the new artifact",
        )?;
    }
    Ok((target, out))
}

/// Writes `text` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), Failure> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))
        .map_err(Failure::from)?;
    tmp.write_all(text.as_bytes())
        .and_then(|_| tmp.flush())
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::from)?;
    tmp.persist(path)
        .map_err(|e| anyhow::Error::new(e.error).context(format!("writing {}", path.display())))?;
    Ok(())
}
