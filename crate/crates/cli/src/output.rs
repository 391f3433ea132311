//! Outputs are written beside their destination and renamed into place, so
//! a failed command leaves nothing half-written.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

fn sibling(dest: &Path, tag: &str) -> Result<PathBuf> {
    let name = dest
        .file_name()
        .with_context(|| format!("{} has no file name", dest.display()))?
        .to_string_lossy();
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.subsec_nanos());
    Ok(dest.with_file_name(format!(".{name}.{tag}-{}-{nanos}", std::process::id())))
}

fn ensure_parent(dest: &Path) -> Result<()> {
    if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

pub fn write_atomic(dest: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(dest)?;
    let tmp = sibling(dest, "tmp")?;
    let res = std::fs::write(&tmp, bytes).and_then(|()| std::fs::rename(&tmp, dest));
    if res.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    res.with_context(|| format!("writing {}", dest.display()))
}

pub fn write_json(dest: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(dest, text)
}

/// A directory filled under a temporary name and moved to `dest` by
/// [`StagedDir::commit`]. Dropped uncommitted, it is deleted.
pub struct StagedDir {
    tmp: PathBuf,
    dest: PathBuf,
    committed: bool,
}

impl StagedDir {
    /// Fails if `dest` exists and is not an empty directory.
    pub fn new(dest: &Path) -> Result<Self> {
        if dest.exists() {
            let empty = dest.is_dir() && std::fs::read_dir(dest)?.next().is_none();
            if !empty {
                bail!("{} already exists and is not empty", dest.display());
            }
        }
        ensure_parent(dest)?;
        let tmp = sibling(dest, "partial")?;
        std::fs::create_dir(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(Self {
            tmp,
            dest: dest.to_path_buf(),
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.tmp
    }

    pub fn commit(mut self) -> Result<()> {
        if self.dest.is_dir() {
            std::fs::remove_dir(&self.dest).with_context(|| format!("replacing {}", self.dest.display()))?;
        }
        std::fs::rename(&self.tmp, &self.dest).with_context(|| format!("moving output to {}", self.dest.display()))?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for StagedDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.tmp);
        }
    }
}
