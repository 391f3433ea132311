//! Append-only JSON-lines logs and a content-addressed image directory.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::ServiceError;

pub const REQUESTS_LOG: &str = "requests.jsonl";
pub const FEEDBACK_LOG: &str = "feedback.jsonl";
pub const CONFIG_LOG: &str = "config.jsonl";
pub const IMAGES_DIR: &str = "images";

/// One record per line. Appends are not synchronized here; callers hold
/// the lock that orders them.
pub struct JsonlLog<T> {
    path: PathBuf,
    file: File,
    _record: PhantomData<fn(T)>,
}

impl<T: Serialize + DeserializeOwned> JsonlLog<T> {
    pub fn open(path: PathBuf) -> Result<Self, ServiceError> {
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            file,
            _record: PhantomData,
        })
    }

    pub fn append(&mut self, record: &T) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(record).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every complete record. A final line without its newline is an
    /// interrupted append and is skipped.
    pub fn read_all(path: &Path) -> Result<Vec<T>, ServiceError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        complete
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| ServiceError::Store(format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stores `bytes` under their hash and returns the path relative to
/// `store_dir`. Identical submissions share one file.
pub fn store_image(store_dir: &Path, hash: &str, bytes: &[u8]) -> Result<String, ServiceError> {
    let ext = if bytes.starts_with(b"\x89PNG") { "png" } else { "jpg" };
    let rel = format!("{IMAGES_DIR}/{hash}.{ext}");
    let path = store_dir.join(&rel);
    if !path.exists() {
        let tmp = store_dir.join(IMAGES_DIR).join(format!(".{hash}.{}.tmp", uuid::Uuid::new_v4()));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, &path)?;
    }
    Ok(rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torn_final_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        let mut log = JsonlLog::<u32>::open(p.clone()).unwrap();
        log.append(&1).unwrap();
        log.append(&2).unwrap();
        std::fs::OpenOptions::new().append(true).open(&p).unwrap().write_all(b"3").unwrap();
        assert_eq!(JsonlLog::<u32>::read_all(&p).unwrap(), vec![1, 2]);
        assert!(JsonlLog::<u32>::read_all(&dir.path().join("missing")).unwrap().is_empty());
    }

    #[test]
    fn images_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join(IMAGES_DIR)).unwrap();
        let bytes = b"\x89PNG fake";
        let h = sha256_hex(bytes);
        let a = store_image(dir.path(), &h, bytes).unwrap();
        let b = store_image(dir.path(), &h, bytes).unwrap();
        assert_eq!(a, b);
        assert!(a.ends_with(".png"));
        assert_eq!(std::fs::read_dir(dir.path().join(IMAGES_DIR)).unwrap().count(), 1);
    }
}
