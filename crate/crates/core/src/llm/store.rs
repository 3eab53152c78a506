use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("replay store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache key {0} already holds a different response")]
    Conflict(String),
    #[error("malformed cache key {0:?}")]
    BadKey(String),
}

/// Directory-backed map from cache key to response text.
///
/// Layout: `<root>/<first-2-hex>/<key>.txt` holds the raw response and
/// `<key>.req.json` the canonical request. Keys are write-once.
#[derive(Debug)]
pub struct ReplayStore {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl ReplayStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn shard(&self, key: &str) -> Result<PathBuf, StoreError> {
        let valid = key.len() >= 2 && key.bytes().all(|b| b.is_ascii_hexdigit());
        if !valid {
            return Err(StoreError::BadKey(key.to_string()));
        }
        Ok(self.root.join(&key[..2]))
    }

    pub fn response_path(&self, key: &str) -> Result<PathBuf, StoreError> {
        Ok(self.shard(key)?.join(format!("{key}.txt")))
    }

    pub fn request_path(&self, key: &str) -> Result<PathBuf, StoreError> {
        Ok(self.shard(key)?.join(format!("{key}.req.json")))
    }

    pub fn get(&self, key: &str) -> Result<Option<String>, StoreError> {
        let path = self.response_path(key)?;
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(StoreError::Io { path, source }),
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.response_path(key).map(|p| p.is_file()).unwrap_or(false)
    }

    /// Stores `response` under `key`. Re-storing the same text is a no-op;
    /// a different text is rejected with [`StoreError::Conflict`].
    pub fn put(&self, key: &str, canonical_request: &str, response: &str) -> Result<(), StoreError> {
        let shard = self.shard(key)?;
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(existing) = self.get(key)? {
            return if existing == response {
                Ok(())
            } else {
                Err(StoreError::Conflict(key.to_string()))
            };
        }
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Io { path, source }
        };
        std::fs::create_dir_all(&shard).map_err(io(&shard))?;
        let req_path = self.request_path(key)?;
        std::fs::write(&req_path, canonical_request).map_err(io(&req_path))?;

        let target = self.response_path(key)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&shard).map_err(io(&shard))?;
        tmp.write_all(response.as_bytes()).map_err(io(&target))?;
        match tmp.persist_noclobber(&target) {
            Ok(_) => Ok(()),
            // Another process won the race; it must have written the same text.
            Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => match self.get(key)? {
                Some(existing) if existing == response => Ok(()),
                _ => Err(StoreError::Conflict(key.to_string())),
            },
            Err(e) => Err(StoreError::Io {
                path: target,
                source: e.error,
            }),
        }
    }
}
