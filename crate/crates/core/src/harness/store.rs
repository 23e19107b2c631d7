use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{system_clock, SharedClock};

/// File-backed token cache keyed by resource URI.
///
/// Stands in for an OS keychain: the file is created owner read/write only
/// and replaced atomically on every write.
#[derive(Debug, Clone)]
pub struct TokenStore {
    path: PathBuf,
    clock: SharedClock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredToken {
    pub access_token: String,
    pub expires_at: i64,
    /// Who the token was issued to, so another persona never picks it up.
    #[serde(default)]
    pub username: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct StoreFile {
    entries: BTreeMap<String, StoredToken>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("token store {path} is corrupt: {message}")]
    StoreCorrupt { path: PathBuf, message: String },
    #[error("token store {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl TokenStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self::with_clock(path, system_clock())
    }

    pub fn with_clock(path: impl Into<PathBuf>, clock: SharedClock) -> Self {
        TokenStore {
            path: path.into(),
            clock,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io(&self, source: std::io::Error) -> StoreError {
        StoreError::Io {
            path: self.path.clone(),
            source,
        }
    }

    fn read_strict(&self) -> Result<StoreFile, StoreError> {
        let text = match std::fs::read_to_string(&self.path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(StoreFile::default()),
            Err(e) => return Err(self.io(e)),
        };
        serde_json::from_str(&text).map_err(|e| StoreError::StoreCorrupt {
            path: self.path.clone(),
            message: e.to_string(),
        })
    }

    /// Unparseable files count as empty.
    fn read(&self) -> StoreFile {
        match self.read_strict() {
            Ok(file) => file,
            Err(e) => {
                tracing::warn!(error = %e, "ignoring unreadable token store");
                StoreFile::default()
            }
        }
    }

    /// Check the file parses, without filtering anything.
    pub fn verify(&self) -> Result<usize, StoreError> {
        self.read_strict().map(|f| f.entries.len())
    }

    pub fn get(&self, resource: &str) -> Option<StoredToken> {
        let now = self.clock.now();
        self.read()
            .entries
            .remove(resource)
            .filter(|t| t.expires_at > now)
    }

    pub fn put(&self, resource: &str, token: StoredToken) -> Result<(), StoreError> {
        let mut file = self.read();
        file.entries.insert(resource.to_string(), token);
        self.write(&file)
    }

    pub fn remove(&self, resource: &str) -> Result<(), StoreError> {
        let mut file = self.read();
        if file.entries.remove(resource).is_some() {
            self.write(&file)?;
        }
        Ok(())
    }

    fn write(&self, file: &StoreFile) -> Result<(), StoreError> {
        let dir = self
            .path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| Path::new("."));
        std::fs::create_dir_all(dir).map_err(|e| self.io(e))?;
        let name = self
            .path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "tokens.json".into());
        let tmp = dir.join(format!(".{name}.{}.tmp", uuid::Uuid::new_v4().simple()));

        let mut options = std::fs::OpenOptions::new();
        options.write(true).create_new(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            options.mode(0o600);
        }
        let result = (|| {
            let mut out = options.open(&tmp)?;
            out.write_all(&serde_json::to_vec_pretty(file).expect("store serializes"))?;
            out.sync_all()?;
            std::fs::rename(&tmp, &self.path)
        })();
        if result.is_err() {
            let _ = std::fs::remove_file(&tmp);
        }
        result.map_err(|e| self.io(e))
    }
}
