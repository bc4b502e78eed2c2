//! On-disk record/replay archive.
//!
//! One directory, one JSON file per transcript key (`<key>.json`):
//!
//! ```json
//! { "schema_version": 1, "key": "<sha256 hex>", "request": {...}, "response": {...} }
//! ```
//!
//! Records are loaded once at open time; lookups afterwards are plain reads of
//! an immutable map. Writes are serialized through a mutex and land via
//! write-to-temp + rename.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CompletionRequest, CompletionResponse, TranscriptKey};

pub const ARCHIVE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub schema_version: u32,
    pub key: TranscriptKey,
    pub request: CompletionRequest,
    pub response: CompletionResponse,
}

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed archive record {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug)]
pub struct Archive {
    dir: PathBuf,
    loaded: HashMap<TranscriptKey, ArchiveRecord>,
    write_lock: Mutex<()>,
}

impl Archive {
    /// Open (creating if needed) an archive directory and load its records.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ArchiveError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut loaded = HashMap::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let record: ArchiveRecord =
                serde_json::from_str(&text).map_err(|e| ArchiveError::Malformed {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            if record.schema_version != ARCHIVE_SCHEMA_VERSION {
                return Err(ArchiveError::Malformed {
                    path,
                    message: format!("unsupported schema version {}", record.schema_version),
                });
            }
            if TranscriptKey::of(&record.request) != record.key {
                return Err(ArchiveError::Malformed {
                    path,
                    message: "stored key does not match the request digest".into(),
                });
            }
            loaded.insert(record.key.clone(), record);
        }
        Ok(Self {
            dir,
            loaded,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.loaded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loaded.is_empty()
    }

    pub fn get(&self, key: &TranscriptKey) -> Option<&ArchiveRecord> {
        self.loaded.get(key)
    }

    pub fn put(&self, record: ArchiveRecord) -> Result<(), ArchiveError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.dir.join(format!("{}.json", record.key));
        let tmp = self.dir.join(format!(".{}.json.tmp", record.key));
        let mut text = serde_json::to_string_pretty(&record).expect("records serialize");
        text.push('\n');
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(())
    }
}
