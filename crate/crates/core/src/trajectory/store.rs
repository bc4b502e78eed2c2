//! Append-only trajectory storage.
//!
//! Layout under the store root:
//!
//! ```text
//! index.jsonl                  {"id", "kind", "project", "file"} per committed trajectory
//! trajectories/<project>.jsonl one Trajectory JSON object per line
//! ```
//!
//! A record is committed once its index line is written, after the record
//! itself; readers only return indexed records, so a crash between the two
//! writes leaves an orphan line that is never read.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Trajectory, TrajectoryError, TrajectoryFilter, TrajectoryKind};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate trajectory id {0}")]
    Duplicate(String),
    #[error(transparent)]
    Invalid(#[from] TrajectoryError),
    #[error("corrupt store file {file} line {line}: {message}")]
    Corrupt { file: PathBuf, line: usize, message: String },
    #[error("indexed trajectory {0} is missing from its file")]
    Missing(String),
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub kind: TrajectoryKind,
    pub project: String,
    pub file: String,
}

pub struct TrajectoryStore {
    root: PathBuf,
    ids: Mutex<HashSet<String>>,
}

fn file_stem(project: &str) -> String {
    let s: String = project
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("_{s}")
    } else {
        s
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            file: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn append_line(path: &Path, value: &impl Serialize) -> Result<(), StoreError> {
    let mut line = serde_json::to_vec(value).expect("record serializes");
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    f.sync_data()?;
    Ok(())
}

impl TrajectoryStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("trajectories"))?;
        let index: Vec<IndexEntry> = read_jsonl(&root.join("index.jsonl"))?;
        Ok(Self {
            ids: Mutex::new(index.into_iter().map(|e| e.id).collect()),
            root,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Validate and persist; returns the id. Appending a record identical to
    /// the stored one is a no-op, so replayed runs can be repeated; a
    /// different record under an existing id is rejected.
    pub fn append(&self, trajectory: &Trajectory) -> Result<String, StoreError> {
        trajectory.validate()?;
        let mut ids = self.ids.lock().expect("store lock");
        let file = format!("trajectories/{}.jsonl", file_stem(&trajectory.provenance.project));
        if ids.contains(&trajectory.id) {
            let stored: Vec<Trajectory> = read_jsonl(&self.root.join(&file))?;
            if stored.iter().any(|t| t == trajectory) {
                return Ok(trajectory.id.clone());
            }
            return Err(StoreError::Duplicate(trajectory.id.clone()));
        }
        append_line(&self.root.join(&file), trajectory)?;
        append_line(
            &self.root.join("index.jsonl"),
            &IndexEntry {
                id: trajectory.id.clone(),
                kind: trajectory.kind,
                project: trajectory.provenance.project.clone(),
                file,
            },
        )?;
        ids.insert(trajectory.id.clone());
        Ok(trajectory.id.clone())
    }

    pub fn index(&self) -> Result<Vec<IndexEntry>, StoreError> {
        let _guard = self.ids.lock().expect("store lock");
        read_jsonl(&self.root.join("index.jsonl"))
    }

    /// Every committed trajectory, sorted by id.
    pub fn load_all(&self) -> Result<Vec<Trajectory>, StoreError> {
        let index = self.index()?;
        let mut by_file: BTreeMap<&str, HashSet<&str>> = BTreeMap::new();
        for e in &index {
            by_file.entry(e.file.as_str()).or_default().insert(e.id.as_str());
        }
        let mut out = Vec::new();
        for (file, ids) in by_file {
            let records: Vec<Trajectory> = read_jsonl(&self.root.join(file))?;
            let mut seen = HashSet::new();
            for t in records {
                if ids.contains(t.id.as_str()) && seen.insert(t.id.clone()) {
                    out.push(t);
                }
            }
            if let Some(missing) = ids.iter().find(|id| !seen.contains(**id)) {
                return Err(StoreError::Missing(missing.to_string()));
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    pub fn load(&self, id: &str) -> Result<Option<Trajectory>, StoreError> {
        Ok(self.load_all()?.into_iter().find(|t| t.id == id))
    }

    pub fn select(&self, filter: &TrajectoryFilter) -> Result<Vec<Trajectory>, StoreError> {
        Ok(self.load_all()?.into_iter().filter(|t| filter.matches(t)).collect())
    }
}
