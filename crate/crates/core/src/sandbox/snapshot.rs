//! Byte-exact capture and restoration of a test directory.
//!
//! On disk a snapshot is a directory with a `manifest.json`
//! (`{"root", "entries": [{"path", "size", "sha256"}]}`, sorted by path) and
//! an `objects/` directory holding each distinct content once, named by its
//! SHA-256 hex digest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{relative_path, Sandbox, SandboxError};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotEntry {
    pub content: Vec<u8>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestSnapshot {
    /// Workdir-relative root, e.g. `tests`.
    pub root: String,
    /// Workdir-relative path → entry.
    pub entries: BTreeMap<String, SnapshotEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    root: String,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    size: u64,
    sha256: String,
}

impl TestSnapshot {
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|(p, e)| (p.clone(), e.sha256.clone()))
            .collect()
    }

    /// Digest over the sorted (path, digest) list; identifies the suite.
    pub fn suite_digest(&self) -> String {
        let mut h = Sha256::new();
        for (p, e) in &self.entries {
            h.update(p.as_bytes());
            h.update([0]);
            h.update(e.sha256.as_bytes());
            h.update([b'\n']);
        }
        hex::encode(h.finalize())
    }

    /// Every stored digest matches its content.
    pub fn verify(&self) -> bool {
        self.entries.values().all(|e| sha256_hex(&e.content) == e.sha256)
    }

    pub fn save(&self, dir: &Path) -> Result<(), SandboxError> {
        let objects = dir.join("objects");
        fs::create_dir_all(&objects)?;
        let mut entries = Vec::new();
        for (path, e) in &self.entries {
            let object = objects.join(&e.sha256);
            if !object.exists() {
                fs::write(&object, &e.content)?;
            }
            entries.push(ManifestEntry {
                path: path.clone(),
                size: e.content.len() as u64,
                sha256: e.sha256.clone(),
            });
        }
        let manifest = Manifest {
            root: self.root.clone(),
            entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SandboxError> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| SandboxError::Restore(format!("malformed snapshot manifest: {e}")))?;
        let mut entries = BTreeMap::new();
        for m in manifest.entries {
            let content = fs::read(dir.join("objects").join(&m.sha256))?;
            if sha256_hex(&content) != m.sha256 || content.len() as u64 != m.size {
                return Err(SandboxError::Restore(format!("snapshot object for {} is corrupt", m.path)));
            }
            entries.insert(
                m.path,
                SnapshotEntry {
                    content,
                    sha256: m.sha256,
                },
            );
        }
        Ok(Self {
            root: manifest.root,
            entries,
        })
    }
}

pub fn snapshot_tests(sandbox: &mut dyn Sandbox, root: &str) -> Result<TestSnapshot, SandboxError> {
    let root = relative_path(sandbox.workdir(), root)?;
    let mut entries = BTreeMap::new();
    for path in sandbox.list_files(&root)? {
        let content = sandbox.read_file(&path)?;
        let sha256 = sha256_hex(&content);
        entries.insert(path, SnapshotEntry { content, sha256 });
    }
    Ok(TestSnapshot { root, entries })
}

/// Path → digest of every regular file under `root` (empty if absent).
pub fn digest_set(sandbox: &mut dyn Sandbox, root: &str) -> Result<BTreeMap<String, String>, SandboxError> {
    let files = match sandbox.list_files(root) {
        Ok(f) => f,
        Err(SandboxError::NotFound(_)) => return Ok(BTreeMap::new()),
        Err(e) => return Err(e),
    };
    let mut out = BTreeMap::new();
    for path in files {
        let content = sandbox.read_file(&path)?;
        out.insert(path, sha256_hex(&content));
    }
    Ok(out)
}

/// Make `snapshot.root` hold exactly the snapshot: the directory is removed,
/// rewritten, and then re-read to confirm every digest. Any failure is a
/// `Restore` error and the caller must not trust the tree.
pub fn restore_tests(sandbox: &mut dyn Sandbox, snapshot: &TestSnapshot) -> Result<(), SandboxError> {
    let fail = |e: SandboxError| SandboxError::Restore(e.to_string());
    if snapshot.root.is_empty() {
        return Err(SandboxError::Restore("refusing to restore over the whole workspace".into()));
    }
    sandbox.remove_path(&snapshot.root).map_err(fail)?;
    for (path, entry) in &snapshot.entries {
        sandbox.write_file(path, &entry.content).map_err(fail)?;
    }
    let now = digest_set(sandbox, &snapshot.root).map_err(fail)?;
    if now != snapshot.digests() {
        return Err(SandboxError::Restore(format!(
            "{} differs from the snapshot after restore",
            snapshot.root
        )));
    }
    Ok(())
}
