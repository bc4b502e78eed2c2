//! Isolated, persistent execution environments for generated projects.
//!
//! [`Sandbox`] is the handle interface; [`Provisioner`] creates handles from a
//! [`SandboxSpec`]. Two backends implement it:
//!
//! * [`local`] — a private temporary directory per handle with commands run as
//!   plain subprocesses. No container runtime needed; used by the test suite.
//! * [`docker`] — the container runtime API over its Unix socket.
//!
//! Everything else (test snapshots, git baselines and diffs, tar export, forks)
//! is written once on top of the trait.
//!
//! Paths given to a handle are relative to the workdir; absolute paths under
//! the workdir are accepted, anything escaping it is rejected.

pub mod docker;
mod dockerfile;
mod http;
pub mod local;
pub mod snapshot;
pub mod tarball;
pub mod vcs;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dockerfile::{validate_dockerfile, DockerInstruction};
pub use snapshot::{digest_set, restore_tests, snapshot_tests, SnapshotEntry, TestSnapshot};

/// Exit code reported for commands killed by the timeout.
pub const TIMEOUT_EXIT_CODE: i32 = 124;
/// Per-stream capture limit.
pub const OUTPUT_CAP: usize = 64 * 1024;
pub const TRUNCATION_MARKER: &str = "\n[... output truncated ...]\n";
pub const DEFAULT_WORKDIR: &str = "/workspace";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLimits {
    pub cpus: u32,
    pub memory_bytes: u64,
    pub default_timeout_secs: u64,
}

impl Default for ResourceLimits {
    fn default() -> Self {
        Self {
            cpus: 2,
            memory_bytes: 4 << 30,
            default_timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxSpec {
    /// Directory holding the `Dockerfile` and the initial repository files.
    pub build_context: PathBuf,
    pub workdir: String,
    pub limits: ResourceLimits,
}

impl SandboxSpec {
    pub fn new(build_context: impl Into<PathBuf>) -> Self {
        Self {
            build_context: build_context.into(),
            workdir: DEFAULT_WORKDIR.into(),
            limits: ResourceLimits::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandboxState {
    Building,
    Running,
    Stopped,
    Destroyed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub duration_ms: u64,
    pub timed_out: bool,
}

impl ExecResult {
    pub fn success(&self) -> bool {
        self.exit_code == 0 && !self.timed_out
    }

    /// stdout and stderr joined, as an agent sees them.
    pub fn combined(&self) -> String {
        match (self.stdout.is_empty(), self.stderr.is_empty()) {
            (_, true) => self.stdout.clone(),
            (true, false) => self.stderr.clone(),
            (false, false) => {
                let mut s = self.stdout.clone();
                if !s.ends_with('\n') {
                    s.push('\n');
                }
                s.push_str(&self.stderr);
                s
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("provisioning failed: {message}\n{log}")]
    Provision { message: String, log: String },
    #[error("sandbox {id} is {state:?}; operation needs a running sandbox")]
    State { id: String, state: SandboxState },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("path {0:?} escapes the workspace")]
    PathEscape(String),
    #[error("restore failed: {0}")]
    Restore(String),
    #[error("{0}")]
    Vcs(String),
    #[error("sandbox io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("container runtime error: {0}")]
    Runtime(String),
}

pub trait Sandbox: Send {
    fn id(&self) -> &str;
    fn state(&self) -> SandboxState;
    /// Logical working directory shown to agents.
    fn workdir(&self) -> &str;
    fn exec(&mut self, command: &str, timeout: Duration) -> Result<ExecResult, SandboxError>;
    fn read_file(&mut self, path: &str) -> Result<Vec<u8>, SandboxError>;
    /// Creates parent directories as needed.
    fn write_file(&mut self, path: &str, bytes: &[u8]) -> Result<(), SandboxError>;
    /// Removes a file or directory tree; missing paths are not an error.
    fn remove_path(&mut self, path: &str) -> Result<(), SandboxError>;
    /// Regular files under `root`, relative to the workdir, sorted.
    /// A missing root is `NotFound`.
    fn list_files(&mut self, root: &str) -> Result<Vec<String>, SandboxError>;
    fn stop(&mut self) -> Result<(), SandboxError>;
    fn destroy(&mut self) -> Result<(), SandboxError>;
}

pub trait Provisioner: Send + Sync {
    fn provision(&self, spec: &SandboxSpec) -> Result<Box<dyn Sandbox>, SandboxError>;
}

/// Normalize a caller path to a workdir-relative one (`""` is the workdir).
pub fn relative_path(workdir: &str, path: &str) -> Result<String, SandboxError> {
    let escape = || SandboxError::PathEscape(path.to_string());
    let stripped = if let Some(rest) = path.strip_prefix(workdir) {
        if !(rest.is_empty() || rest.starts_with('/')) {
            return Err(escape());
        }
        rest
    } else if path.starts_with('/') {
        return Err(escape());
    } else {
        path
    };
    let mut parts: Vec<&str> = Vec::new();
    for part in stripped.split('/') {
        match part {
            "" | "." => {}
            ".." => return Err(escape()),
            p => parts.push(p),
        }
    }
    Ok(parts.join("/"))
}

/// Keep at most [`OUTPUT_CAP`] bytes (on a char boundary) plus a marker.
pub fn cap_output(bytes: &[u8], total_len: usize) -> String {
    let text = String::from_utf8_lossy(bytes);
    if total_len <= OUTPUT_CAP {
        return text.into_owned();
    }
    let mut end = text.len().min(OUTPUT_CAP);
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}{TRUNCATION_MARKER}", &text[..end])
}

/// Provision a new handle from `spec` whose workspace is a full copy of
/// `source`'s (including version-control metadata).
pub fn fork(
    provisioner: &dyn Provisioner,
    spec: &SandboxSpec,
    source: &mut dyn Sandbox,
) -> Result<Box<dyn Sandbox>, SandboxError> {
    let archive = tarball::export_tar(source, "", tarball::ExportOptions { include_git: true })?;
    let mut copy = provisioner.provision(spec)?;
    for entry in copy.list_files("")? {
        copy.remove_path(&entry)?;
    }
    tarball::import_tar(copy.as_mut(), &archive)?;
    Ok(copy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths() {
        let w = "/workspace";
        assert_eq!(relative_path(w, "/workspace/tests/a.py").unwrap(), "tests/a.py");
        assert_eq!(relative_path(w, "./tests//a.py").unwrap(), "tests/a.py");
        assert_eq!(relative_path(w, "/workspace").unwrap(), "");
        assert!(relative_path(w, "/workspaces/x").is_err());
        assert!(relative_path(w, "/etc/passwd").is_err());
        assert!(relative_path(w, "a/../../x").is_err());
    }

    #[test]
    fn cap_marks_truncation() {
        let big = vec![b'a'; OUTPUT_CAP + 10];
        let out = cap_output(&big[..OUTPUT_CAP], big.len());
        assert!(out.ends_with(TRUNCATION_MARKER));
        assert_eq!(cap_output(b"hi\n", 3), "hi\n");
    }
}
