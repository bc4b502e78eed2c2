//! Deterministic tar export/import of workspace files.
//!
//! Entries are regular files only, sorted by workdir-relative path, with
//! mode 0644, mtime 0 and uid/gid 0, so equal trees give equal archives.

use std::io::Read;

use super::{Sandbox, SandboxError};

#[derive(Debug, Clone, Copy, Default)]
pub struct ExportOptions {
    /// Include the `.git` directory.
    pub include_git: bool,
}

fn is_git_path(path: &str) -> bool {
    path == ".git" || path.starts_with(".git/")
}

/// Build a tar from in-memory `(path, bytes)` pairs (sorted by the caller or
/// not — they are sorted here).
pub fn tar_from_files(mut files: Vec<(String, Vec<u8>)>) -> Result<Vec<u8>, SandboxError> {
    files.sort_by(|a, b| a.0.cmp(&b.0));
    let mut builder = tar::Builder::new(Vec::new());
    builder.mode(tar::HeaderMode::Deterministic);
    for (path, content) in files {
        let mut header = tar::Header::new_gnu();
        header.set_size(content.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_uid(0);
        header.set_gid(0);
        header.set_entry_type(tar::EntryType::Regular);
        builder.append_data(&mut header, &path, content.as_slice())?;
    }
    Ok(builder.into_inner()?)
}

/// Tar every file under `root` (`""` for the whole workspace).
pub fn export_tar(sandbox: &mut dyn Sandbox, root: &str, options: ExportOptions) -> Result<Vec<u8>, SandboxError> {
    let mut files = Vec::new();
    for path in sandbox.list_files(root)? {
        if !options.include_git && is_git_path(&path) {
            continue;
        }
        let content = sandbox.read_file(&path)?;
        files.push((path, content));
    }
    tar_from_files(files)
}

/// `(path, bytes)` for every regular file in an archive, in archive order.
pub fn read_tar(bytes: &[u8]) -> Result<Vec<(String, Vec<u8>)>, SandboxError> {
    let mut archive = tar::Archive::new(bytes);
    let mut out = Vec::new();
    for entry in archive.entries()? {
        let mut entry = entry?;
        if entry.header().entry_type() != tar::EntryType::Regular {
            continue;
        }
        let path = entry.path()?.to_string_lossy().into_owned();
        let mut content = Vec::new();
        entry.read_to_end(&mut content)?;
        out.push((path, content));
    }
    Ok(out)
}

/// Write every file of the archive into the workspace.
pub fn import_tar(sandbox: &mut dyn Sandbox, bytes: &[u8]) -> Result<(), SandboxError> {
    for (path, content) in read_tar(bytes)? {
        sandbox.write_file(&path, &content)?;
    }
    Ok(())
}
