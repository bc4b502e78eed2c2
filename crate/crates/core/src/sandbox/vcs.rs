//! Git-based baselines and diffs inside a sandbox.
//!
//! Baselines are commits tagged `envforge/<label>`. Commit identity and dates
//! are fixed by the caller so that replayed runs produce identical histories.
//! Diffs are written to a file under `.git/` and read back, so they are never
//! cut by the exec output cap.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Sandbox, SandboxError};

const GIT_TIMEOUT: Duration = Duration::from_secs(120);
const DIFF_FILE: &str = ".git/envforge-diff.patch";
pub const AUTHOR_NAME: &str = "envforge";
pub const AUTHOR_EMAIL: &str = "envforge@localhost";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffStats {
    pub files_changed: u64,
    pub lines_added: u64,
    pub lines_deleted: u64,
}

impl DiffStats {
    pub fn lines_edited(&self) -> u64 {
        self.lines_added + self.lines_deleted
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceDiff {
    pub patch: String,
    pub stats: DiffStats,
}

/// Single-quote a string for bash.
pub fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

pub fn tag_ref(label: &str) -> String {
    format!("envforge/{label}")
}

fn git(sandbox: &mut dyn Sandbox, script: &str) -> Result<String, SandboxError> {
    let result = sandbox.exec(script, GIT_TIMEOUT)?;
    if !result.success() {
        return Err(SandboxError::Vcs(format!(
            "git step failed ({}): {}\n{}",
            result.exit_code,
            script,
            result.combined()
        )));
    }
    Ok(result.stdout)
}

/// Initialize a repository in the workdir if there is none. Reflogs are
/// off: they carry wall-clock times and nothing reads them.
pub fn ensure_repo(sandbox: &mut dyn Sandbox) -> Result<(), SandboxError> {
    git(
        sandbox,
        &format!(
            "[ -d .git ] || git init -q -b main; git config user.name {}; git config user.email {}; \
             git config core.autocrlf false; git config commit.gpgsign false; git config gc.auto 0; \
             git config core.logAllRefUpdates false; rm -rf .git/logs",
            shell_quote(AUTHOR_NAME),
            shell_quote(AUTHOR_EMAIL)
        ),
    )?;
    Ok(())
}

/// Stage everything, commit (empty commits allowed) with `date` (RFC 3339)
/// as author and committer date, and tag the commit `envforge/<label>`.
/// Returns the commit id.
pub fn commit_all(sandbox: &mut dyn Sandbox, label: &str, message: &str, date: &str) -> Result<String, SandboxError> {
    ensure_repo(sandbox)?;
    let script = format!(
        "export GIT_AUTHOR_DATE={d} GIT_COMMITTER_DATE={d}; git add -A && git commit -q --allow-empty --no-verify -m {m} && git tag -f {t} >/dev/null && git rev-parse HEAD",
        d = shell_quote(date),
        m = shell_quote(message),
        t = shell_quote(&tag_ref(label)),
    );
    Ok(git(sandbox, &script)?.trim().to_string())
}

pub fn has_ref(sandbox: &mut dyn Sandbox, reference: &str) -> Result<bool, SandboxError> {
    let r = sandbox.exec(
        &format!("git rev-parse -q --verify {}", shell_quote(&format!("{reference}^{{commit}}"))),
        GIT_TIMEOUT,
    )?;
    Ok(r.success())
}

/// Reset tracked and untracked files to `reference`.
pub fn reset_hard(sandbox: &mut dyn Sandbox, reference: &str) -> Result<(), SandboxError> {
    git(
        sandbox,
        &format!("git reset -q --hard {} && git clean -fdq", shell_quote(reference)),
    )?;
    Ok(())
}

fn diff_text(sandbox: &mut dyn Sandbox, reference: &str, reverse: bool) -> Result<String, SandboxError> {
    if !has_ref(sandbox, reference)? {
        return Err(SandboxError::Vcs(format!("no baseline {reference}")));
    }
    let script = format!(
        "git add -A && git diff --cached --no-color --no-ext-diff --no-renames --binary {} {} > {}",
        if reverse { "-R" } else { "" },
        shell_quote(reference),
        DIFF_FILE
    );
    git(sandbox, &script)?;
    let bytes = sandbox.read_file(DIFF_FILE)?;
    sandbox.remove_path(DIFF_FILE)?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// Unified diff of the current workspace (untracked files included) against
/// `reference`, with line counts taken from the hunks.
pub fn workspace_diff(sandbox: &mut dyn Sandbox, reference: &str) -> Result<WorkspaceDiff, SandboxError> {
    let patch = diff_text(sandbox, reference, false)?;
    let stats = count_diff(&patch);
    Ok(WorkspaceDiff { patch, stats })
}

/// Patch that turns the current workspace back into `reference`.
pub fn reverse_patch(sandbox: &mut dyn Sandbox, reference: &str) -> Result<String, SandboxError> {
    diff_text(sandbox, reference, true)
}

/// Workdir-relative paths that differ between the workspace and `reference`.
pub fn changed_paths(sandbox: &mut dyn Sandbox, reference: &str) -> Result<Vec<String>, SandboxError> {
    if !has_ref(sandbox, reference)? {
        return Err(SandboxError::Vcs(format!("no baseline {reference}")));
    }
    let out = git(
        sandbox,
        &format!("git add -A && git diff --cached --no-renames --name-only -z {}", shell_quote(reference)),
    )?;
    Ok(out.split('\0').filter(|p| !p.is_empty()).map(str::to_string).collect())
}

/// Every commit from the root to `HEAD`, oldest first, with full patches.
pub fn history_patch(sandbox: &mut dyn Sandbox) -> Result<String, SandboxError> {
    git(
        sandbox,
        &format!(
            "git log --reverse --no-color --binary -p --format='commit %H%nAuthor: %an <%ae>%nDate: %aI%n%n%B' HEAD > {DIFF_FILE}"
        ),
    )?;
    let bytes = sandbox.read_file(DIFF_FILE)?;
    sandbox.remove_path(DIFF_FILE)?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// Files, added and deleted lines of a git-style unified diff.
pub fn count_diff(patch: &str) -> DiffStats {
    let mut stats = DiffStats::default();
    let mut in_hunk = false;
    for line in patch.lines() {
        if line.starts_with("diff --git ") {
            stats.files_changed += 1;
            in_hunk = false;
        } else if line.starts_with("@@") {
            in_hunk = true;
        } else if in_hunk {
            match line.as_bytes().first() {
                Some(b'+') => stats.lines_added += 1,
                Some(b'-') => stats.lines_deleted += 1,
                Some(b' ') | Some(b'\\') => {}
                _ => in_hunk = false,
            }
        }
    }
    stats
}
