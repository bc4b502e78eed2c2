//! Instance bundles on disk and their mechanical re-check.
//!
//! ```text
//! instance.json        id, kind, problem statement, verification config
//! provenance.json      project, source task, snapshot, technical issue
//! workspace.tar        the base state handed to a solver
//! canonical_tests.tar  the canonical suite, for scoring
//! gold.patch           the fix (issue instances only)
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{load_check, run_scripts, AdaptError, ScriptOutcome};
use crate::pipeline::{read_json, write_file, write_json};
use crate::plan::TaskId;
use crate::sandbox::snapshot::sha256_hex;
use crate::sandbox::tarball::{read_tar, tar_from_files};
use crate::sandbox::{restore_tests, Provisioner, Sandbox, SandboxError, SandboxSpec, SnapshotEntry, TestSnapshot};
use crate::sandbox::vcs::shell_quote;
use crate::trajectory::TrajectoryKind;

pub const INSTANCE_FILE: &str = "instance.json";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const BUNDLE_WORKSPACE: &str = "workspace.tar";
pub const CANONICAL_TESTS: &str = "canonical_tests.tar";
pub const GOLD_PATCH: &str = "gold.patch";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    IssueResolution,
    IssueReproduction,
    LibraryGeneration,
}

impl InstanceKind {
    pub const ALL: [InstanceKind; 3] = [Self::IssueResolution, Self::IssueReproduction, Self::LibraryGeneration];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::IssueResolution => "issue_resolution",
            Self::IssueReproduction => "issue_reproduction",
            Self::LibraryGeneration => "library_generation",
        }
    }

    /// Kind of the trajectories that solve instances of this kind.
    pub fn trajectory_kind(self) -> TrajectoryKind {
        match self {
            Self::IssueResolution => TrajectoryKind::IssueResolution,
            Self::IssueReproduction => TrajectoryKind::IssueReproduction,
            Self::LibraryGeneration => TrajectoryKind::LibraryGeneration,
        }
    }

    pub fn solve_template(self) -> String {
        format!("solve/{}", self.as_str())
    }
}

impl fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a solution is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationRule {
    /// Every listed canonical script exits 0 after the solver's changes.
    CanonicalPass,
    /// The solver's test scripts fail on the base workspace and pass once
    /// the gold patch is applied.
    FailToPass,
    /// Solutions are collected without test-based verification.
    Unverified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionMode {
    Verified,
    DistillationOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    /// Task whose snapshot is the canonical suite.
    pub snapshot_task: TaskId,
    pub suite_digest: String,
    /// Canonical scripts, in task order.
    pub scripts: Vec<String>,
    pub rule: VerificationRule,
    pub collection_mode: CollectionMode,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceProvenance {
    pub project: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_task: Option<TaskId>,
    /// Injection instructions; kept out of the problem statement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technical_issue: Option<String>,
    /// The run that built the instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptedInstance {
    pub id: String,
    pub kind: InstanceKind,
    /// The only text a solver sees besides the workspace.
    pub problem_statement: String,
    pub verification: Verification,
    #[serde(skip)]
    pub provenance: InstanceProvenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub instance: AdaptedInstance,
    pub workspace: Vec<u8>,
    pub canonical_tests: TestSnapshot,
    pub gold_patch: Option<String>,
}

fn corrupt(dir: &Path, message: impl Into<String>) -> AdaptError {
    AdaptError::Bundle {
        path: dir.display().to_string(),
        message: message.into(),
    }
}

/// A snapshot rooted at `root` holding `files` (paths relative to the workdir).
pub fn snapshot_from_files(root: &str, files: Vec<(String, Vec<u8>)>) -> TestSnapshot {
    let entries: BTreeMap<String, SnapshotEntry> = files
        .into_iter()
        .map(|(path, content)| {
            let sha256 = sha256_hex(&content);
            (path, SnapshotEntry { content, sha256 })
        })
        .collect();
    TestSnapshot {
        root: root.to_string(),
        entries,
    }
}

impl Bundle {
    pub fn write(&self, dir: &Path) -> Result<(), AdaptError> {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| corrupt(dir, e.to_string()))?;
        }
        write_json(&dir.join(INSTANCE_FILE), &self.instance)?;
        write_json(&dir.join(PROVENANCE_FILE), &self.instance.provenance)?;
        write_file(&dir.join(BUNDLE_WORKSPACE), &self.workspace)?;
        let tests = self
            .canonical_tests
            .entries
            .iter()
            .map(|(p, e)| (p.clone(), e.content.clone()))
            .collect();
        write_file(&dir.join(CANONICAL_TESTS), &tar_from_files(tests)?)?;
        if let Some(patch) = &self.gold_patch {
            write_file(&dir.join(GOLD_PATCH), patch.as_bytes())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, AdaptError> {
        let mut instance: AdaptedInstance = read_json(&dir.join(INSTANCE_FILE))?;
        instance.provenance = read_json(&dir.join(PROVENANCE_FILE))?;
        let read = |name: &str| fs::read(dir.join(name)).map_err(|e| corrupt(dir, format!("{name}: {e}")));
        let workspace = read(BUNDLE_WORKSPACE)?;
        let canonical_tests = snapshot_from_files(crate::pipeline::TESTS_ROOT, read_tar(&read(CANONICAL_TESTS)?)?);
        if canonical_tests.suite_digest() != instance.verification.suite_digest {
            return Err(corrupt(dir, "canonical tests do not match the recorded suite digest"));
        }
        let gold_patch = match fs::read(dir.join(GOLD_PATCH)) {
            Ok(bytes) => Some(String::from_utf8(bytes).map_err(|_| corrupt(dir, "gold.patch is not UTF-8"))?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(corrupt(dir, format!("{GOLD_PATCH}: {e}"))),
        };
        Ok(Self {
            instance,
            workspace,
            canonical_tests,
            gold_patch,
        })
    }

    /// A fresh sandbox holding the bundle's workspace.
    pub fn provision(&self, provisioner: &dyn Provisioner, exec_timeout_secs: u64) -> Result<Box<dyn Sandbox>, AdaptError> {
        provision_tree(provisioner, read_tar(&self.workspace)?, exec_timeout_secs)
    }
}

/// Provision a sandbox whose build context is `files`; the tree must carry
/// its own `Dockerfile`.
pub fn provision_tree(
    provisioner: &dyn Provisioner,
    files: Vec<(String, Vec<u8>)>,
    exec_timeout_secs: u64,
) -> Result<Box<dyn Sandbox>, AdaptError> {
    if !files.iter().any(|(p, _)| p == "Dockerfile") {
        return Err(AdaptError::Precondition("workspace has no Dockerfile".into()));
    }
    let context = tempfile::tempdir().map_err(SandboxError::Io)?;
    for (path, bytes) in &files {
        write_file(&context.path().join(path), bytes)?;
    }
    let mut spec = SandboxSpec::new(context.path());
    spec.limits.default_timeout_secs = exec_timeout_secs;
    Ok(provisioner.provision(&spec)?)
}

/// Apply a git-style patch to the workspace (inside or outside a repository).
pub fn apply_patch(sandbox: &mut dyn Sandbox, patch: &str) -> Result<Result<(), String>, SandboxError> {
    const PATCH_FILE: &str = ".envforge-apply.patch";
    sandbox.write_file(PATCH_FILE, patch.as_bytes())?;
    let r = sandbox.exec(
        &format!("git apply --whitespace=nowarn {}", shell_quote(PATCH_FILE)),
        Duration::from_secs(120),
    )?;
    sandbox.remove_path(PATCH_FILE)?;
    Ok(if r.success() { Ok(()) } else { Err(r.combined().trim().to_string()) })
}

/// `tests/*.sh` scripts present in the workspace.
pub fn in_repo_scripts(sandbox: &mut dyn Sandbox) -> Result<Vec<String>, SandboxError> {
    match sandbox.list_files(crate::pipeline::TESTS_ROOT) {
        Ok(files) => Ok(files
            .into_iter()
            .filter(|f| f.ends_with(".sh") && f.matches('/').count() == 1)
            .collect()),
        Err(SandboxError::NotFound(_)) => Ok(Vec::new()),
        Err(e) => Err(e),
    }
}

fn describe(runs: &[ScriptOutcome], failing: bool) -> String {
    runs.iter()
        .filter(|r| r.passed() != failing)
        .map(|r| format!("{} (exit {})", r.script, r.exit_code))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BundleCheck {
    pub id: String,
    pub kind: InstanceKind,
    /// Empty when every invariant of the kind holds.
    pub violations: Vec<String>,
}

impl BundleCheck {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-check a bundle from scratch:
///
/// * issue resolution: the canonical suite fails on the workspace and
///   passes once the gold patch is applied;
/// * issue reproduction: the in-repo scripts pass, the canonical suite
///   fails, and passes with the gold patch;
/// * library generation: the workspace loads and every canonical script
///   fails.
pub fn check_bundle(dir: &Path, provisioner: &dyn Provisioner, timeout: Duration) -> Result<BundleCheck, AdaptError> {
    let bundle = Bundle::load(dir)?;
    let instance = &bundle.instance;
    let scripts = &instance.verification.scripts;
    let mut violations = Vec::new();
    if instance.problem_statement.trim().is_empty() {
        violations.push("problem statement is empty".to_string());
    }
    if let Some(issue) = &instance.provenance.technical_issue {
        if instance.problem_statement.contains(issue.as_str()) {
            violations.push("problem statement reveals the technical issue".into());
        }
    }
    let mut sb = bundle.provision(provisioner, timeout.as_secs())?;
    let result = (|| -> Result<(), AdaptError> {
        let sb = sb.as_mut();
        if let Err(e) = load_check(sb, timeout)? {
            violations.push(format!("workspace does not load: {e}"));
        }
        match instance.kind {
            InstanceKind::IssueReproduction => {
                let local = in_repo_scripts(sb)?;
                if local.is_empty() {
                    violations.push("no in-repo test scripts".into());
                }
                let runs = run_scripts(sb, &local, timeout)?;
                if runs.iter().any(|r| !r.passed()) {
                    violations.push(format!("in-repo scripts fail: {}", describe(&runs, true)));
                }
            }
            InstanceKind::LibraryGeneration => {
                sb.remove_path(crate::pipeline::TESTS_ROOT)?;
            }
            InstanceKind::IssueResolution => {}
        }
        restore_tests(sb, &bundle.canonical_tests)?;
        let runs = run_scripts(sb, scripts, timeout)?;
        match instance.kind {
            InstanceKind::LibraryGeneration => {
                if runs.iter().any(ScriptOutcome::passed) {
                    violations.push(format!("canonical scripts pass on the stubs: {}", describe(&runs, false)));
                }
            }
            _ => {
                if runs.iter().all(ScriptOutcome::passed) {
                    violations.push("canonical suite passes on the workspace".into());
                }
                let Some(patch) = &bundle.gold_patch else {
                    violations.push("gold patch is missing".into());
                    return Ok(());
                };
                if let Err(e) = apply_patch(sb, patch)? {
                    violations.push(format!("gold patch does not apply: {e}"));
                    return Ok(());
                }
                restore_tests(sb, &bundle.canonical_tests)?;
                let fixed = run_scripts(sb, scripts, timeout)?;
                if !fixed.iter().all(ScriptOutcome::passed) {
                    violations.push(format!("canonical scripts fail with the gold patch: {}", describe(&fixed, true)));
                }
            }
        }
        Ok(())
    })();
    let _ = sb.destroy();
    result?;
    Ok(BundleCheck {
        id: instance.id.clone(),
        kind: instance.kind,
        violations,
    })
}
