//! Per-project pipeline: plan, scaffold, then per task a checklist, agent
//! written tests, a snapshot of the canonical suite, an implementation run,
//! and test-swap verification against that snapshot.
//!
//! A project lives in one directory under the output root:
//!
//! ```text
//! proposal.json  tasks.md  state.json  events.jsonl
//! checklists/<X.Y.Z>.md   snapshots/<X.Y.Z>/   context/Dockerfile
//! sandbox.tar    resume point: the workspace with its git metadata
//! rewards.json  workspace.tar  history.patch  artifact.json   (at finish)
//! ```
//!
//! Every stage persists `state.json` and `sandbox.tar`, so stages can run in
//! separate processes. Trajectories go to the shared [`TrajectoryStore`].

pub mod events;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_agent, AgentError, AgentRun, AgentRunConfig, OutcomeStatus};
use crate::clock::Clock;
use crate::gateway::Gateway;
use crate::plan::{
    parse_checklist, parse_plan, render_task, topological_order, validate_plan, GenerateError, PlanGenerator,
    TaskId, TaskPlan, TestChecklist,
};
use crate::proposal::ProjectProposal;
use crate::sandbox::snapshot::sha256_hex;
use crate::sandbox::tarball::{self, ExportOptions};
use crate::sandbox::vcs::{self, tag_ref, DiffStats};
use crate::sandbox::{
    digest_set, restore_tests, snapshot_tests, validate_dockerfile, Provisioner, Sandbox, SandboxError, SandboxSpec,
    TestSnapshot,
};
use crate::templates::{TemplateError, TemplateSet};
use crate::trajectory::store::StoreError;
use crate::trajectory::{Provenance, Trajectory, TrajectoryKind, TrajectoryStore};

pub use events::{read_events, Event, EventLog, EventRecord};

pub const PROPOSAL_FILE: &str = "proposal.json";
pub const PLAN_FILE: &str = "tasks.md";
pub const STATE_FILE: &str = "state.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const CHECKLIST_DIR: &str = "checklists";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const CONTEXT_DIR: &str = "context";
pub const RESUME_TAR: &str = "sandbox.tar";
pub const REWARDS_FILE: &str = "rewards.json";
pub const WORKSPACE_TAR: &str = "workspace.tar";
pub const HISTORY_FILE: &str = "history.patch";
pub const ARTIFACT_FILE: &str = "artifact.json";
pub const TESTS_ROOT: &str = "tests";
pub const STATE_SCHEMA_VERSION: u32 = 1;

/// `tests/test_1_2_3.py`
pub fn test_file(task: TaskId) -> String {
    format!("{TESTS_ROOT}/test_{}.py", task.underscored())
}

/// `tests/1.2.3.sh`
pub fn test_script(task: TaskId) -> String {
    format!("{TESTS_ROOT}/{task}.sh")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum StageState {
    Proposed,
    Planned,
    Scaffolded,
    TestsGenerated { upto: TaskId },
    Implemented { upto: TaskId },
    Completed,
    Failed { stage: String, reason: String },
}

impl StageState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Completed | Self::Failed { .. })
    }

    /// Whether `self → next` follows the pipeline order; `order` is the task
    /// order of the plan.
    pub fn allows(&self, next: &StageState, order: &[TaskId]) -> bool {
        let pos = |t: &TaskId| order.iter().position(|o| o == t);
        match (self, next) {
            (from, Self::Failed { .. }) => !from.is_terminal(),
            (Self::Proposed, Self::Planned) | (Self::Planned, Self::Scaffolded) => true,
            (Self::Scaffolded, Self::TestsGenerated { upto }) => pos(upto).is_some(),
            (Self::Implemented { upto: done }, Self::TestsGenerated { upto }) => {
                matches!((pos(done), pos(upto)), (Some(a), Some(b)) if a < b)
            }
            (Self::TestsGenerated { upto: a }, Self::Implemented { upto: b }) => a == b,
            (Self::Scaffolded | Self::Implemented { .. }, Self::Completed) => true,
            _ => false,
        }
    }
}

/// Whether the implementation agent may see the generated tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestVisibility {
    /// Tests are removed from the workspace for the run.
    Never,
    /// Tests are present; the prompt asks for an own attempt first.
    #[default]
    AfterAttempt,
    Always,
}

impl TestVisibility {
    pub fn template(self) -> &'static str {
        match self {
            Self::Never => "implement/never",
            Self::AfterAttempt => "implement/after_attempt",
            Self::Always => "implement/always",
        }
    }
}

/// What happens to the rest of the project when a task fails for good.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    Halt,
    /// Skip tasks that depend (transitively) on the failed one; continue
    /// with the others.
    SkipDependents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub planner_model: String,
    pub agent_model: String,
    pub max_steps: u32,
    pub exec_timeout_secs: u64,
    pub test_timeout_secs: u64,
    pub max_output_tokens: u32,
    pub plan_max_output_tokens: u32,
    pub max_continuations: u32,
    /// Extra test-generation attempts after a rejected one.
    pub testgen_retries: u32,
    pub visibility: TestVisibility,
    pub on_task_failure: FailurePolicy,
    pub context_budget_tokens: Option<u64>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            planner_model: "planner".into(),
            agent_model: "agent".into(),
            max_steps: 100,
            exec_timeout_secs: 120,
            test_timeout_secs: 600,
            max_output_tokens: 8192,
            plan_max_output_tokens: 16384,
            max_continuations: 3,
            testgen_retries: 1,
            visibility: TestVisibility::default(),
            on_task_failure: FailurePolicy::default(),
            context_budget_tokens: Some(200_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRun {
    pub task_id: TaskId,
    pub exit_code: i32,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardReport {
    pub task_id: TaskId,
    pub scripts_run: Vec<ScriptRun>,
    pub passed: bool,
    pub reward: u8,
    /// Digest of the snapshot the suite was restored from.
    pub suite_digest: String,
    /// Digest of `tests/` as observed right before the scripts ran.
    pub observed_digest: String,
}

/// Outcome of running a task's script against unimplemented code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldCheck {
    pub task_id: TaskId,
    pub exit_code: i32,
    /// The script failed, so the task is not already solved.
    pub rejects_stubs: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    TestsReady,
    Passed,
    Failed { stage: String, reason: String },
    Skipped { because: TaskId },
}

impl TaskStatus {
    pub fn is_settled(&self) -> bool {
        matches!(self, Self::Passed | Self::Failed { .. } | Self::Skipped { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: TaskId,
    pub has_tests: bool,
    pub status: TaskStatus,
    pub test_gen_attempts: u32,
    pub trajectories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectState {
    pub schema_version: u32,
    pub project: String,
    pub state: StageState,
    /// In execution order.
    pub tasks: Vec<TaskRecord>,
    pub trajectories: Vec<String>,
}

impl ProjectState {
    pub fn task(&self, id: TaskId) -> Option<&TaskRecord> {
        self.tasks.iter().find(|t| t.id == id)
    }

    fn task_mut(&mut self, id: TaskId) -> &mut TaskRecord {
        self.tasks.iter_mut().find(|t| t.id == id).expect("task is part of the plan")
    }

    pub fn order(&self) -> Vec<TaskId> {
        self.tasks.iter().map(|t| t.id).collect()
    }

    /// The first task that is not settled yet.
    pub fn next_task(&self) -> Option<TaskId> {
        self.tasks.iter().find(|t| !t.status.is_settled()).map(|t| t.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectArtifact {
    pub project: String,
    pub state: StageState,
    pub proposal: ProjectProposal,
    pub plan_file: String,
    pub checklists: Vec<String>,
    /// Task → digest of its canonical test snapshot.
    pub snapshots: BTreeMap<TaskId, String>,
    pub rewards: Vec<RewardReport>,
    pub tasks: Vec<TaskRecord>,
    pub trajectories: Vec<String>,
    pub workspace_sha256: String,
    pub history_sha256: String,
}

impl ProjectArtifact {
    pub fn load(project_dir: &Path) -> Result<Self, PipelineError> {
        read_json(&project_dir.join(ARTIFACT_FILE))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage} failed: {reason}")]
    Stage { stage: String, reason: String },
    #[error("cannot move from {from:?} to {to:?}")]
    Transition { from: StageState, to: StageState },
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("test script {0} is missing")]
    ScriptMissing(String),
    #[error("verification aborted, no reward computed: {0}")]
    VerificationAborted(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("values serialize");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Corrupt {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Directory name for a project: the repository slug with anything outside
/// `[A-Za-z0-9._-]` replaced.
pub fn project_id(proposal: &ProjectProposal) -> String {
    let id: String = proposal
        .repo_name
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '-' })
        .collect();
    let id = id.trim_matches('.').to_string();
    if id.is_empty() {
        "project".into()
    } else {
        id
    }
}

fn suite_digest_of(digests: &BTreeMap<String, String>) -> String {
    let entries = digests
        .iter()
        .map(|(p, d)| {
            (
                p.clone(),
                crate::sandbox::SnapshotEntry {
                    content: Vec::new(),
                    sha256: d.clone(),
                },
            )
        })
        .collect();
    TestSnapshot {
        root: String::new(),
        entries,
    }
    .suite_digest()
}

fn run_script(sandbox: &mut dyn Sandbox, task: TaskId, timeout: Duration) -> Result<ScriptRun, PipelineError> {
    let r = sandbox.exec(&format!("bash {}", test_script(task)), timeout)?;
    Ok(ScriptRun {
        task_id: task,
        exit_code: r.exit_code,
        timed_out: r.timed_out,
    })
}

/// Run the task's script against the current (unimplemented) code. The
/// script must exist; a passing script means the tests cannot tell stubs
/// from an implementation.
pub fn verify_scaffold(sandbox: &mut dyn Sandbox, task: TaskId, timeout: Duration) -> Result<ScaffoldCheck, PipelineError> {
    let script = test_script(task);
    match sandbox.read_file(&script) {
        Ok(_) => {}
        Err(SandboxError::NotFound(_)) => return Err(PipelineError::ScriptMissing(script)),
        Err(e) => return Err(e.into()),
    }
    let run = run_script(sandbox, task, timeout)?;
    Ok(ScaffoldCheck {
        task_id: task,
        exit_code: run.exit_code,
        rejects_stubs: run.exit_code != 0 || run.timed_out,
    })
}

/// Test-swap verification: restore the canonical suite, confirm it matches
/// the snapshot, run the script of every task in `ordered_prior` and then of
/// `task_id` (if the snapshot has one), and restore again. A prior task whose
/// script is missing from the snapshot counts as exit code 127.
pub fn verify_task(
    sandbox: &mut dyn Sandbox,
    snapshot: &TestSnapshot,
    task_id: TaskId,
    ordered_prior: &[TaskId],
    timeout: Duration,
) -> Result<RewardReport, PipelineError> {
    let abort = |e: SandboxError| PipelineError::VerificationAborted(e.to_string());
    if !snapshot.verify() {
        return Err(PipelineError::VerificationAborted("snapshot content does not match its digests".into()));
    }
    restore_tests(sandbox, snapshot).map_err(abort)?;
    let observed = digest_set(sandbox, &snapshot.root).map_err(abort)?;
    if observed != snapshot.digests() {
        return Err(PipelineError::VerificationAborted("tests differ from the snapshot after restore".into()));
    }
    let mut scripts_run = Vec::new();
    for &id in ordered_prior {
        if snapshot.entries.contains_key(&test_script(id)) {
            scripts_run.push(run_script(sandbox, id, timeout)?);
        } else {
            scripts_run.push(ScriptRun {
                task_id: id,
                exit_code: 127,
                timed_out: false,
            });
        }
    }
    if snapshot.entries.contains_key(&test_script(task_id)) {
        scripts_run.push(run_script(sandbox, task_id, timeout)?);
    }
    restore_tests(sandbox, snapshot).map_err(abort)?;
    let passed = scripts_run.iter().all(|r| r.exit_code == 0 && !r.timed_out);
    Ok(RewardReport {
        task_id,
        scripts_run,
        passed,
        reward: u8::from(passed),
        suite_digest: snapshot.suite_digest(),
        observed_digest: suite_digest_of(&observed),
    })
}

/// Shared services for project sessions.
pub struct Orchestrator<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub provisioner: &'a dyn Provisioner,
    pub store: &'a TrajectoryStore,
    pub clock: &'a dyn Clock,
    pub settings: PipelineSettings,
    /// Parent of the project directories.
    pub projects_dir: PathBuf,
}

impl<'a> Orchestrator<'a> {
    pub fn project_dir(&self, project: &str) -> PathBuf {
        self.projects_dir.join(project)
    }

    /// Start a project from scratch; an existing directory of the same
    /// project is replaced.
    pub fn start(&self, proposal: &ProjectProposal) -> Result<ProjectSession<'_, 'a>, PipelineError> {
        let project = project_id(proposal);
        let dir = self.project_dir(&project);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_json(&dir.join(PROPOSAL_FILE), proposal)?;
        let state = ProjectState {
            schema_version: STATE_SCHEMA_VERSION,
            project: project.clone(),
            state: StageState::Proposed,
            tasks: Vec::new(),
            trajectories: Vec::new(),
        };
        write_json(&dir.join(STATE_FILE), &state)?;
        Ok(ProjectSession {
            events: EventLog::open(dir.join(EVENTS_FILE), &project)?,
            orch: self,
            proposal: proposal.clone(),
            dir,
            state,
            sandbox: None,
        })
    }

    /// Resume a project from its directory.
    pub fn open(&self, project: &str) -> Result<ProjectSession<'_, 'a>, PipelineError> {
        let dir = self.project_dir(project);
        let state: ProjectState = read_json(&dir.join(STATE_FILE))?;
        let proposal = read_json(&dir.join(PROPOSAL_FILE))?;
        Ok(ProjectSession {
            events: EventLog::open(dir.join(EVENTS_FILE), &state.project)?,
            orch: self,
            proposal,
            dir,
            state,
            sandbox: None,
        })
    }

    /// Plan, scaffold and work through every task; returns the artifact
    /// (also for failed projects, whose state says where they stopped).
    pub fn run_pipeline(&self, proposal: &ProjectProposal) -> Result<ProjectArtifact, PipelineError> {
        let mut session = self.start(proposal)?;
        session.run_to_end()
    }
}

/// One project being worked on. Owns the sandbox handle; dropping the
/// session destroys it (the resume point stays on disk).
pub struct ProjectSession<'o, 'a> {
    orch: &'o Orchestrator<'a>,
    proposal: ProjectProposal,
    dir: PathBuf,
    state: ProjectState,
    events: EventLog,
    sandbox: Option<Box<dyn Sandbox>>,
}

impl Drop for ProjectSession<'_, '_> {
    fn drop(&mut self) {
        if let Some(mut sb) = self.sandbox.take() {
            let _ = sb.destroy();
        }
    }
}

/// Paths that must never be packed into the resume archive (the git index
/// holds file timestamps and is rebuilt on resume).
fn resumable(path: &str) -> bool {
    path != ".git/index"
}

impl<'o, 'a> ProjectSession<'o, 'a> {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn state(&self) -> &ProjectState {
        &self.state
    }

    pub fn proposal(&self) -> &ProjectProposal {
        &self.proposal
    }

    pub fn orchestrator(&self) -> &'o Orchestrator<'a> {
        self.orch
    }

    pub fn plan_text(&self) -> Result<String, PipelineError> {
        let path = self.dir.join(PLAN_FILE);
        fs::read_to_string(&path).map_err(io_err(&path))
    }

    pub fn plan(&self) -> Result<TaskPlan, PipelineError> {
        parse_plan(&self.plan_text()?).map_err(|e| PipelineError::Corrupt {
            path: self.dir.join(PLAN_FILE).display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn sandbox_spec(&self) -> SandboxSpec {
        let mut spec = SandboxSpec::new(self.dir.join(CONTEXT_DIR));
        spec.limits.default_timeout_secs = self.orch.settings.exec_timeout_secs;
        spec
    }

    /// The project's sandbox, provisioned (and restored from the resume
    /// point) on first use.
    pub fn sandbox(&mut self) -> Result<&mut dyn Sandbox, PipelineError> {
        if self.sandbox.is_none() {
            let spec = self.sandbox_spec();
            let mut sb = self.orch.provisioner.provision(&spec)?;
            let resume = self.dir.join(RESUME_TAR);
            if resume.exists() {
                let bytes = fs::read(&resume).map_err(io_err(&resume))?;
                for entry in sb.list_files("")? {
                    sb.remove_path(&entry)?;
                }
                tarball::import_tar(sb.as_mut(), &bytes)?;
                if vcs::has_ref(sb.as_mut(), "HEAD")? {
                    let r = sb.exec("git reset -q", Duration::from_secs(120))?;
                    if !r.success() {
                        return Err(SandboxError::Vcs(format!("cannot rebuild git index: {}", r.combined())).into());
                    }
                }
            }
            self.sandbox = Some(sb);
        }
        Ok(self.sandbox.as_deref_mut().expect("sandbox just provisioned"))
    }

    /// Fresh handle holding a full copy of the workspace.
    pub fn fork_sandbox(&mut self) -> Result<Box<dyn Sandbox>, PipelineError> {
        let spec = self.sandbox_spec();
        let provisioner = self.orch.provisioner;
        let sb = self.sandbox()?;
        Ok(crate::sandbox::fork(provisioner, &spec, sb)?)
    }

    /// RFC 3339 time of the next event, used for commit dates.
    pub fn now(&self) -> String {
        self.orch.clock.rfc3339(self.events.next_seq())
    }

    pub fn log(&mut self, event: Event) -> Result<u64, PipelineError> {
        self.events.append(self.orch.clock, event)
    }

    fn commit(&mut self, label: &str, message: &str) -> Result<(), PipelineError> {
        let date = self.now();
        vcs::commit_all(self.sandbox()?, label, message, &date)?;
        Ok(())
    }

    fn transition(&mut self, to: StageState) -> Result<(), PipelineError> {
        let from = self.state.state.clone();
        if !from.allows(&to, &self.state.order()) {
            return Err(PipelineError::Transition { from, to });
        }
        self.state.state = to.clone();
        self.log(Event::StateChanged { from, to })?;
        Ok(())
    }

    /// Write `state.json` and, if a sandbox is live, the resume archive.
    pub fn persist(&mut self) -> Result<(), PipelineError> {
        write_json(&self.dir.join(STATE_FILE), &self.state)?;
        if let Some(sb) = self.sandbox.as_deref_mut() {
            let mut files = Vec::new();
            for path in sb.list_files("")? {
                if resumable(&path) {
                    let content = sb.read_file(&path)?;
                    files.push((path, content));
                }
            }
            write_file(&self.dir.join(RESUME_TAR), &tarball::tar_from_files(files)?)?;
        }
        Ok(())
    }

    /// Move to `failed(stage)`, persist, and report the failure.
    fn fail(&mut self, stage: &str, reason: String) -> Result<PipelineError, PipelineError> {
        if !self.state.state.is_terminal() {
            self.transition(StageState::Failed {
                stage: stage.into(),
                reason: reason.clone(),
            })?;
        }
        self.persist()?;
        Ok(PipelineError::Stage {
            stage: stage.into(),
            reason,
        })
    }

    fn expect(&self, ok: bool, what: &str) -> Result<(), PipelineError> {
        if ok {
            Ok(())
        } else {
            Err(PipelineError::Precondition(format!("{what} (state {:?})", self.state.state)))
        }
    }

    pub fn agent_config(&self) -> Result<AgentRunConfig, PipelineError> {
        let s = &self.orch.settings;
        let system = self.orch.templates.render("agent/system", &[("workdir", crate::sandbox::DEFAULT_WORKDIR)])?;
        let mut config = AgentRunConfig::new(&s.agent_model, system);
        config.max_steps = s.max_steps;
        config.exec_timeout_secs = s.exec_timeout_secs;
        config.max_output_tokens = s.max_output_tokens;
        config.context_budget_tokens = s.context_budget_tokens;
        Ok(config)
    }

    /// Run an agent in the project sandbox; the diff is taken against the
    /// baseline tag `label`.
    pub fn run_agent_in(&mut self, prompt: &str, label: &str) -> Result<(AgentRun, DiffStats), PipelineError> {
        let config = self.agent_config()?;
        let gateway = self.orch.gateway;
        let sb = self.sandbox()?;
        let run = run_agent(gateway, sb, prompt, &config)?;
        let diff = vcs::workspace_diff(sb, &tag_ref(label))?.stats;
        Ok((run, diff))
    }

    /// Persist a trajectory with a deterministic id
    /// `<project>.<kind>.<task|repo>.<n>` and log it.
    pub fn record(
        &mut self,
        kind: TrajectoryKind,
        task: Option<TaskId>,
        instance: Option<String>,
        run: AgentRun,
        diff: DiffStats,
        reward: Option<u8>,
    ) -> Result<String, PipelineError> {
        let scope = task.map_or_else(|| "repo".to_string(), |t| t.to_string());
        let prefix = format!("{}.{}.{}.", self.state.project, kind, scope);
        let n = self.state.trajectories.iter().filter(|id| id.starts_with(&prefix)).count() + 1;
        let id = format!("{prefix}{n}");
        let trajectory = Trajectory::from_run(
            &id,
            kind,
            &self.orch.settings.agent_model,
            run,
            diff,
            reward,
            Provenance {
                project: self.state.project.clone(),
                task: task.map(|t| t.to_string()),
                instance,
            },
        );
        self.orch.store.append(&trajectory)?;
        self.state.trajectories.push(id.clone());
        if let Some(t) = task {
            if self.state.task(t).is_some() {
                self.state.task_mut(t).trajectories.push(id.clone());
            }
        }
        self.log(Event::TrajectoryRecorded {
            id: id.clone(),
            kind,
            task,
            reward,
        })?;
        Ok(id)
    }

    /// Generate, parse, validate and store the task plan.
    pub fn plan_project(&mut self) -> Result<(), PipelineError> {
        self.expect(self.state.state == StageState::Proposed, "planning needs a proposed project")?;
        let s = &self.orch.settings;
        let generator = PlanGenerator {
            gateway: self.orch.gateway,
            templates: self.orch.templates,
            model: s.planner_model.clone(),
            max_continuations: s.max_continuations,
            max_output_tokens: s.plan_max_output_tokens,
        };
        let text = match generator.generate_plan(&self.proposal) {
            Ok((text, _)) => text,
            Err(e) => return Err(self.fail("plan", e.to_string())?),
        };
        let plan = match parse_plan(&text) {
            Ok(p) => p,
            Err(e) => return Err(self.fail("plan", e.to_string())?),
        };
        let report = validate_plan(&plan);
        if !report.passed() {
            let reasons: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
            return Err(self.fail("plan", reasons.join("; "))?);
        }
        let order = match topological_order(&plan) {
            Ok(o) => o,
            Err(e) => return Err(self.fail("plan", e.to_string())?),
        };
        write_file(&self.dir.join(PLAN_FILE), text.as_bytes())?;
        self.state.tasks = order
            .iter()
            .map(|&id| TaskRecord {
                id,
                has_tests: plan.task(id).is_some_and(|t| t.has_tests()),
                status: TaskStatus::Pending,
                test_gen_attempts: 0,
                trajectories: Vec::new(),
                reward: None,
            })
            .collect();
        self.transition(StageState::Planned)?;
        self.persist()
    }

    /// Problems with the scaffolded workspace, empty when it is usable.
    fn scaffold_problems(&mut self) -> Result<Vec<String>, PipelineError> {
        let timeout = Duration::from_secs(self.orch.settings.exec_timeout_secs);
        let sb = self.sandbox()?;
        let mut problems = Vec::new();
        if sb.read_file(PLAN_FILE).is_err() {
            problems.push(format!("{PLAN_FILE} is missing"));
        }
        match sb.read_file("Dockerfile") {
            Ok(bytes) => {
                if let Err(e) = validate_dockerfile(&String::from_utf8_lossy(&bytes)) {
                    problems.push(format!("Dockerfile: {e}"));
                }
            }
            Err(_) => problems.push("Dockerfile is missing".into()),
        }
        let sources: Vec<String> = match sb.list_files("src") {
            Ok(files) => files.into_iter().filter(|f| f.ends_with(".py")).collect(),
            Err(SandboxError::NotFound(_)) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        if sources.is_empty() {
            problems.push("no source files under src/".into());
        } else {
            let check = sb.exec(
                "python3 -c 'import ast, pathlib, sys\nfor p in sorted(pathlib.Path(\"src\").rglob(\"*.py\")):\n    ast.parse(p.read_text(), str(p))'",
                timeout,
            )?;
            if !check.success() {
                problems.push(format!("source files do not parse: {}", check.combined().trim()));
            }
        }
        Ok(problems)
    }

    /// Build the project skeleton with an agent.
    pub fn scaffold(&mut self) -> Result<String, PipelineError> {
        self.expect(self.state.state == StageState::Planned, "scaffolding needs a planned project")?;
        let plan_text = self.plan_text()?;
        let context = self.dir.join(CONTEXT_DIR);
        write_file(&context.join("Dockerfile"), self.orch.templates.raw("docker/python")?.as_bytes())?;
        write_file(&context.join(PLAN_FILE), plan_text.as_bytes())?;
        if let Some(mut old) = self.sandbox.take() {
            let _ = old.destroy();
        }
        let _ = fs::remove_file(self.dir.join(RESUME_TAR));
        self.commit("base", "Add project plan")?;
        let prompt = self.orch.templates.render(
            "setup/task",
            &[
                ("project_description", &self.proposal.description),
                ("constraints", &self.proposal.constraints),
            ],
        )?;
        let (run, diff) = self.run_agent_in(&prompt, "base")?;
        let status = run.outcome.status;
        let error = run.outcome.error.clone();
        let id = self.record(TrajectoryKind::Setup, None, None, run, diff, None)?;
        if status != OutcomeStatus::Finished {
            let reason = format!("agent stopped with {status:?}{}", error.map(|e| format!(": {e}")).unwrap_or_default());
            return Err(self.fail("scaffold", reason)?);
        }
        let problems = self.scaffold_problems()?;
        if !problems.is_empty() {
            return Err(self.fail("scaffold", problems.join("; "))?);
        }
        self.commit("scaffold", "Scaffold repository")?;
        self.transition(StageState::Scaffolded)?;
        self.persist()?;
        Ok(id)
    }

    pub fn snapshot_path(&self, task: TaskId) -> PathBuf {
        self.dir.join(SNAPSHOT_DIR).join(task.to_string())
    }

    pub fn load_snapshot(&self, task: TaskId) -> Result<TestSnapshot, PipelineError> {
        Ok(TestSnapshot::load(&self.snapshot_path(task))?)
    }

    fn checklist_path(&self, task: TaskId) -> PathBuf {
        self.dir.join(CHECKLIST_DIR).join(format!("{task}.md"))
    }

    pub fn load_checklist(&self, task: TaskId) -> Result<Option<TestChecklist>, PipelineError> {
        let path = self.checklist_path(task);
        match fs::read_to_string(&path) {
            Ok(text) => parse_checklist(task, &text).map(Some).map_err(|e| PipelineError::Corrupt {
                path: path.display().to_string(),
                message: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Prior tasks whose scripts guard against regressions: earlier in the
    /// order, with tests, and passed.
    pub fn guarded_before(&self, task: TaskId) -> Vec<TaskId> {
        self.state
            .tasks
            .iter()
            .take_while(|t| t.id != task)
            .filter(|t| t.has_tests && t.status == TaskStatus::Passed)
            .map(|t| t.id)
            .collect()
    }

    /// Latest canonical snapshot before `task`, if any.
    fn previous_snapshot(&self, task: TaskId) -> Result<Option<TestSnapshot>, PipelineError> {
        let prior: Vec<TaskId> = self.state.tasks.iter().take_while(|t| t.id != task).map(|t| t.id).collect();
        for id in prior.into_iter().rev() {
            if self.snapshot_path(id).exists() {
                return Ok(Some(self.load_snapshot(id)?));
            }
        }
        Ok(None)
    }

    /// A failed dependency of `task`, if any (skipped dependencies count).
    fn blocked_by(&self, plan: &TaskPlan, task: TaskId) -> Option<TaskId> {
        let spec = plan.task(task)?;
        spec.dependencies.iter().copied().find(|dep| {
            matches!(
                self.state.task(*dep).map(|t| &t.status),
                Some(TaskStatus::Failed { .. } | TaskStatus::Skipped { .. })
            )
        })
    }

    /// Mark a task failed and apply the failure policy.
    fn task_failed(&mut self, task: TaskId, stage: &str, reason: String) -> Result<TaskStatus, PipelineError> {
        let status = TaskStatus::Failed {
            stage: stage.into(),
            reason: reason.clone(),
        };
        self.state.task_mut(task).status = status.clone();
        self.log(Event::TaskFailed {
            task,
            stage: stage.into(),
            reason: reason.clone(),
        })?;
        if self.orch.settings.on_task_failure == FailurePolicy::Halt {
            self.fail(stage, format!("task {task}: {reason}"))?;
        } else {
            self.persist()?;
        }
        Ok(status)
    }

    fn generate_checklist(&mut self, plan: &TaskPlan, task: TaskId) -> Result<Result<(), String>, PipelineError> {
        if self.load_checklist(task)?.is_some() {
            return Ok(Ok(()));
        }
        let mut previous = Vec::new();
        for t in self.state.tasks.iter().take_while(|t| t.id != task) {
            if let Some(c) = self.load_checklist(t.id)? {
                previous.push(c);
            }
        }
        let s = &self.orch.settings;
        let generator = PlanGenerator {
            gateway: self.orch.gateway,
            templates: self.orch.templates,
            model: s.planner_model.clone(),
            max_continuations: s.max_continuations,
            max_output_tokens: s.plan_max_output_tokens,
        };
        let plan_text = self.plan_text()?;
        match generator.generate_checklist(plan, &plan_text, task, &previous) {
            Ok(checklist) => {
                write_file(&self.checklist_path(task), checklist.source.as_bytes())?;
                self.log(Event::ChecklistWritten {
                    task,
                    cases: checklist.cases.len(),
                })?;
                Ok(Ok(()))
            }
            Err(GenerateError::Template(e)) => Err(e.into()),
            Err(e) => Ok(Err(e.to_string())),
        }
    }

    /// Postconditions of a test-generation run: `Err((stage, reason))` when
    /// the attempt must be rejected.
    fn check_generated_tests(&mut self, task: TaskId, baseline: &str) -> Result<Result<(), (String, String)>, PipelineError> {
        let reject = |stage: &str, reason: String| Ok(Err((stage.to_string(), reason)));
        let timeout = Duration::from_secs(self.orch.settings.test_timeout_secs);
        let file = test_file(task);
        let script = test_script(task);
        let previous = self.previous_snapshot(task)?;
        let guarded = self.guarded_before(task);
        let sb = self.sandbox()?;
        for path in [&file, &script] {
            if sb.read_file(path).is_err() {
                return reject("test-gen", format!("{path} was not written"));
            }
        }
        let script_text = String::from_utf8_lossy(&sb.read_file(&script)?).into_owned();
        let file_name = file.rsplit('/').next().unwrap_or(&file);
        if !script_text.contains(file_name) || !script_text.contains("pytest") {
            return reject("test-gen", format!("{script} does not run {file_name} with pytest"));
        }
        let outside: Vec<String> = vcs::changed_paths(sb, &tag_ref(baseline))?
            .into_iter()
            .filter(|p| !(p.starts_with("tests/")))
            .collect();
        if !outside.is_empty() {
            return reject("test-gen", format!("files outside tests/ were changed: {}", outside.join(", ")));
        }
        if let Some(prev) = previous {
            let now = digest_set(sb, TESTS_ROOT)?;
            if let Some(path) = prev.digests().iter().find(|(p, d)| now.get(*p) != Some(*d)).map(|(p, _)| p.clone()) {
                return reject("test-gen-conflict", format!("canonical test file {path} was changed"));
            }
        }
        for id in guarded {
            let run = run_script(sb, id, timeout)?;
            if run.exit_code != 0 || run.timed_out {
                return reject("test-gen-conflict", format!("tests of task {id} no longer pass (exit {})", run.exit_code));
            }
        }
        let check = verify_scaffold(sb, task, timeout)?;
        if !check.rejects_stubs {
            return reject("tests-too-weak", format!("{script} passes against the unimplemented code"));
        }
        Ok(Ok(()))
    }

    /// Checklist, test-generation agent (with retries), postcondition checks
    /// and the canonical snapshot for `task`.
    pub fn generate_tests(&mut self, task: TaskId) -> Result<TaskStatus, PipelineError> {
        let ready = match &self.state.state {
            StageState::Scaffolded | StageState::Implemented { .. } => true,
            _ => false,
        } && self.state.next_task() == Some(task)
            && self.state.task(task).map(|t| &t.status) == Some(&TaskStatus::Pending);
        self.expect(ready, &format!("tests for {task} need every earlier task settled"))?;
        let plan = self.plan()?;
        if let Some(dep) = self.blocked_by(&plan, task) {
            return self.skip(task, dep);
        }
        let has_tests = self.state.task(task).is_some_and(|t| t.has_tests);
        if has_tests {
            if let Err(reason) = self.generate_checklist(&plan, task)? {
                return self.task_failed(task, "checklist", reason);
            }
            let baseline = format!("testgen-{task}");
            self.commit(&baseline, &format!("Before tests for task {task}"))?;
            let checklist = self.load_checklist(task)?.expect("checklist just written");
            let spec = plan.task(task).expect("task in plan");
            let unit_test_prompt = format!("{}\n{}", render_task(spec).trim_end(), checklist.source.trim_end());
            let prompt = self.orch.templates.render(
                "testgen/task",
                &[
                    ("project_task", &self.proposal.description),
                    ("task_number", &task.to_string()),
                    ("unit_test_prompt", &unit_test_prompt),
                    ("test_file", &test_file(task)),
                    ("test_script", &test_script(task)),
                ],
            )?;
            let attempts = 1 + self.orch.settings.testgen_retries;
            let mut last = None;
            for attempt in 1..=attempts {
                if attempt > 1 {
                    vcs::reset_hard(self.sandbox()?, &tag_ref(&baseline))?;
                }
                self.state.task_mut(task).test_gen_attempts = attempt;
                let (run, diff) = self.run_agent_in(&prompt, &baseline)?;
                let verdict = self.check_generated_tests(task, &baseline)?;
                self.record(TrajectoryKind::TestGen, Some(task), None, run, diff, Some(u8::from(verdict.is_ok())))?;
                match verdict {
                    Ok(()) => {
                        last = None;
                        break;
                    }
                    Err((stage, reason)) => {
                        self.log(Event::TestsRejected {
                            task,
                            attempt,
                            stage: stage.clone(),
                            reason: reason.clone(),
                        })?;
                        last = Some((stage, reason));
                    }
                }
            }
            if let Some((stage, reason)) = last {
                vcs::reset_hard(self.sandbox()?, &tag_ref(&baseline))?;
                return self.task_failed(task, &stage, reason);
            }
            self.commit(&format!("tests-{task}"), &format!("Tests for task {task}"))?;
        }
        let snapshot = match snapshot_tests(self.sandbox()?, TESTS_ROOT) {
            Ok(s) => s,
            Err(SandboxError::NotFound(_)) => TestSnapshot {
                root: TESTS_ROOT.into(),
                entries: BTreeMap::new(),
            },
            Err(e) => return Err(e.into()),
        };
        snapshot.save(&self.snapshot_path(task))?;
        self.log(Event::TestsSnapshotted {
            task,
            files: snapshot.entries.len(),
            suite_digest: snapshot.suite_digest(),
        })?;
        self.state.task_mut(task).status = TaskStatus::TestsReady;
        self.transition(StageState::TestsGenerated { upto: task })?;
        self.persist()?;
        Ok(TaskStatus::TestsReady)
    }

    fn skip(&mut self, task: TaskId, because: TaskId) -> Result<TaskStatus, PipelineError> {
        let status = TaskStatus::Skipped { because };
        self.state.task_mut(task).status = status.clone();
        self.log(Event::TaskSkipped { task, because })?;
        self.persist()?;
        Ok(status)
    }

    /// Implementation agent for `task`, then test-swap verification.
    pub fn implement(&mut self, task: TaskId) -> Result<TaskStatus, PipelineError> {
        self.expect(
            self.state.state == StageState::TestsGenerated { upto: task },
            &format!("implementing {task} needs its tests"),
        )?;
        let plan = self.plan()?;
        let snapshot = self.load_snapshot(task)?;
        let visibility = self.orch.settings.visibility;
        if visibility == TestVisibility::Never {
            self.sandbox()?.remove_path(TESTS_ROOT)?;
        }
        let baseline = format!("impl-base-{task}");
        self.commit(&baseline, &format!("Start task {task}"))?;
        let spec = plan.task(task).expect("task in plan");
        let prompt = self.orch.templates.render(
            visibility.template(),
            &[
                ("task_number", &task.to_string()),
                ("task_description", render_task(spec).trim_end()),
                ("constraints", &self.proposal.constraints),
            ],
        )?;
        let (run, diff) = self.run_agent_in(&prompt, &baseline)?;
        let finished = run.outcome.status == OutcomeStatus::Finished;
        let agent_error = format!("agent stopped with {:?}", run.outcome.status);
        let prior = self.guarded_before(task);
        let timeout = Duration::from_secs(self.orch.settings.test_timeout_secs);
        let report = match verify_task(self.sandbox()?, &snapshot, task, &prior, timeout) {
            Ok(r) => r,
            Err(e @ PipelineError::VerificationAborted(_)) => {
                self.record(TrajectoryKind::Implement, Some(task), None, run, diff, None)?;
                return Err(self.fail("verify", e.to_string())?);
            }
            Err(e) => return Err(e),
        };
        let reward = if finished { report.reward } else { 0 };
        self.record(TrajectoryKind::Implement, Some(task), None, run, diff, Some(reward))?;
        self.log(Event::TaskVerified {
            task,
            reward,
            suite_digest: report.suite_digest.clone(),
            tests_match_snapshot: report.observed_digest == report.suite_digest,
        })?;
        let failing: Vec<String> = report
            .scripts_run
            .iter()
            .filter(|r| r.exit_code != 0 || r.timed_out)
            .map(|r| format!("{} (exit {})", r.task_id, r.exit_code))
            .collect();
        self.state.task_mut(task).reward = Some(report);
        self.commit(&format!("impl-{task}"), &format!("Implement task {task}"))?;
        self.transition(StageState::Implemented { upto: task })?;
        if !finished {
            return self.task_failed(task, "implement", agent_error);
        }
        if reward == 0 {
            return self.task_failed(task, "verify", format!("failing test scripts: {}", failing.join(", ")));
        }
        self.state.task_mut(task).status = TaskStatus::Passed;
        self.persist()?;
        Ok(TaskStatus::Passed)
    }

    /// Settle `task`: generate its tests if needed, then implement it.
    pub fn advance_task(&mut self, task: TaskId) -> Result<TaskStatus, PipelineError> {
        let status = self.state.task(task).map(|t| t.status.clone());
        let status = match status {
            Some(TaskStatus::Pending) => self.generate_tests(task)?,
            Some(s) => s,
            None => return Err(PipelineError::Precondition(format!("task {task} is not in the plan"))),
        };
        if status == TaskStatus::TestsReady && !self.state.state.is_terminal() {
            return self.implement(task);
        }
        Ok(status)
    }

    fn drive(&mut self) -> Result<(), PipelineError> {
        if self.state.state == StageState::Proposed {
            self.plan_project()?;
        }
        if self.state.state == StageState::Planned {
            self.scaffold()?;
        }
        while let Some(task) = self.state.next_task() {
            if self.state.state.is_terminal() {
                break;
            }
            self.advance_task(task)?;
        }
        Ok(())
    }

    /// Work through the remaining stages and write the final artifact. Any
    /// stage error leaves the project in a persisted failed state; the
    /// artifact's state tells where it stopped.
    pub fn run_to_end(&mut self) -> Result<ProjectArtifact, PipelineError> {
        if let Err(e) = self.drive() {
            tracing::warn!(project = %self.state.project, error = %e, "pipeline stopped");
            if !self.state.state.is_terminal() {
                let stage = match &e {
                    PipelineError::Stage { stage, .. } => stage.clone(),
                    _ => "pipeline".to_string(),
                };
                self.fail(&stage, e.to_string())?;
            }
        }
        self.finish()
    }

    /// Settle the final state and write `workspace.tar`, `history.patch`,
    /// `rewards.json` and `artifact.json`.
    pub fn finish(&mut self) -> Result<ProjectArtifact, PipelineError> {
        if !self.state.state.is_terminal() {
            let unsettled: Vec<String> = self
                .state
                .tasks
                .iter()
                .filter(|t| t.status != TaskStatus::Passed)
                .map(|t| match &t.status {
                    TaskStatus::Failed { stage, .. } => format!("{} failed ({stage})", t.id),
                    TaskStatus::Skipped { because } => format!("{} skipped (needs {because})", t.id),
                    _ => format!("{} not finished", t.id),
                })
                .collect();
            if unsettled.is_empty() && matches!(self.state.state, StageState::Scaffolded | StageState::Implemented { .. }) {
                self.transition(StageState::Completed)?;
            } else {
                let reason = if unsettled.is_empty() {
                    "pipeline stopped early".to_string()
                } else {
                    unsettled.join("; ")
                };
                self.transition(StageState::Failed {
                    stage: "tasks".into(),
                    reason,
                })?;
            }
        }
        let (workspace, history) = if self.dir.join(RESUME_TAR).exists() || self.sandbox.is_some() {
            let sb = self.sandbox()?;
            let workspace = tarball::export_tar(sb, "", ExportOptions::default())?;
            let history = if vcs::has_ref(sb, "HEAD")? {
                vcs::history_patch(sb)?
            } else {
                String::new()
            };
            (workspace, history)
        } else {
            (tarball::tar_from_files(Vec::new())?, String::new())
        };
        write_file(&self.dir.join(WORKSPACE_TAR), &workspace)?;
        write_file(&self.dir.join(HISTORY_FILE), history.as_bytes())?;
        let rewards: Vec<RewardReport> = self.state.tasks.iter().filter_map(|t| t.reward.clone()).collect();
        write_json(&self.dir.join(REWARDS_FILE), &rewards)?;
        let mut snapshots = BTreeMap::new();
        let mut checklists = Vec::new();
        for t in &self.state.tasks {
            if self.snapshot_path(t.id).exists() {
                snapshots.insert(t.id, self.load_snapshot(t.id)?.suite_digest());
            }
            if self.checklist_path(t.id).exists() {
                checklists.push(format!("{CHECKLIST_DIR}/{}.md", t.id));
            }
        }
        let artifact = ProjectArtifact {
            project: self.state.project.clone(),
            state: self.state.state.clone(),
            proposal: self.proposal.clone(),
            plan_file: PLAN_FILE.into(),
            checklists,
            snapshots,
            rewards,
            tasks: self.state.tasks.clone(),
            trajectories: self.state.trajectories.clone(),
            workspace_sha256: sha256_hex(&workspace),
            history_sha256: sha256_hex(history.as_bytes()),
        };
        write_json(&self.dir.join(ARTIFACT_FILE), &artifact)?;
        self.persist()?;
        Ok(artifact)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> TaskId {
        s.parse().unwrap()
    }

    #[test]
    fn transitions_follow_the_order() {
        let order = [id("1.1.1"), id("1.1.2")];
        let tg = |t: &str| StageState::TestsGenerated { upto: id(t) };
        let im = |t: &str| StageState::Implemented { upto: id(t) };
        assert!(StageState::Proposed.allows(&StageState::Planned, &order));
        assert!(!StageState::Proposed.allows(&StageState::Scaffolded, &order));
        assert!(StageState::Scaffolded.allows(&tg("1.1.1"), &order));
        assert!(tg("1.1.1").allows(&im("1.1.1"), &order));
        assert!(!tg("1.1.1").allows(&im("1.1.2"), &order));
        assert!(im("1.1.1").allows(&tg("1.1.2"), &order));
        assert!(!im("1.1.2").allows(&tg("1.1.1"), &order));
        assert!(!tg("1.1.1").allows(&tg("1.1.2"), &order));
        assert!(im("1.1.2").allows(&StageState::Completed, &order));
        let failed = StageState::Failed {
            stage: "x".into(),
            reason: "y".into(),
        };
        assert!(tg("1.1.1").allows(&failed, &order));
        assert!(!failed.allows(&failed, &order));
        assert!(!StageState::Completed.allows(&StageState::Planned, &order));
    }

    #[test]
    fn state_serializes_with_tag() {
        let s = StageState::TestsGenerated { upto: id("1.2.3") };
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"{"state":"tests_generated","upto":"1.2.3"}"#);
        assert_eq!(test_file(id("1.2.3")), "tests/test_1_2_3.py");
        assert_eq!(test_script(id("1.2.3")), "tests/1.2.3.sh");
    }

    #[test]
    fn project_ids_are_path_safe() {
        let p = |name: &str| ProjectProposal {
            description: "d".into(),
            repo_name: name.into(),
            language: "Python".into(),
            constraints: "c".into(),
        };
        assert_eq!(project_id(&p("rpn-calculator")), "rpn-calculator");
        assert_eq!(project_id(&p("a/b c")), "a-b-c");
        assert_eq!(project_id(&p("..")), "project");
    }
}
