//! Capability-specific instances derived from a completed project: an
//! injected bug to resolve, the same kind of bug with its detecting tests
//! removed (to reproduce), and the whole repository stubbed out (to
//! regenerate from the plan).
//!
//! Injection and blinding agents work on forks of the completed workspace;
//! every outcome, accepted or not, is logged, and rejected runs keep their
//! trajectories with reward 0. Accepted instances are written as bundles
//! under `<project>/instances/<id>/`.

pub mod bundle;
pub mod issue;

use std::fs;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_agent, AgentError, AgentRun, OutcomeStatus};
use crate::gateway::{ChatMessage, CompletionRequest, GatewayError};
use crate::pipeline::{
    read_events, read_json, test_file, test_script, write_json, Event, PipelineError, ProjectSession, StageState,
    TaskStatus, EVENTS_FILE, TESTS_ROOT,
};
use crate::plan::{render_task, TaskId};
use crate::sandbox::tarball::{export_tar, read_tar, tar_from_files, ExportOptions};
use crate::sandbox::vcs::{self, tag_ref, DiffStats};
use crate::sandbox::{fork, restore_tests, snapshot_tests, Sandbox, SandboxError, TestSnapshot};
use crate::stub::{stub_repository, PythonStubber, StubError};
use crate::templates::TemplateError;
use crate::trajectory::TrajectoryKind;

pub use bundle::{
    apply_patch, check_bundle, in_repo_scripts, provision_tree, snapshot_from_files, AdaptedInstance, Bundle,
    BundleCheck, CollectionMode, InstanceKind, InstanceProvenance, Verification, VerificationRule,
};
pub use issue::{has_code_block, parse_issue, IssueError, IssueSpec};

pub const INSTANCES_DIR: &str = "instances";
pub const ADAPTATIONS_FILE: &str = "adaptations.json";
const BASE_LABEL: &str = "adapt-base";
const SOLVE_LABEL: &str = "solve-base";

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("issue proposal: {0}")]
    Issue(#[from] IssueError),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("bundle {path}: {message}")]
    Bundle { path: String, message: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// Load check: import every non-test Python module of the workspace.
/// Modules under `src/` are imported relative to `src`.
const LOAD_CHECK: &str = r#"python3 - <<'ENVFORGE_LOAD'
import importlib, os, sys
sys.path[:0] = [os.path.abspath("src"), os.getcwd()]
skip = {"tests", "__pycache__", "build", "dist"}
names = []
for base, dirs, files in os.walk("."):
    dirs[:] = sorted(d for d in dirs if d not in skip and not d.startswith("."))
    for f in sorted(files):
        if not f.endswith(".py") or f.startswith("test_") or f.endswith("_test.py") or f in ("setup.py", "conftest.py"):
            continue
        parts = os.path.relpath(os.path.join(base, f))[:-3].split(os.sep)
        if parts[0] == "src":
            parts = parts[1:]
        if parts and parts[-1] == "__init__":
            parts = parts[:-1]
        if parts:
            names.append(".".join(parts))
failed = 0
for name in names:
    try:
        importlib.import_module(name)
    except BaseException as e:
        failed += 1
        print(f"{name}: {type(e).__name__}: {e}")
sys.exit(1 if failed else 0)
ENVFORGE_LOAD"#;

/// `Ok(Err(report))` when some module fails to import.
pub fn load_check(sandbox: &mut dyn Sandbox, timeout: Duration) -> Result<Result<(), String>, SandboxError> {
    let r = sandbox.exec(LOAD_CHECK, timeout)?;
    Ok(if r.success() {
        Ok(())
    } else {
        let report = r.combined().trim().to_string();
        Err(if report.is_empty() {
            format!("load check exited {}", r.exit_code)
        } else {
            report
        })
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptOutcome {
    pub script: String,
    pub exit_code: i32,
    pub timed_out: bool,
}

impl ScriptOutcome {
    pub fn passed(&self) -> bool {
        self.exit_code == 0 && !self.timed_out
    }
}

pub fn run_scripts(sandbox: &mut dyn Sandbox, scripts: &[String], timeout: Duration) -> Result<Vec<ScriptOutcome>, SandboxError> {
    scripts
        .iter()
        .map(|script| {
            let r = sandbox.exec(&format!("bash {}", vcs::shell_quote(script)), timeout)?;
            Ok(ScriptOutcome {
                script: script.clone(),
                exit_code: r.exit_code,
                timed_out: r.timed_out,
            })
        })
        .collect()
}

/// How many instances of each kind to attempt per project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptQuotas {
    pub issue_resolution: u32,
    pub issue_reproduction: u32,
    pub library_generation: bool,
    /// Also run a solver agent on every accepted instance.
    pub solve: bool,
}

impl Default for AdaptQuotas {
    fn default() -> Self {
        Self {
            issue_resolution: 1,
            issue_reproduction: 1,
            library_generation: true,
            solve: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveResult {
    pub trajectory: String,
    pub reward: Option<u8>,
}

/// One adaptation attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adaptation {
    pub kind: InstanceKind,
    pub instance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_task: Option<TaskId>,
    /// The injection or blinding run, if an agent was involved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveResult>,
}

/// The final canonical suite of a completed project.
pub struct Canonical {
    pub snapshot_task: TaskId,
    pub snapshot: TestSnapshot,
    /// Scripts of passed tasks, in task order.
    pub scripts: Vec<String>,
}

impl Canonical {
    pub fn of(session: &ProjectSession<'_, '_>) -> Result<Self, AdaptError> {
        let state = session.state();
        if state.state != StageState::Completed {
            return Err(AdaptError::Precondition(format!(
                "adaptation needs a completed project (state {:?})",
                state.state
            )));
        }
        let snapshot_task = state
            .tasks
            .iter()
            .rev()
            .map(|t| t.id)
            .find(|&id| session.snapshot_path(id).exists())
            .ok_or_else(|| AdaptError::Precondition("project has no test snapshot".into()))?;
        let snapshot = session.load_snapshot(snapshot_task)?;
        let scripts: Vec<String> = state
            .tasks
            .iter()
            .filter(|t| t.has_tests && t.status == TaskStatus::Passed)
            .map(|t| test_script(t.id))
            .filter(|s| snapshot.entries.contains_key(s))
            .collect();
        if scripts.is_empty() {
            return Err(AdaptError::Precondition("project has no verified test scripts".into()));
        }
        Ok(Self {
            snapshot_task,
            snapshot,
            scripts,
        })
    }

    fn verification(&self, rule: VerificationRule, collection_mode: CollectionMode) -> Verification {
        Verification {
            snapshot_task: self.snapshot_task,
            suite_digest: self.snapshot.suite_digest(),
            scripts: self.scripts.clone(),
            rule,
            collection_mode,
        }
    }
}

/// Next free instance id of `kind`: `<project>.<kind>.<n>`, counting every
/// earlier attempt in the event log.
fn next_instance_id(session: &ProjectSession<'_, '_>, kind: InstanceKind) -> Result<String, AdaptError> {
    let used = read_events(&session.dir().join(EVENTS_FILE))?
        .iter()
        .filter(|r| match &r.event {
            Event::InstanceAccepted { kind: k, .. } | Event::InstanceRejected { kind: k, .. } => k == kind.as_str(),
            _ => false,
        })
        .count();
    Ok(format!("{}.{}.{}", session.state().project, kind, used + 1))
}

fn eligible_tasks(session: &ProjectSession<'_, '_>) -> Vec<TaskId> {
    session
        .state()
        .tasks
        .iter()
        .filter(|t| t.has_tests && t.status == TaskStatus::Passed)
        .map(|t| t.id)
        .collect()
}

fn test_timeout(session: &ProjectSession<'_, '_>) -> Duration {
    Duration::from_secs(session.orchestrator().settings.test_timeout_secs)
}

fn exec_timeout(session: &ProjectSession<'_, '_>) -> Duration {
    Duration::from_secs(session.orchestrator().settings.exec_timeout_secs)
}

/// Ask the planner model for an issue grounded in a passed task's tests.
pub fn propose_issue(session: &ProjectSession<'_, '_>, task: TaskId) -> Result<IssueSpec, AdaptError> {
    let record = session
        .state()
        .task(task)
        .ok_or_else(|| AdaptError::Precondition(format!("task {task} is not in the plan")))?;
    if !(record.has_tests && record.status == TaskStatus::Passed) {
        return Err(AdaptError::Precondition(format!("task {task} has no passing tests")));
    }
    let plan = session.plan()?;
    let spec = plan.task(task).expect("state tasks come from the plan");
    let mut test_prompt = render_task(spec);
    if let Some(checklist) = session.load_checklist(task)? {
        test_prompt.push('\n');
        test_prompt.push_str(&checklist.source);
    }
    let snapshot = session.load_snapshot(task)?;
    let code = snapshot
        .entries
        .get(&test_file(task))
        .ok_or_else(|| AdaptError::Precondition(format!("snapshot of {task} has no {}", test_file(task))))?;
    let orch = session.orchestrator();
    let user = orch.templates.render(
        "issue/user",
        &[
            ("project_description", &session.proposal().description),
            ("test_prompt", test_prompt.trim_end()),
            ("test_code", String::from_utf8_lossy(&code.content).trim_end()),
        ],
    )?;
    let request = CompletionRequest::new(
        &orch.settings.planner_model,
        vec![ChatMessage::system(orch.templates.raw("issue/system")?), ChatMessage::user(user)],
    )
    .with_max_output_tokens(orch.settings.max_output_tokens);
    let response = orch.gateway.complete(&request)?;
    Ok(parse_issue(&response.content, task)?)
}

/// Fork the project workspace, tag it, and run an agent on the fork.
fn run_on_fork(
    session: &mut ProjectSession<'_, '_>,
    prompt: &str,
) -> Result<(Box<dyn Sandbox>, AgentRun, DiffStats), AdaptError> {
    let date = session.now();
    let mut sb = session.fork_sandbox()?;
    let run = (|| -> Result<(AgentRun, DiffStats), AdaptError> {
        vcs::commit_all(sb.as_mut(), BASE_LABEL, "Completed project", &date)?;
        let config = session.agent_config()?;
        let run = run_agent(session.orchestrator().gateway, sb.as_mut(), prompt, &config)?;
        let diff = vcs::workspace_diff(sb.as_mut(), &tag_ref(BASE_LABEL))?.stats;
        Ok((run, diff))
    })();
    match run {
        Ok((run, diff)) => Ok((sb, run, diff)),
        Err(e) => {
            let _ = sb.destroy();
            Err(e)
        }
    }
}

fn adapt_prompt(session: &ProjectSession<'_, '_>, template: &str, issue: &IssueSpec) -> Result<String, AdaptError> {
    let plan = session.plan()?;
    let spec = plan
        .task(issue.source_task)
        .ok_or_else(|| AdaptError::Precondition(format!("task {} is not in the plan", issue.source_task)))?;
    Ok(session.orchestrator().templates.render(
        template,
        &[
            ("issue_description", &issue.technical_issue),
            ("project_description", &session.proposal().description),
            ("task_number", &issue.source_task.to_string()),
            ("task_description", render_task(spec).trim_end()),
        ],
    )?)
}

fn agent_problem(run: &AgentRun) -> Option<String> {
    (run.outcome.status != OutcomeStatus::Finished).then(|| format!("agent stopped with {:?}", run.outcome.status))
}

/// Log the verdict and write the bundle of an accepted instance.
fn settle(
    session: &mut ProjectSession<'_, '_>,
    kind: InstanceKind,
    id: String,
    source_task: Option<TaskId>,
    trajectory: Option<String>,
    verdict: Result<Bundle, String>,
) -> Result<Adaptation, AdaptError> {
    let reason = match verdict {
        Ok(mut bundle) => {
            bundle.instance.provenance.trajectory = trajectory.clone();
            bundle.write(&session.dir().join(INSTANCES_DIR).join(&id))?;
            session.log(Event::InstanceAccepted {
                kind: kind.to_string(),
                instance: id.clone(),
            })?;
            None
        }
        Err(reason) => {
            session.log(Event::InstanceRejected {
                kind: kind.to_string(),
                instance: id.clone(),
                reason: reason.clone(),
            })?;
            Some(reason)
        }
    };
    Ok(Adaptation {
        kind,
        instance: id,
        source_task,
        trajectory,
        accepted: reason.is_none(),
        reason,
        solve: None,
    })
}

fn issue_instance(
    session: &ProjectSession<'_, '_>,
    canonical: &Canonical,
    id: &str,
    kind: InstanceKind,
    issue: &IssueSpec,
    workspace: Vec<u8>,
    gold: String,
) -> Bundle {
    let rule = match kind {
        InstanceKind::IssueReproduction => VerificationRule::FailToPass,
        _ => VerificationRule::CanonicalPass,
    };
    Bundle {
        instance: AdaptedInstance {
            id: id.to_string(),
            kind,
            problem_statement: issue.user_description.clone(),
            verification: canonical.verification(rule, CollectionMode::Verified),
            provenance: InstanceProvenance {
                project: session.state().project.clone(),
                source_task: Some(issue.source_task),
                technical_issue: Some(issue.technical_issue.clone()),
                trajectory: None,
            },
        },
        workspace,
        canonical_tests: canonical.snapshot.clone(),
        gold_patch: Some(gold),
    }
}

/// Inject `issue` with an agent. Accepted when, with the canonical suite
/// restored, the workspace still loads and the source task's script fails.
pub fn inject_issue(session: &mut ProjectSession<'_, '_>, issue: &IssueSpec) -> Result<Adaptation, AdaptError> {
    let canonical = Canonical::of(session)?;
    let kind = InstanceKind::IssueResolution;
    let id = next_instance_id(session, kind)?;
    let prompt = adapt_prompt(session, "inject/task", issue)?;
    let (mut sb, run, diff) = run_on_fork(session, &prompt)?;
    let (load_timeout, timeout) = (exec_timeout(session), test_timeout(session));
    let verdict = (|| -> Result<Result<(Vec<u8>, String), String>, AdaptError> {
        let sb = sb.as_mut();
        if let Some(problem) = agent_problem(&run) {
            return Ok(Err(problem));
        }
        restore_tests(sb, &canonical.snapshot)?;
        if let Err(report) = load_check(sb, load_timeout)? {
            return Ok(Err(format!("broken build: {report}")));
        }
        let source = test_script(issue.source_task);
        let runs = run_scripts(sb, std::slice::from_ref(&source), timeout)?;
        if runs[0].passed() {
            return Ok(Err(format!("no failing test: {source} still passes")));
        }
        let gold = vcs::reverse_patch(sb, &tag_ref(BASE_LABEL))?;
        let workspace = export_tar(sb, "", ExportOptions::default())?;
        Ok(Ok((workspace, gold)))
    })();
    let _ = sb.destroy();
    let verdict = verdict?;
    let reward = u8::from(verdict.is_ok());
    let trajectory = session.record(
        TrajectoryKind::IssueInject,
        Some(issue.source_task),
        Some(id.clone()),
        run,
        diff,
        Some(reward),
    )?;
    let verdict = verdict.map(|(workspace, gold)| issue_instance(session, &canonical, &id, kind, issue, workspace, gold));
    settle(session, kind, id, Some(issue.source_task), Some(trajectory), verdict)
}

/// Inject `issue` and hide it from the in-repo tests in one agent run.
/// Accepted when (a) every in-repo test script passes and (b) the canonical
/// suite, restored in a scratch copy, still fails.
pub fn blind_tests(session: &mut ProjectSession<'_, '_>, issue: &IssueSpec) -> Result<Adaptation, AdaptError> {
    let canonical = Canonical::of(session)?;
    let kind = InstanceKind::IssueReproduction;
    let id = next_instance_id(session, kind)?;
    let prompt = adapt_prompt(session, "blind/task", issue)?;
    let (mut sb, run, diff) = run_on_fork(session, &prompt)?;
    let (load_timeout, timeout) = (exec_timeout(session), test_timeout(session));
    let spec = session.sandbox_spec();
    let provisioner = session.orchestrator().provisioner;
    let verdict = (|| -> Result<Result<(Vec<u8>, String), String>, AdaptError> {
        let sb = sb.as_mut();
        if let Some(problem) = agent_problem(&run) {
            return Ok(Err(problem));
        }
        if let Err(report) = load_check(sb, load_timeout)? {
            return Ok(Err(format!("broken build: {report}")));
        }
        let local = in_repo_scripts(sb)?;
        if local.is_empty() {
            return Ok(Err("blinding incomplete: no in-repo test scripts left".into()));
        }
        let runs = run_scripts(sb, &local, timeout)?;
        let failing: Vec<String> = runs
            .iter()
            .filter(|r| !r.passed())
            .map(|r| format!("{} (exit {})", r.script, r.exit_code))
            .collect();
        if !failing.is_empty() {
            return Ok(Err(format!("blinding incomplete: {}", failing.join(", "))));
        }
        let mut scratch = fork(provisioner, &spec, sb)?;
        let latent = (|| -> Result<Result<String, String>, AdaptError> {
            let scratch = scratch.as_mut();
            restore_tests(scratch, &canonical.snapshot)?;
            let runs = run_scripts(scratch, &canonical.scripts, timeout)?;
            if runs.iter().all(ScriptOutcome::passed) {
                return Ok(Err("bug not latent: snapshot passes".into()));
            }
            Ok(Ok(vcs::reverse_patch(scratch, &tag_ref(BASE_LABEL))?))
        })();
        let _ = scratch.destroy();
        let gold = match latent? {
            Ok(gold) => gold,
            Err(reason) => return Ok(Err(reason)),
        };
        let workspace = export_tar(sb, "", ExportOptions::default())?;
        Ok(Ok((workspace, gold)))
    })();
    let _ = sb.destroy();
    let verdict = verdict?;
    let reward = u8::from(verdict.is_ok());
    let trajectory = session.record(
        TrajectoryKind::Blind,
        Some(issue.source_task),
        Some(id.clone()),
        run,
        diff,
        Some(reward),
    )?;
    let verdict = verdict.map(|(workspace, gold)| issue_instance(session, &canonical, &id, kind, issue, workspace, gold));
    settle(session, kind, id, Some(issue.source_task), Some(trajectory), verdict)
}

/// Stub every function of the completed workspace and drop `tests/`.
/// Accepted when the stubbed tree loads and every canonical script fails.
pub fn library_instance(session: &mut ProjectSession<'_, '_>) -> Result<Adaptation, AdaptError> {
    let canonical = Canonical::of(session)?;
    let kind = InstanceKind::LibraryGeneration;
    let id = next_instance_id(session, kind)?;
    let (load_timeout, timeout) = (exec_timeout(session), test_timeout(session));
    let files = read_tar(&export_tar(session.sandbox()?, "", ExportOptions::default())?)?;
    let files: Vec<_> = files
        .into_iter()
        .filter(|(p, _)| !(p == TESTS_ROOT || p.starts_with(&format!("{TESTS_ROOT}/"))))
        .collect();
    let verdict = match stub_repository(&PythonStubber, files) {
        Err(StubError::Sandbox(e)) => return Err(e.into()),
        Err(e) => Err(format!("stubbing failed: {e}")),
        Ok(stubbed) => {
            let mut sb = provision_tree(session.orchestrator().provisioner, stubbed.clone(), load_timeout.as_secs())?;
            let checked = (|| -> Result<Result<(), String>, AdaptError> {
                let sb = sb.as_mut();
                if let Err(report) = load_check(sb, load_timeout)? {
                    return Ok(Err(format!("stubbed tree does not load: {report}")));
                }
                restore_tests(sb, &canonical.snapshot)?;
                let runs = run_scripts(sb, &canonical.scripts, timeout)?;
                let passing: Vec<&str> = runs.iter().filter(|r| r.passed()).map(|r| r.script.as_str()).collect();
                if !passing.is_empty() {
                    return Ok(Err(format!("canonical tests pass on stubs: {}", passing.join(", "))));
                }
                Ok(Ok(()))
            })();
            let _ = sb.destroy();
            checked?.map(|()| stubbed)
        }
    };
    let verdict = match verdict {
        Ok(stubbed) => Ok(Bundle {
            instance: AdaptedInstance {
                id: id.clone(),
                kind,
                problem_statement: session.plan_text()?,
                verification: canonical.verification(VerificationRule::Unverified, CollectionMode::DistillationOnly),
                provenance: InstanceProvenance {
                    project: session.state().project.clone(),
                    source_task: None,
                    technical_issue: None,
                    trajectory: None,
                },
            },
            workspace: tar_from_files(stubbed)?,
            canonical_tests: canonical.snapshot.clone(),
            gold_patch: None,
        }),
        Err(reason) => Err(reason),
    };
    settle(session, kind, id, None, None, verdict)
}

/// Run a solver agent on an accepted instance of this project and record
/// its trajectory. Issue resolution is rewarded when every canonical script
/// passes; issue reproduction when the solver's test scripts fail on the
/// base workspace and pass with the gold patch; library generation is
/// collected unverified.
pub fn solve_instance(session: &mut ProjectSession<'_, '_>, instance: &str) -> Result<SolveResult, AdaptError> {
    let bundle = Bundle::load(&session.dir().join(INSTANCES_DIR).join(instance))?;
    let kind = bundle.instance.kind;
    let orch = session.orchestrator();
    let prompt = orch
        .templates
        .render(&kind.solve_template(), &[("problem_statement", &bundle.instance.problem_statement)])?;
    let (load_timeout, timeout) = (exec_timeout(session), test_timeout(session));
    let date = session.now();
    let mut sb = bundle.provision(orch.provisioner, load_timeout.as_secs())?;
    let outcome = (|| -> Result<(AgentRun, DiffStats, Option<u8>), AdaptError> {
        let sb = sb.as_mut();
        vcs::commit_all(sb, SOLVE_LABEL, "Instance base", &date)?;
        let config = session.agent_config()?;
        let run = run_agent(orch.gateway, sb, &prompt, &config)?;
        let diff = vcs::workspace_diff(sb, &tag_ref(SOLVE_LABEL))?.stats;
        let finished = run.outcome.status == OutcomeStatus::Finished;
        let reward = match kind {
            InstanceKind::LibraryGeneration => None,
            InstanceKind::IssueResolution => {
                restore_tests(sb, &bundle.canonical_tests)?;
                let runs = run_scripts(sb, &bundle.instance.verification.scripts, timeout)?;
                Some(u8::from(finished && runs.iter().all(ScriptOutcome::passed)))
            }
            InstanceKind::IssueReproduction => {
                let tests = match snapshot_tests(sb, TESTS_ROOT) {
                    Ok(s) => s,
                    Err(SandboxError::NotFound(_)) => snapshot_from_files(TESTS_ROOT, Vec::new()),
                    Err(e) => return Err(e.into()),
                };
                let touched = vcs::changed_paths(sb, &tag_ref(SOLVE_LABEL))?
                    .iter()
                    .any(|p| p.starts_with(&format!("{TESTS_ROOT}/")));
                let ok = finished && touched && fail_to_pass(&bundle, &tests, load_timeout, timeout, orch.provisioner)?;
                Some(u8::from(ok))
            }
        };
        Ok((run, diff, reward))
    })();
    let _ = sb.destroy();
    let (run, diff, reward) = outcome?;
    let trajectory = session.record(
        kind.trajectory_kind(),
        bundle.instance.provenance.source_task,
        Some(bundle.instance.id.clone()),
        run,
        diff,
        reward,
    )?;
    Ok(SolveResult { trajectory, reward })
}

/// The solver's suite `tests` on a clean copy of the instance: some script
/// fails before the gold patch, and every script passes after it.
fn fail_to_pass(
    bundle: &Bundle,
    tests: &TestSnapshot,
    load_timeout: Duration,
    timeout: Duration,
    provisioner: &dyn crate::sandbox::Provisioner,
) -> Result<bool, AdaptError> {
    let scripts: Vec<String> = tests
        .entries
        .keys()
        .filter(|p| p.ends_with(".sh") && p.matches('/').count() == 1)
        .cloned()
        .collect();
    let Some(gold) = &bundle.gold_patch else {
        return Ok(false);
    };
    if scripts.is_empty() {
        return Ok(false);
    }
    let mut sb = bundle.provision(provisioner, load_timeout.as_secs())?;
    let result = (|| -> Result<bool, AdaptError> {
        let sb = sb.as_mut();
        restore_tests(sb, tests)?;
        if run_scripts(sb, &scripts, timeout)?.iter().all(ScriptOutcome::passed) {
            return Ok(false);
        }
        if apply_patch(sb, gold)?.is_err() {
            return Ok(false);
        }
        Ok(run_scripts(sb, &scripts, timeout)?.iter().all(ScriptOutcome::passed))
    })();
    let _ = sb.destroy();
    result
}

/// Attempts of every kind within `quotas`; issue proposals cycle over the
/// project's passed tasks. The outcomes are appended to `adaptations.json`.
pub fn adapt_project(session: &mut ProjectSession<'_, '_>, quotas: &AdaptQuotas) -> Result<Vec<Adaptation>, AdaptError> {
    Canonical::of(session)?;
    let tasks = eligible_tasks(session);
    let mut done = Vec::new();
    let plan = [
        (InstanceKind::IssueResolution, quotas.issue_resolution),
        (InstanceKind::IssueReproduction, quotas.issue_reproduction),
    ];
    for (kind, quota) in plan {
        for i in 0..quota as usize {
            let task = tasks[i % tasks.len()];
            let adaptation = match propose_issue(session, task) {
                Ok(issue) if kind == InstanceKind::IssueResolution => inject_issue(session, &issue)?,
                Ok(issue) => blind_tests(session, &issue)?,
                Err(AdaptError::Issue(e)) => {
                    let id = next_instance_id(session, kind)?;
                    settle(session, kind, id, Some(task), None, Err(format!("issue proposal: {e}")))?
                }
                Err(e) => return Err(e),
            };
            done.push(adaptation);
        }
    }
    if quotas.library_generation {
        done.push(library_instance(session)?);
    }
    if quotas.solve {
        for a in done.iter_mut().filter(|a| a.accepted) {
            a.solve = Some(solve_instance(session, &a.instance)?);
        }
    }
    let path = session.dir().join(ADAPTATIONS_FILE);
    let mut all: Vec<Adaptation> = if path.exists() { read_json(&path)? } else { Vec::new() };
    all.extend(done.iter().cloned());
    write_json(&path, &all)?;
    session.persist()?;
    Ok(done)
}

/// Accepted bundles of a project directory, sorted by id.
pub fn list_instances(project_dir: &std::path::Path) -> Result<Vec<String>, AdaptError> {
    let dir = project_dir.join(INSTANCES_DIR);
    let mut ids = Vec::new();
    match fs::read_dir(&dir) {
        Ok(entries) => {
            for e in entries {
                let e = e.map_err(SandboxError::Io)?;
                if e.path().join(bundle::INSTANCE_FILE).exists() {
                    ids.push(e.file_name().to_string_lossy().into_owned());
                }
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(SandboxError::Io(e).into()),
    }
    ids.sort();
    Ok(ids)
}
