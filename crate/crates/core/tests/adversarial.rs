//! Agents that try to game verification, and adaptations that must be
//! rejected.

#[path = "support/demo_env.rs"]
mod demo_env;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use demo_env::{script_for, tampering_calls, Env, TRIVIAL_TEST};
use envforge_core::adapt::{blind_tests, inject_issue, parse_issue, InstanceKind};
use envforge_core::agent::ToolCall;
use envforge_core::demo::{self, bash, edit, finish, reply, write, AgentTask, Prompt};
use envforge_core::pipeline::{
    read_events, verify_scaffold, Event, PipelineError, StageState, TaskStatus, EVENTS_FILE,
};
use envforge_core::plan::TaskId;
use envforge_core::sandbox::local::LocalProvisioner;
use envforge_core::sandbox::{Provisioner, SandboxSpec};

fn t(s: &str) -> TaskId {
    s.parse().unwrap()
}

#[test]
fn tampering_with_tests_earns_no_reward() {
    let started = Instant::now();
    let env = Env::demo(script_for(AgentTask::Implement(t("1.1.1")), tampering_calls(t("1.1.1"))));
    let artifact = env.orchestrator().run_pipeline(&demo::proposal()).unwrap();
    let task = &artifact.tasks[0];
    assert_eq!(task.id, t("1.1.1"));
    let report = task.reward.as_ref().unwrap();
    assert_eq!(report.reward, 0);
    assert_eq!(report.observed_digest, report.suite_digest);
    assert!(matches!(task.status, TaskStatus::Failed { .. }));
    assert!(matches!(artifact.state, StageState::Failed { .. }));
    let events = read_events(&env.projects().join(demo::REPO_NAME).join(EVENTS_FILE)).unwrap();
    let verified: Vec<_> = events
        .iter()
        .filter_map(|e| match &e.event {
            Event::TaskVerified { tests_match_snapshot, reward, .. } => Some((*tests_match_snapshot, *reward)),
            _ => None,
        })
        .collect();
    assert_eq!(verified, vec![(true, 0)]);
    assert!(started.elapsed() < Duration::from_secs(60));
}

#[test]
fn skipped_function_earns_no_reward() {
    let lazy = demo::EVALUATOR.replace(
        "    if len(stack) != 1:\n        raise ValueError(\"expression must leave exactly one value\")\n",
        "",
    );
    assert_ne!(lazy, demo::EVALUATOR);
    let env = Env::demo(script_for(
        AgentTask::Implement(t("1.1.2")),
        vec![write("src/rpn/evaluator.py", &lazy), finish("Implemented.")],
    ));
    let artifact = env.orchestrator().run_pipeline(&demo::proposal()).unwrap();
    assert_eq!(artifact.tasks[0].status, TaskStatus::Passed);
    let report = artifact.tasks[1].reward.as_ref().unwrap();
    assert_eq!(report.reward, 0);
    let runs: Vec<(TaskId, bool)> = report.scripts_run.iter().map(|r| (r.task_id, r.exit_code == 0)).collect();
    assert_eq!(runs, vec![(t("1.1.1"), true), (t("1.1.2"), false)]);
}

#[test]
fn vacuous_tests_are_rejected() {
    let env = Env::demo(script_for(
        AgentTask::TestGen(t("1.1.1")),
        vec![
            write("tests/test_1_1_1.py", TRIVIAL_TEST),
            write("tests/1.1.1.sh", &demo::test_script(t("1.1.1"))),
            finish("Tests written."),
        ],
    ));
    let artifact = env.orchestrator().run_pipeline(&demo::proposal()).unwrap();
    let task = &artifact.tasks[0];
    assert_eq!(task.test_gen_attempts, 2);
    assert!(matches!(&task.status, TaskStatus::Failed { stage, .. } if stage == "tests-too-weak"), "{:?}", task.status);
    let events = read_events(&env.projects().join(demo::REPO_NAME).join(EVENTS_FILE)).unwrap();
    let rejected = events
        .iter()
        .filter(|e| matches!(&e.event, Event::TestsRejected { stage, .. } if stage == "tests-too-weak"))
        .count();
    assert_eq!(rejected, 2);
}

#[test]
fn missing_script_is_reported() {
    let ctx = tempfile::tempdir().unwrap();
    std::fs::write(ctx.path().join("Dockerfile"), "FROM scratch\n").unwrap();
    std::fs::create_dir(ctx.path().join("tests")).unwrap();
    let mut sb = LocalProvisioner::new().provision(&SandboxSpec::new(ctx.path())).unwrap();
    let err = verify_scaffold(sb.as_mut(), t("1.1.1"), Duration::from_secs(30)).unwrap_err();
    assert!(matches!(err, PipelineError::ScriptMissing(ref s) if s == "tests/1.1.1.sh"), "{err}");
}

const DETECTING_TEST: &str = "def test_decimals_and_negatives():\n    tokens = tokenize(\"-2.5 10 *\")\n    assert tokens == [-2.5, 10, \"*\"]\n    assert isinstance(tokens[0], float) and isinstance(tokens[1], int)\n\n\n";

#[test]
fn adaptation_checks() {
    let mode: Arc<Mutex<Vec<ToolCall>>> = Arc::new(Mutex::new(Vec::new()));
    let calls = Arc::clone(&mode);
    let env = Env::demo(move |r| match demo::classify(r)? {
        Prompt::Agent { task: AgentTask::Inject | AgentTask::Blind, step } => {
            let calls = calls.lock().unwrap();
            if calls.is_empty() {
                return None;
            }
            Some(reply("Working.", calls.get(step).unwrap_or(&finish("done"))))
        }
        _ => None,
    });
    let orch = env.orchestrator();
    assert_eq!(orch.run_pipeline(&demo::proposal()).unwrap().state, StageState::Completed);
    let mut session = orch.open(demo::REPO_NAME).unwrap();
    let issue = parse_issue(demo::ISSUE, t("1.1.1")).unwrap();
    let tokenizer = "src/rpn/tokenizer.py";
    let break_decimals = edit(tokenizer, demo::FLOAT_FALLBACK, demo::FLOAT_BROKEN);
    let cases: Vec<(bool, Vec<ToolCall>, Option<&str>)> = vec![
        // injection
        (false, vec![], None),
        (false, vec![finish("Nothing changed.")], Some("no failing test")),
        (false, vec![bash("rm src/rpn/tokenizer.py"), finish("Removed.")], Some("broken build")),
        (false, vec![edit(tokenizer, "    tokens = []", "    tokens = [\"+\"]"), finish("Flipped.")], None),
        // blinding
        (true, vec![], None),
        (
            true,
            vec![break_decimals.clone(), edit("tests/test_1_1_1.py", DETECTING_TEST, ""), edit(tokenizer, demo::FLOAT_BROKEN, demo::FLOAT_FALLBACK), finish("Done.")],
            Some("bug not latent: snapshot passes"),
        ),
        (true, vec![break_decimals, finish("Done.")], Some("blinding incomplete")),
    ];
    for (blind, calls, expected) in cases {
        *mode.lock().unwrap() = calls.clone();
        let a = if blind {
            blind_tests(&mut session, &issue).unwrap()
        } else {
            inject_issue(&mut session, &issue).unwrap()
        };
        assert_eq!(a.kind, if blind { InstanceKind::IssueReproduction } else { InstanceKind::IssueResolution });
        match expected {
            None => assert!(a.accepted, "{calls:?}: {a:?}"),
            Some(prefix) => {
                assert!(!a.accepted, "{calls:?}");
                assert!(a.reason.as_deref().unwrap().starts_with(prefix), "{:?}", a.reason);
            }
        }
        let trajectory = env.store.load(a.trajectory.as_deref().unwrap()).unwrap().unwrap();
        assert_eq!(trajectory.reward, Some(u8::from(a.accepted)));
    }
}
