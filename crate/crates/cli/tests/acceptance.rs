//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/support/demo_env.rs"]
mod demo_env;
#[path = "../../core/tests/support/stats_oracle.rs"]
mod stats_oracle;
#[path = "../../core/tests/support/stub_oracle.rs"]
mod stub_oracle;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use demo_env::{script_for, tampering_calls, Env};
use envforge_core::adapt::{check_bundle, list_instances, parse_issue, IssueError};
use envforge_core::demo::{self, AgentTask};
use envforge_core::gateway::{BackendError, BackendReply, ChatBackend, CompletionRequest, FinishReason, Gateway};
use envforge_core::pipeline::{read_events, Event, EventRecord, StageState, EVENTS_FILE};
use envforge_core::plan::{parse_plan, render, validate_plan, TaskId};
use envforge_core::proposal::{parse_proposals, render_proposals, ProposalConfig, ProposalEngine, ProposalError};
use envforge_core::sandbox::local::LocalProvisioner;
use envforge_core::sandbox::{digest_set, restore_tests, snapshot_tests, Provisioner, Sandbox, SandboxSpec};
use envforge_core::templates::TemplateSet;
use envforge_core::trajectory::stats::{render_table, table_column_labels};
use envforge_core::trajectory::{aggregate, SftRecord, TrajectoryFilter, TrajectoryKind, TrajectoryStore, REPORT_LABELS};

const CAS_PLAN: &str = include_str!("../../core/tests/fixtures/plan/cas_plan.md");
const BATCH_TWO: &str = include_str!("../../core/tests/fixtures/proposal/batch_two.txt");
const VALIDATOR_ISSUE: &str = include_str!("../../core/tests/fixtures/issue/validator_example.txt");

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn t(s: &str) -> TaskId {
    s.parse().unwrap()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/micro")
}

fn envforge(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_envforge"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("envforge runs")
}

fn verified(events: &[EventRecord]) -> Vec<(TaskId, u8, bool)> {
    events
        .iter()
        .filter_map(|e| match &e.event {
            Event::TaskVerified { task, reward, tests_match_snapshot, .. } => Some((*task, *reward, *tests_match_snapshot)),
            _ => None,
        })
        .collect()
}

/// Every regular file below `root` with its bytes, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Two `run-all --replay` runs of the bundled micro-project.
struct Replay {
    runs: Vec<(tempfile::TempDir, Duration)>,
}

impl Replay {
    fn out(&self) -> &Path {
        self.runs[0].0.path()
    }

    fn project(&self) -> PathBuf {
        self.out().join("projects").join(demo::REPO_NAME)
    }
}

fn replay_twice() -> Result<Replay, String> {
    let config = fixture().join("envforge.toml");
    let archive = fixture().join("transcripts");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().unwrap();
        let started = Instant::now();
        let result = envforge(&[
            "--config",
            config.to_str().unwrap(),
            "--output-dir",
            out.path().to_str().unwrap(),
            "run-all",
            "--replay",
            archive.to_str().unwrap(),
            "--projects",
            "1",
        ]);
        let took = started.elapsed();
        ensure(result.status.success(), || {
            format!("run-all exited with {:?}: {}", result.status.code(), String::from_utf8_lossy(&result.stderr))
        })?;
        runs.push((out, took));
    }
    Ok(Replay { runs })
}

fn criterion_1(replay: &Result<Replay, String>) -> Outcome {
    let started = Instant::now();
    let mut all = Vec::new();
    // Tampering on the first task, and on the second after an honest first.
    for task in ["1.1.1", "1.1.2"] {
        let env = Env::demo(script_for(AgentTask::Implement(t(task)), tampering_calls(t(task))));
        let artifact = env.orchestrator().run_pipeline(&demo::proposal()).map_err(|e| e.to_string())?;
        let record = artifact.tasks.iter().find(|r| r.id == t(task)).ok_or("task missing")?;
        let report = record.reward.as_ref().ok_or("task was not verified")?;
        ensure(report.reward == 0, || format!("tampered task {task} earned reward {}", report.reward))?;
        ensure(matches!(artifact.state, StageState::Failed { .. }), || format!("state {:?}", artifact.state))?;
        let events = read_events(&env.projects().join(demo::REPO_NAME).join(EVENTS_FILE)).map_err(|e| e.to_string())?;
        let v = verified(&events);
        ensure(v.iter().any(|(id, r, _)| *id == t(task) && *r == 0), || format!("no zero-reward verification: {v:?}"))?;
        all.extend(v);
    }
    let adversarial = started.elapsed();
    ensure(adversarial < Duration::from_secs(60), || format!("adversarial fixtures took {adversarial:?}"))?;
    let replay = replay.as_ref().map_err(|e| format!("replay run: {e}"))?;
    let events = read_events(&replay.project().join(EVENTS_FILE)).map_err(|e| e.to_string())?;
    all.extend(verified(&events));
    let matching = all.iter().filter(|(_, _, m)| *m).count();
    ensure(matching == all.len() && !all.is_empty(), || format!("{matching}/{} verifications saw the snapshot", all.len()))?;
    Ok(format!(
        "tampered tasks earn 0; {matching}/{} verifications ran on the snapshot digest; adversarial fixtures {:.1}s",
        all.len(),
        adversarial.as_secs_f64()
    ))
}

fn criterion_2(replay: &Result<Replay, String>) -> Outcome {
    let replay = replay.as_ref().map_err(Clone::clone)?;
    for (out, took) in &replay.runs {
        ensure(*took < Duration::from_secs(120), || format!("run took {took:?}"))?;
        let run: serde_json::Value = serde_json::from_slice(&fs::read(out.path().join("run.json")).unwrap()).unwrap();
        let project = &run[0];
        ensure(project["state"]["state"] == "completed", || format!("state {}", project["state"]))?;
        ensure(project["rewards"] == serde_json::json!({"1.1.1": 1, "1.1.2": 1}), || format!("rewards {}", project["rewards"]))?;
    }
    let artifact: serde_json::Value = serde_json::from_slice(&fs::read(replay.project().join("artifact.json")).unwrap()).unwrap();
    let rewards: Vec<u64> = artifact["rewards"].as_array().unwrap().iter().map(|r| r["reward"].as_u64().unwrap()).collect();
    ensure(rewards == [1, 1], || format!("artifact rewards {rewards:?}"))?;
    let a = tree(replay.runs[0].0.path());
    let b = tree(replay.runs[1].0.path());
    let differing: Vec<&String> = a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).collect();
    ensure(differing.is_empty(), || format!("artifacts differ: {differing:?}"))?;
    Ok(format!(
        "completed with rewards [1, 1]; {} files byte-identical across runs ({:.1}s, {:.1}s)",
        a.len(),
        replay.runs[0].1.as_secs_f64(),
        replay.runs[1].1.as_secs_f64()
    ))
}

fn criterion_3() -> Outcome {
    let plan = parse_plan(CAS_PLAN).map_err(|e| e.to_string())?;
    ensure(plan.phases.len() == 5, || format!("{} phases", plan.phases.len()))?;
    let first = plan.task(t("1.1.1")).ok_or("1.1.1 missing")?;
    ensure(first.title == "Expression Tree Data Structure", || format!("title {:?}", first.title))?;
    ensure(first.difficulty == 3, || format!("difficulty {}", first.difficulty))?;
    let deps: BTreeSet<TaskId> = plan.task(t("5.2.2")).ok_or("5.2.2 missing")?.dependencies.iter().copied().collect();
    ensure(deps == BTreeSet::from([t("5.1.2"), t("3.2.2"), t("4.2.2")]), || format!("5.2.2 deps {deps:?}"))?;
    let report = validate_plan(&plan);
    ensure(report.passed(), || format!("validator: {:?}", report.violations))?;
    let rendered = render(&plan);
    ensure(parse_plan(&rendered).map_err(|e| e.to_string())? == plan, || "render/parse round-trip differs".into())?;
    Ok(format!("5 phases, {} tasks, validator clean, round-trip exact", plan.tasks().count()))
}

fn criterion_4() -> Outcome {
    let mut checked = 0;
    for seed in 0..4 {
        let corpus = stats_oracle::corpus(seed, 50);
        stats_oracle::check(&corpus).map_err(|e| format!("seed {seed}: {e}"))?;
        checked += corpus.len();
    }
    let corpus = stats_oracle::corpus(7, 50);
    let trajectories: Vec<_> = corpus.into_iter().map(|(t, _)| t).collect();
    let (_, agg) = aggregate(&trajectories, &TrajectoryFilter::all()).map_err(|e| e.to_string())?;
    ensure(table_column_labels(&render_table(&[("all", &agg)])) == REPORT_LABELS, || "table columns".into())?;
    let dir = tempfile::tempdir().unwrap();
    let store = TrajectoryStore::open(dir.path()).map_err(|e| e.to_string())?;
    for t in &trajectories {
        store.append(t).map_err(|e| e.to_string())?;
    }
    let out = envforge(&["stats", dir.path().to_str().unwrap()]);
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).to_string())?;
    let table = String::from_utf8_lossy(&out.stdout).to_string();
    let labels = table_column_labels(&table);
    ensure(labels == REPORT_LABELS, || format!("`stats` columns {labels:?}"))?;
    Ok(format!("{checked} random trajectories match the brute-force oracle; `stats` prints the 7 columns"))
}

fn criterion_5(replay: &Result<Replay, String>) -> Outcome {
    let replay = replay.as_ref().map_err(|e| format!("replay run: {e}"))?;
    let project = replay.project();
    let ids = list_instances(&project).map_err(|e| e.to_string())?;
    let provisioner = LocalProvisioner::new();
    let mut kinds = BTreeMap::new();
    let mut violations = Vec::new();
    for id in &ids {
        let check = check_bundle(&project.join("instances").join(id), &provisioner, Duration::from_secs(60)).map_err(|e| e.to_string())?;
        *kinds.entry(check.kind.to_string()).or_insert(0) += 1;
        violations.extend(check.violations.iter().map(|v| format!("{id}: {v}")));
    }
    ensure(kinds.get("issue_resolution").is_some() && kinds.get("issue_reproduction").is_some(), || {
        format!("fixture set lacks a kind: {kinds:?}")
    })?;
    ensure(violations.is_empty(), || violations.join("; "))?;
    Ok(format!("{} accepted instances {kinds:?}, 0 violations", ids.len()))
}

fn criterion_6() -> Outcome {
    stub_oracle::check_corpus()
}

fn sandbox_context() -> tempfile::TempDir {
    let ctx = tempfile::tempdir().unwrap();
    let p = ctx.path();
    fs::write(p.join("Dockerfile"), "FROM python:3.12-slim\nWORKDIR /workspace\n").unwrap();
    fs::create_dir_all(p.join("tests/unit")).unwrap();
    fs::write(p.join("tests/test_a.py"), "def test_a():\n    assert 1 + 1 == 2\n").unwrap();
    fs::write(p.join("tests/unit/test_b.py"), "def test_b():\n    assert True\n").unwrap();
    fs::write(p.join("tests/1.1.1.sh"), "python3 -m pytest -q tests\n").unwrap();
    ctx
}

fn criterion_7() -> Outcome {
    let ctx = sandbox_context();
    let provisioner = LocalProvisioner::new();
    let provision = || provisioner.provision(&SandboxSpec::new(ctx.path())).map_err(|e| e.to_string());
    let mut sb = provision()?;
    let err = |e: envforge_core::sandbox::SandboxError| e.to_string();
    let snap = snapshot_tests(sb.as_mut(), "tests").map_err(err)?;
    sb.write_file("tests/test_a.py", b"def test_a():\n    pass\n").map_err(err)?;
    sb.write_file("tests/rogue/conftest.py", b"import sys\n").map_err(err)?;
    restore_tests(sb.as_mut(), &snap).map_err(err)?;
    let after = digest_set(sb.as_mut(), "tests").map_err(err)?;
    ensure(after == snap.digests(), || "restore did not reproduce the snapshot digests".into())?;
    ensure(!sb.list_files("tests").map_err(err)?.iter().any(|f| f.contains("rogue")), || "rogue file survived".into())?;
    restore_tests(sb.as_mut(), &snap).map_err(err)?;
    ensure(snapshot_tests(sb.as_mut(), "tests").map_err(err)? == snap, || "second restore changed the tree".into())?;

    let bound = Duration::from_secs(1);
    let started = Instant::now();
    let r = sb.exec("sleep 30", bound).map_err(err)?;
    let wall = started.elapsed();
    ensure(r.timed_out && wall < 2 * bound, || format!("timeout: timed_out={} after {wall:?}", r.timed_out))?;

    let handles: Vec<Box<dyn Sandbox>> = vec![provision()?, provision()?];
    let joined: Vec<Result<(), String>> = std::thread::scope(|s| {
        let workers: Vec<_> = handles
            .into_iter()
            .enumerate()
            .map(|(n, mut sb)| {
                s.spawn(move || {
                    for i in 0..10 {
                        let mark = format!("{n}-{i}");
                        sb.write_file("shared.txt", mark.as_bytes()).map_err(|e| e.to_string())?;
                        let seen = sb.exec("cat shared.txt", Duration::from_secs(10)).map_err(|e| e.to_string())?.stdout;
                        ensure(seen == mark, || format!("handle {n} saw {seen:?}"))?;
                    }
                    Ok(())
                })
            })
            .collect();
        workers.into_iter().map(|w| w.join().unwrap()).collect()
    });
    joined.into_iter().collect::<Result<Vec<_>, _>>()?;
    ensure(!ctx.path().join("shared.txt").exists(), || "a handle wrote into the build context".into())?;
    Ok(format!("round-trip, idempotence, rogue removal, timeout in {:.2}s for a 1s bound, isolation", wall.as_secs_f64()))
}

/// Replies with fixed (content, finish reason) pairs.
struct Parts(Mutex<VecDeque<(String, FinishReason)>>);

impl ChatBackend for Parts {
    fn complete(&self, _: &CompletionRequest) -> Result<BackendReply, BackendError> {
        let (content, finish_reason) = self.0.lock().unwrap().pop_front().ok_or_else(|| BackendError::Other("no reply left".into()))?;
        Ok(BackendReply {
            content,
            finish_reason,
            usage: None,
        })
    }
}

fn criterion_8() -> Outcome {
    let parsed = parse_proposals(BATCH_TWO).map_err(|e| e.to_string())?;
    let sql = parsed.first().ok_or("no proposals")?;
    ensure(sql.repo_name == "sql-database-engine" && sql.language == "Python", || format!("first block {sql:?}"))?;
    ensure(sql.constraints.contains("Cannot use any existing database libraries"), || "constraints".into())?;
    ensure(parse_proposals(&render_proposals(&parsed)).map_err(|e| e.to_string())? == parsed, || "proposal round-trip".into())?;
    let no_repo = BATCH_TWO.replacen("<repo_name>", "<repository>", 1).replacen("</repo_name>", "</repository>", 1);
    ensure(matches!(parse_proposals(&no_repo), Err(ProposalError::MissingTags { .. })), || "missing tag accepted".into())?;

    let cut = BATCH_TWO.find("<repo_name>functional").ok_or("fixture changed")? + 5;
    let backend = Parts(Mutex::new(
        vec![
            (BATCH_TWO[..cut].to_string(), FinishReason::Length),
            (BATCH_TWO[cut..].to_string(), FinishReason::Stop),
        ]
        .into(),
    ));
    let gateway = Gateway::live(Arc::new(backend));
    let templates = TemplateSet::builtin();
    let batch = ProposalEngine::new(&gateway, &templates, ProposalConfig::default())
        .propose_projects(2, 0)
        .map_err(|e| e.to_string())?;
    ensure(batch.proposals == parsed, || "continuation reassembly differs".into())?;

    let issue = parse_issue(VALIDATOR_ISSUE, t("1.1.1")).map_err(|e| e.to_string())?;
    ensure(issue.user_description.starts_with("Cannot validate empty strings"), || "issue description".into())?;
    ensure(parse_issue(&issue.render(), t("1.1.1")).as_ref() == Ok(&issue), || "issue round-trip".into())?;
    let cut = VALIDATOR_ISSUE.find("</description>").unwrap();
    ensure(parse_issue(&VALIDATOR_ISSUE[..cut], t("1.1.1")) == Err(IssueError::Unclosed("description")), || "truncated issue".into())?;
    ensure(
        parse_issue("<description>x</description>", t("1.1.1")) == Err(IssueError::MissingTag("issue")),
        || "missing issue tag".into(),
    )?;
    Ok("proposal and issue examples parse, round-trip, reassemble and reject malformed input".into())
}

fn criterion_9(replay: &Result<Replay, String>) -> Outcome {
    let replay = replay.as_ref().map_err(|e| format!("replay run: {e}"))?;
    let out = replay.out();
    let run: serde_json::Value = serde_json::from_slice(&fs::read(out.join("run.json")).unwrap()).unwrap();
    let adaptations = run[0]["adaptations"].as_array().map_or(0, Vec::len);
    let tasks = run[0]["rewards"].as_object().map_or(0, |m| m.len());
    ensure(tasks == 2 && adaptations == 2, || format!("{tasks} tasks, {adaptations} adaptations"))?;

    let store = out.join("store");
    let manifest_path = out.join("manifest.json");
    let stats = envforge(&["stats", store.to_str().unwrap(), "--json", manifest_path.to_str().unwrap()]);
    ensure(stats.status.success(), || String::from_utf8_lossy(&stats.stderr).to_string())?;
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(&manifest_path).unwrap()).unwrap();
    let manifest_counts: BTreeMap<String, u64> = serde_json::from_value(manifest["counts"].clone()).unwrap();

    let events = read_events(&replay.project().join(EVENTS_FILE)).map_err(|e| e.to_string())?;
    let mut logged: BTreeMap<String, u64> = BTreeMap::new();
    for e in &events {
        if let Event::TrajectoryRecorded { kind, .. } = &e.event {
            *logged.entry(kind.to_string()).or_insert(0) += 1;
        }
    }
    ensure(manifest_counts == logged, || format!("manifest {manifest_counts:?} vs events {logged:?}"))?;

    let sft_path = out.join("sft.jsonl");
    let export = envforge(&["export", store.to_str().unwrap(), "--out", sft_path.to_str().unwrap()]);
    ensure(export.status.success(), || String::from_utf8_lossy(&export.stderr).to_string())?;
    let records: Vec<SftRecord> = fs::read_to_string(&sft_path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let excluded = [TrajectoryKind::Setup, TrajectoryKind::TestGen, TrajectoryKind::IssueInject];
    for kind in excluded {
        ensure(logged.contains_key(kind.as_str()), || format!("no {kind} trajectory to exclude"))?;
    }
    let leaked: Vec<_> = records.iter().filter(|r| excluded.contains(&r.kind)).map(|r| r.id.clone()).collect();
    ensure(leaked.is_empty(), || format!("exported {leaked:?}"))?;
    let all = TrajectoryStore::open(&store).and_then(|s| s.load_all()).map_err(|e| e.to_string())?;
    let expected = all
        .iter()
        .filter(|t| {
            !matches!(t.kind, TrajectoryKind::Setup | TrajectoryKind::TestGen | TrajectoryKind::IssueInject | TrajectoryKind::Blind)
                && t.outcome.status == envforge_core::agent::OutcomeStatus::Finished
                && t.reward != Some(0)
        })
        .count();
    ensure(records.len() == expected, || format!("exported {} of {expected} eligible", records.len()))?;
    Ok(format!("manifest counts {manifest_counts:?} match the event log; SFT export holds {expected} task-solving runs"))
}

fn main() {
    let replay = catch_unwind(replay_twice).unwrap_or_else(|_| Err("replay run panicked".into()));
    let criteria: Vec<(u8, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "anti-reward-hacking", Box::new(|| criterion_1(&replay))),
        (2, "replay determinism", Box::new(|| criterion_2(&replay))),
        (3, "plan parser fixture", Box::new(criterion_3)),
        (4, "stats oracle", Box::new(criterion_4)),
        (5, "adaptation soundness", Box::new(|| criterion_5(&replay))),
        (6, "stubber properties", Box::new(criterion_6)),
        (7, "sandbox contract", Box::new(criterion_7)),
        (8, "tag parsers", Box::new(criterion_8)),
        (9, "manifest sanity", Box::new(|| criterion_9(&replay))),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(|| check())).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail})"),
            Err(reason) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({reason})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
