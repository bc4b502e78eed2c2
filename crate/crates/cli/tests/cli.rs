use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/micro")
}

fn envforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_envforge"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = envforge(&["--config", missing.to_str().unwrap(), "propose"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("not found"));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("envforge.toml");
    fs::write(&path, "[gateway]\nmode = \"replay\"\n").unwrap();
    let o = envforge(&["--config", path.to_str().unwrap(), "propose"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("archive"), "{}", stderr(&o));
    fs::write(&path, "[limits]\nmax_stpes = 3\n").unwrap();
    assert_eq!(envforge(&["--config", path.to_str().unwrap(), "propose"]).status.code(), Some(2));
}

#[test]
fn every_subcommand_has_help() {
    for cmd in ["propose", "plan", "scaffold", "gen-tests", "implement", "adapt", "stats", "export", "run-all"] {
        let o = envforge(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        assert!(stdout(&o).contains("Usage: envforge"), "{cmd}: {}", stdout(&o));
    }
    assert_eq!(envforge(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_store_and_project_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = envforge(&["stats", dir.path().join("none").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let config = fixture().join("envforge.toml");
    let o = envforge(&["--config", config.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap(), "scaffold", "--project", "nothing"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn replay_miss_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("empty");
    fs::create_dir(&archive).unwrap();
    let config = fixture().join("envforge.toml");
    let o = envforge(&[
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        dir.path().join("out").to_str().unwrap(),
        "run-all",
        "--replay",
        archive.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

/// Stage commands run one after another replay the same transcripts as
/// `run-all` and reach the same result.
#[test]
fn staged_commands_match_run_all() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let config = fixture().join("envforge.toml");
    let config = config.to_str().unwrap();
    let run = |args: &[&str]| {
        let mut all = vec!["--config", config, "--output-dir", out];
        all.extend_from_slice(args);
        let o = envforge(&all);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}{}", stdout(&o), stderr(&o));
        stdout(&o)
    };
    assert!(run(&["propose", "--count", "1"]).contains("rpn-calculator"));
    run(&["plan", "--proposal", "rpn-calculator"]);
    run(&["scaffold", "--project", "rpn-calculator"]);
    for task in ["1.1.1", "1.1.2"] {
        run(&["gen-tests", "--project", "rpn-calculator"]);
        assert!(run(&["implement", "--project", "rpn-calculator", "--task", task]).contains("Passed"));
    }
    let adapt = run(&["adapt", "--project", "rpn-calculator"]);
    assert_eq!(adapt.matches("accepted, solve reward 1").count(), 2, "{adapt}");
    let artifact: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("projects/rpn-calculator/artifact.json")).unwrap()).unwrap();
    assert_eq!(artifact["state"]["state"], "completed");
    let rewards: Vec<u64> = artifact["rewards"].as_array().unwrap().iter().map(|r| r["reward"].as_u64().unwrap()).collect();
    assert_eq!(rewards, [1, 1]);

    let table = run(&["stats"]);
    assert!(table.lines().any(|l| l.starts_with("implement ")), "{table}");
    let sft = dir.path().join("sft.jsonl");
    run(&["export", "--out", sft.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(&sft).unwrap().lines().count(), 4);
    assert!(dir.path().join("sft.jsonl.manifest.json").exists());
}

/// The bundled transcripts are what the built-in demo model produces. Set
/// `ENVFORGE_UPDATE_FIXTURES=1` to rewrite them after changing prompts.
#[test]
fn replay_fixture_matches_the_demo_model() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture().join("envforge.toml"))
        .unwrap()
        .replace("mode = \"replay\"", "mode = \"record\"\nbackend = \"demo\"");
    let config = dir.path().join("envforge.toml");
    fs::write(&config, text).unwrap();
    let o = envforge(&["--config", config.to_str().unwrap(), "run-all", "--projects", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let recorded = dir.path().join("transcripts");
    let bundled = fixture().join("transcripts");
    let names = |d: &Path| {
        let mut v: Vec<String> = fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().to_string()).collect();
        v.sort();
        v
    };
    if std::env::var_os("ENVFORGE_UPDATE_FIXTURES").is_some() {
        fs::remove_dir_all(&bundled).unwrap();
        fs::create_dir_all(&bundled).unwrap();
        for name in names(&recorded) {
            fs::copy(recorded.join(&name), bundled.join(&name)).unwrap();
        }
    }
    assert_eq!(names(&recorded), names(&bundled), "transcript keys drifted; see the test doc comment");
    for name in names(&recorded) {
        assert_eq!(fs::read(recorded.join(&name)).unwrap(), fs::read(bundled.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn parallel_run_builds_every_project() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("envforge.toml");
    fs::write(
        &config,
        "[gateway]\nbackend = \"demo\"\n\n[limits]\nmax_steps = 12\n\n[adapt]\nissue_resolution = 0\nissue_reproduction = 0\nlibrary_generation = false\n",
    )
    .unwrap();
    let o = envforge(&["--config", config.to_str().unwrap(), "run-all", "--projects", "2", "--parallel", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("rpn-calculator: Completed rewards [1.1.1=1, 1.1.2=1]"), "{text}");
    assert!(text.contains("rpn-calculator-2: Completed rewards [1.1.1=1, 1.1.2=1]"), "{text}");
    let store = dir.path().join("out/store");
    let o = envforge(&["stats", store.to_str().unwrap()]);
    assert!(stdout(&o).lines().any(|l| l.starts_with("implement ") && l.contains("|           4 |")), "{}", stdout(&o));
}
