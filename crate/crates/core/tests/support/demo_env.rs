//! A scratch environment running the pipeline against the scripted demo model.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use envforge_core::clock::LogicalClock;
use envforge_core::agent::ToolCall;
use envforge_core::demo::{self, bash, finish, reply, write, AgentTask, Prompt};
use envforge_core::gateway::{CompletionRequest, Gateway, ScriptedBackend};
use envforge_core::pipeline::{Orchestrator, PipelineSettings};
use envforge_core::plan::TaskId;
use envforge_core::sandbox::local::LocalProvisioner;
use envforge_core::templates::TemplateSet;
use envforge_core::trajectory::TrajectoryStore;

pub struct Env {
    pub root: tempfile::TempDir,
    pub gateway: Gateway,
    pub templates: TemplateSet,
    pub provisioner: LocalProvisioner,
    pub store: TrajectoryStore,
    pub clock: LogicalClock,
    pub settings: PipelineSettings,
}

impl Env {
    pub fn with_gateway(gateway: Gateway) -> Self {
        let root = tempfile::tempdir().unwrap();
        let store = TrajectoryStore::open(root.path().join("store")).unwrap();
        Self {
            root,
            gateway,
            templates: TemplateSet::builtin(),
            provisioner: LocalProvisioner::new(),
            store,
            clock: LogicalClock::new(),
            settings: PipelineSettings {
                max_steps: 12,
                ..PipelineSettings::default()
            },
        }
    }

    /// The demo model; `over` may answer first.
    pub fn demo(over: impl Fn(&CompletionRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        let backend = ScriptedBackend::from_fn(move |r| over(r).or_else(|| demo::respond(r)));
        Self::with_gateway(Gateway::live(Arc::new(backend)))
    }

    pub fn projects(&self) -> PathBuf {
        self.root.path().join("projects")
    }

    pub fn orchestrator(&self) -> Orchestrator<'_> {
        Orchestrator {
            gateway: &self.gateway,
            templates: &self.templates,
            provisioner: &self.provisioner,
            store: &self.store,
            clock: &self.clock,
            settings: self.settings.clone(),
            projects_dir: self.projects(),
        }
    }
}

/// Replace the turns of one agent task.
pub fn script_for(target: AgentTask, calls: Vec<ToolCall>) -> impl Fn(&CompletionRequest) -> Option<String> + Send + Sync {
    move |r| match demo::classify(r)? {
        Prompt::Agent { task, step } if task == target => {
            let call = calls.get(step).cloned().unwrap_or_else(|| finish("done"));
            Some(reply("Working.", &call))
        }
        _ => None,
    }
}

pub const TRIVIAL_TEST: &str = "def test_nothing():\n    assert True\n";

/// An implementation run for `task` that swaps its tests for a trivial one
/// and its script for `exit 0`, then claims success.
pub fn tampering_calls(task: TaskId) -> Vec<ToolCall> {
    let file = task.to_string().replace('.', "_");
    vec![
        write(&format!("tests/test_{file}.py"), TRIVIAL_TEST),
        write(&format!("tests/{task}.sh"), "#!/bin/bash\nexit 0\n"),
        bash(&format!("bash tests/{task}.sh && echo PASS")),
        finish("All tests pass."),
    ]
}
