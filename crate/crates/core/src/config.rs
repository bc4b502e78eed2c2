//! TOML run configuration.
//!
//! ```toml
//! [models]
//! proposers = ["model-a", "model-b"]   # cycled per proposal batch
//! planner = "model-a"                  # plans, checklists, issue proposals
//! agent = "model-b"
//!
//! [gateway]
//! mode = "live"                # live | record | replay
//! backend = "http"             # http | demo
//! endpoint = "https://host/v1/chat/completions"
//! api_key_env = "ENVFORGE_API_KEY"
//! archive = "transcripts"
//!
//! [sandbox]
//! backend = "local"            # local | docker
//!
//! [limits]
//! max_steps = 100
//!
//! [pipeline]
//! output_dir = "out"
//! visibility = "after_attempt" # never | after_attempt | always
//! on_task_failure = "halt"     # halt | skip_dependents
//!
//! [adapt]
//! issue_resolution = 1
//! ```
//!
//! Every section and key is optional. Relative paths are resolved against
//! the directory of the configuration file. The API key is only ever read
//! from the environment.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapt::AdaptQuotas;
use crate::gateway::{Archive, ArchiveError, ChatBackend, Gateway, GatewayError, GatewayMode, HttpBackend, HttpBackendConfig, RetryPolicy};
use crate::pipeline::{FailurePolicy, PipelineSettings, TestVisibility};
use crate::proposal::{ProposalConfig, DEFAULT_BANNED_PHRASES, DEFAULT_REQUIREMENTS};
use crate::sandbox::docker::{DockerProvisioner, DEFAULT_SOCKET};
use crate::sandbox::local::LocalProvisioner;
use crate::sandbox::Provisioner;
use crate::templates::{TemplateError, TemplateSet};

pub const DEFAULT_API_KEY_ENV: &str = "ENVFORGE_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Models {
    pub proposers: Vec<String>,
    pub planner: String,
    pub agent: String,
}

impl Default for Models {
    fn default() -> Self {
        Self {
            proposers: vec!["proposer".into()],
            planner: "planner".into(),
            agent: "agent".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    /// The built-in scripted model (offline).
    Demo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub api_key_env: String,
    pub archive: Option<PathBuf>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Live,
            backend: BackendKind::Http,
            endpoint: None,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            archive: None,
            timeout_secs: 600,
            max_attempts: 3,
            initial_backoff_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandboxBackend {
    #[default]
    Local,
    Docker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxConfig {
    pub backend: SandboxBackend,
    pub docker_socket: PathBuf,
    /// Local backend only: execute `RUN` steps of the build file.
    pub run_build_steps: bool,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            backend: SandboxBackend::Local,
            docker_socket: DEFAULT_SOCKET.into(),
            run_build_steps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub max_steps: u32,
    pub exec_timeout_secs: u64,
    pub test_timeout_secs: u64,
    pub max_output_tokens: u32,
    pub plan_max_output_tokens: u32,
    pub max_continuations: u32,
    pub testgen_retries: u32,
    /// 0 disables context elision.
    pub context_budget_tokens: u64,
}

impl Default for Limits {
    fn default() -> Self {
        let s = PipelineSettings::default();
        Self {
            max_steps: s.max_steps,
            exec_timeout_secs: s.exec_timeout_secs,
            test_timeout_secs: s.test_timeout_secs,
            max_output_tokens: s.max_output_tokens,
            plan_max_output_tokens: s.plan_max_output_tokens,
            max_continuations: s.max_continuations,
            testgen_retries: s.testgen_retries,
            context_budget_tokens: s.context_budget_tokens.unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub output_dir: PathBuf,
    pub templates_dir: Option<PathBuf>,
    pub visibility: TestVisibility,
    pub on_task_failure: FailurePolicy,
    /// Projects run at once by `run-all`.
    pub parallel: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            output_dir: "out".into(),
            templates_dir: None,
            visibility: TestVisibility::default(),
            on_task_failure: FailurePolicy::default(),
            parallel: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalSection {
    pub language: String,
    pub batch_size: usize,
    pub requirements: Option<String>,
    pub banned_phrases: Option<Vec<String>>,
    pub temperature: f64,
}

impl Default for ProposalSection {
    fn default() -> Self {
        Self {
            language: "Python".into(),
            batch_size: 10,
            requirements: None,
            banned_phrases: None,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub models: Models,
    pub gateway: GatewayConfig,
    pub sandbox: SandboxConfig,
    pub limits: Limits,
    pub pipeline: PipelineSection,
    pub proposal: ProposalSection,
    pub adapt: AdaptQuotas,
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Read a file; relative paths in it become relative to its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        config.resolve_paths(&base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.pipeline.output_dir);
        for p in [&mut self.gateway.archive, &mut self.pipeline.templates_dir].into_iter().flatten() {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.models.proposers.is_empty() {
            return bad("models.proposers must name at least one model");
        }
        if self.limits.max_steps == 0 {
            return bad("limits.max_steps must be positive");
        }
        if self.limits.exec_timeout_secs == 0 || self.limits.test_timeout_secs == 0 {
            return bad("limits timeouts must be positive");
        }
        if self.limits.max_output_tokens == 0 || self.limits.plan_max_output_tokens == 0 {
            return bad("limits output token budgets must be positive");
        }
        if self.proposal.batch_size == 0 {
            return bad("proposal.batch_size must be positive");
        }
        if self.pipeline.parallel == 0 {
            return bad("pipeline.parallel must be positive");
        }
        if self.gateway.mode != GatewayMode::Live && self.gateway.archive.is_none() {
            return bad("gateway.archive is required in record and replay mode");
        }
        if self.gateway.mode != GatewayMode::Replay
            && self.gateway.backend == BackendKind::Http
            && self.gateway.endpoint.is_none()
        {
            return bad("gateway.endpoint is required for the http backend");
        }
        Ok(())
    }

    pub fn settings(&self) -> PipelineSettings {
        let l = &self.limits;
        PipelineSettings {
            planner_model: self.models.planner.clone(),
            agent_model: self.models.agent.clone(),
            max_steps: l.max_steps,
            exec_timeout_secs: l.exec_timeout_secs,
            test_timeout_secs: l.test_timeout_secs,
            max_output_tokens: l.max_output_tokens,
            plan_max_output_tokens: l.plan_max_output_tokens,
            max_continuations: l.max_continuations,
            testgen_retries: l.testgen_retries,
            visibility: self.pipeline.visibility,
            on_task_failure: self.pipeline.on_task_failure,
            context_budget_tokens: (l.context_budget_tokens > 0).then_some(l.context_budget_tokens),
        }
    }

    pub fn proposal_config(&self) -> ProposalConfig {
        let p = &self.proposal;
        ProposalConfig {
            models: self.models.proposers.clone(),
            language: p.language.clone(),
            requirements: p.requirements.clone().unwrap_or_else(|| DEFAULT_REQUIREMENTS.into()),
            banned_phrases: p
                .banned_phrases
                .clone()
                .unwrap_or_else(|| DEFAULT_BANNED_PHRASES.iter().map(|s| s.to_string()).collect()),
            max_continuations: self.limits.max_continuations,
            max_output_tokens: self.limits.plan_max_output_tokens,
            temperature: p.temperature,
        }
    }

    pub fn templates(&self) -> Result<TemplateSet, ConfigError> {
        Ok(match &self.pipeline.templates_dir {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::builtin(),
        })
    }

    fn backend(&self) -> Result<Option<Arc<dyn ChatBackend>>, ConfigError> {
        let g = &self.gateway;
        if g.mode == GatewayMode::Replay {
            return Ok(None);
        }
        Ok(Some(match g.backend {
            BackendKind::Demo => Arc::new(crate::demo::backend()),
            BackendKind::Http => {
                let endpoint = g
                    .endpoint
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("gateway.endpoint is required for the http backend".into()))?;
                let api_key = std::env::var(&g.api_key_env).map_err(|_| ConfigError::MissingEnv(g.api_key_env.clone()))?;
                Arc::new(HttpBackend::new(HttpBackendConfig {
                    endpoint,
                    api_key: Some(api_key),
                    timeout: Duration::from_secs(g.timeout_secs),
                }))
            }
        }))
    }

    pub fn gateway(&self) -> Result<Gateway, ConfigError> {
        let g = &self.gateway;
        let archive = match &g.archive {
            Some(dir) if g.mode != GatewayMode::Live => Some(Archive::open(dir)?),
            _ => None,
        };
        let gateway = Gateway::new(g.mode, self.backend()?, archive)?.with_retry(RetryPolicy {
            max_attempts: g.max_attempts.max(1),
            initial_backoff: Duration::from_millis(g.initial_backoff_ms),
        });
        Ok(gateway)
    }

    pub fn provisioner(&self) -> Box<dyn Provisioner> {
        match self.sandbox.backend {
            SandboxBackend::Local => Box::new(LocalProvisioner {
                base_dir: None,
                run_build_steps: self.sandbox.run_build_steps,
            }),
            SandboxBackend::Docker => Box::new(DockerProvisioner::new(&self.sandbox.docker_socket)),
        }
    }

    pub fn projects_dir(&self) -> PathBuf {
        self.pipeline.output_dir.join("projects")
    }

    pub fn store_dir(&self) -> PathBuf {
        self.pipeline.output_dir.join("store")
    }

    pub fn proposals_file(&self) -> PathBuf {
        self.pipeline.output_dir.join("proposals.json")
    }
}
