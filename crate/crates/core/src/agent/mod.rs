//! Reason–act–observe loop against a sandbox.
//!
//! Each turn sends `[system, task, (assistant, observation)*]` to the
//! gateway, parses one action from the reply, executes it and appends the
//! observation with the `tool` role. `finish` ends the run without an
//! observation, so a run holds `2 + 2·steps − finished` messages.

pub mod action;
pub mod edit;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use action::{parse_action, ParseError, ParsedAction, ToolCall, ToolKind};
pub use edit::apply_edit;

use crate::gateway::{count_tokens, ChatMessage, CompletionRequest, Gateway, Role};
use crate::sandbox::{Sandbox, SandboxState};

pub const DEFAULT_MAX_STEPS: u32 = 100;
pub const PARSE_FAILURE_BUDGET: u32 = 3;
const ELIDED: &str = "[observation elided to fit the context budget]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRunConfig {
    pub model_id: String,
    pub system_prompt: String,
    pub max_steps: u32,
    pub max_observation_chars: usize,
    pub exec_timeout_secs: u64,
    pub max_output_tokens: u32,
    pub temperature: f64,
    /// Prompt size (fallback tokenizer) above which the oldest observations
    /// are replaced by a marker in the request. The trajectory keeps them.
    pub context_budget_tokens: Option<u64>,
}

impl AgentRunConfig {
    pub fn new(model_id: impl Into<String>, system_prompt: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            system_prompt: system_prompt.into(),
            max_steps: DEFAULT_MAX_STEPS,
            max_observation_chars: 20_000,
            exec_timeout_secs: 120,
            max_output_tokens: 8192,
            temperature: 0.0,
            context_budget_tokens: Some(200_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStep {
    /// 1-based.
    pub index: u32,
    pub assistant_text: String,
    #[serde(default)]
    pub reasoning: String,
    /// `None` marks a parse failure.
    pub call: Option<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    /// Absent only for `finish`.
    pub observation: Option<String>,
    #[serde(default)]
    pub observation_truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Finished,
    StepLimit,
    ParseFailureLimit,
    GatewayError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub status: OutcomeStatus,
    pub steps_used: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Messages, steps and outcome of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRun {
    pub messages: Vec<ChatMessage>,
    pub steps: Vec<AgentStep>,
    pub outcome: AgentOutcome,
}

impl AgentRun {
    /// `2 + 2·steps − (1 if finished)`.
    pub fn expected_message_count(&self) -> usize {
        let finished = usize::from(self.outcome.status == OutcomeStatus::Finished);
        2 + 2 * self.steps.len() - finished
    }

    pub fn summary(&self) -> Option<&str> {
        match self.steps.last().and_then(|s| s.call.as_ref()) {
            Some(ToolCall::Finish { summary }) => Some(summary),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("sandbox {id} is {state:?}, not running")]
    NotRunning { id: String, state: SandboxState },
    #[error("max_steps must be at least 1")]
    ZeroSteps,
}

/// Keep the first line (the exit-code line for shell commands) and as much of
/// the head and tail of the rest as fits in `max_chars` characters.
pub fn truncate_observation(text: &str, max_chars: usize) -> (String, bool) {
    if text.chars().count() <= max_chars {
        return (text.to_string(), false);
    }
    let (first, rest) = match text.split_once('\n') {
        Some((f, r)) => (f, r),
        None => (text, ""),
    };
    let budget = max_chars.saturating_sub(first.chars().count() + 1);
    let rest_chars: Vec<char> = rest.chars().collect();
    let head = budget / 2;
    let tail = budget - head;
    let elided = rest_chars.len().saturating_sub(head + tail);
    let head_text: String = rest_chars[..head.min(rest_chars.len())].iter().collect();
    let tail_text: String = rest_chars[rest_chars.len().saturating_sub(tail)..].iter().collect();
    (
        format!("{first}\n{head_text}\n[... {elided} characters elided ...]\n{tail_text}"),
        true,
    )
}

fn bash_observation(sandbox: &mut dyn Sandbox, command: &str, timeout: Duration) -> (String, Option<i32>) {
    match sandbox.exec(command, timeout) {
        Ok(r) => {
            let mut obs = format!("[exit code: {}]\n", r.exit_code);
            if r.timed_out {
                obs.push_str(&format!("[timed out after {}s]\n", timeout.as_secs()));
            }
            obs.push_str(&r.stdout);
            if !r.stderr.is_empty() {
                if !obs.ends_with('\n') {
                    obs.push('\n');
                }
                obs.push_str("[stderr]\n");
                obs.push_str(&r.stderr);
            }
            (obs, Some(r.exit_code))
        }
        Err(e) => (format!("[error] {e}"), None),
    }
}

/// Run one call; `None` for `finish`.
pub fn execute(sandbox: &mut dyn Sandbox, call: &ToolCall, timeout: Duration) -> Option<(String, Option<i32>)> {
    Some(match call {
        ToolCall::Bash { command } => bash_observation(sandbox, command, timeout),
        ToolCall::FileRead { path, lines } => (edit::read_observation(sandbox, path, *lines), None),
        ToolCall::FileWrite { path, content } => (edit::write_observation(sandbox, path, content), None),
        ToolCall::StrReplaceEdit { path, old_text, new_text } => (apply_edit(sandbox, path, old_text, new_text), None),
        ToolCall::Finish { .. } => return None,
    })
}

/// Re-execute the recorded calls of a run (parse failures skipped).
pub fn replay_calls(sandbox: &mut dyn Sandbox, steps: &[AgentStep], timeout: Duration) {
    for call in steps.iter().filter_map(|s| s.call.as_ref()) {
        execute(sandbox, call, timeout);
    }
}

fn request_messages(messages: &[ChatMessage], budget: Option<u64>) -> Vec<ChatMessage> {
    let mut out = messages.to_vec();
    let Some(budget) = budget else { return out };
    let mut total: u64 = out.iter().map(|m| count_tokens(&m.content)).sum();
    for m in out.iter_mut() {
        if total <= budget {
            break;
        }
        if m.role == Role::Tool && m.content != ELIDED {
            total -= count_tokens(&m.content);
            m.content = ELIDED.to_string();
            total += count_tokens(ELIDED);
        }
    }
    out
}

pub fn run_agent(
    gateway: &Gateway,
    sandbox: &mut dyn Sandbox,
    task_prompt: &str,
    config: &AgentRunConfig,
) -> Result<AgentRun, AgentError> {
    if config.max_steps == 0 {
        return Err(AgentError::ZeroSteps);
    }
    if sandbox.state() != SandboxState::Running {
        return Err(AgentError::NotRunning {
            id: sandbox.id().to_string(),
            state: sandbox.state(),
        });
    }
    let timeout = Duration::from_secs(config.exec_timeout_secs);
    let mut messages = vec![ChatMessage::system(&config.system_prompt), ChatMessage::user(task_prompt)];
    let mut steps: Vec<AgentStep> = Vec::new();
    let mut failures = 0;
    let outcome = |status, steps: &[AgentStep], error| AgentOutcome {
        status,
        steps_used: steps.len() as u32,
        error,
    };

    let outcome = loop {
        if steps.len() as u32 >= config.max_steps {
            break outcome(OutcomeStatus::StepLimit, &steps, None);
        }
        let request = CompletionRequest::new(&config.model_id, request_messages(&messages, config.context_budget_tokens))
            .with_max_output_tokens(config.max_output_tokens)
            .with_temperature(config.temperature);
        let reply = match gateway.complete(&request) {
            Ok(r) => r,
            Err(e) => break outcome(OutcomeStatus::GatewayError, &steps, Some(e.to_string())),
        };
        let index = steps.len() as u32 + 1;
        messages.push(ChatMessage::assistant(&reply.content));
        let mut step = AgentStep {
            index,
            assistant_text: reply.content.clone(),
            reasoning: String::new(),
            call: None,
            parse_error: None,
            observation: None,
            observation_truncated: false,
            exit_code: None,
        };
        match parse_action(&reply.content) {
            Err(e) => {
                failures += 1;
                let obs = format!("[parse error] {e}");
                step.parse_error = Some(e.to_string());
                step.observation = Some(obs.clone());
                messages.push(ChatMessage::tool(obs));
                steps.push(step);
                if failures >= PARSE_FAILURE_BUDGET {
                    break outcome(OutcomeStatus::ParseFailureLimit, &steps, None);
                }
            }
            Ok(parsed) => {
                failures = 0;
                step.reasoning = parsed.reasoning;
                let result = execute(sandbox, &parsed.call, timeout);
                step.call = Some(parsed.call);
                match result {
                    None => {
                        steps.push(step);
                        break outcome(OutcomeStatus::Finished, &steps, None);
                    }
                    Some((obs, code)) => {
                        let (obs, truncated) = truncate_observation(&obs, config.max_observation_chars);
                        step.observation = Some(obs.clone());
                        step.observation_truncated = truncated;
                        step.exit_code = code;
                        messages.push(ChatMessage::tool(obs));
                        steps.push(step);
                    }
                }
            }
        }
    };
    Ok(AgentRun {
        messages,
        steps,
        outcome,
    })
}
