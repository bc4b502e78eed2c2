//! Trajectory records, persistence, statistics and fine-tuning export.

pub mod sft;
pub mod stats;
pub mod store;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentOutcome, AgentRun, AgentStep, OutcomeStatus};
use crate::gateway::ChatMessage;
use crate::sandbox::vcs::DiffStats;

pub use sft::{export_sft, SftRecord};
pub use stats::{aggregate, compute_stats, render_report, render_table, AggregateStats, DatasetManifest, TrajectoryStats, REPORT_LABELS};
pub use store::TrajectoryStore;

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Setup,
    TestGen,
    Implement,
    IssueInject,
    Blind,
    General,
    IssueResolution,
    IssueReproduction,
    LibraryGeneration,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 9] = [
        TrajectoryKind::Setup,
        TrajectoryKind::TestGen,
        TrajectoryKind::Implement,
        TrajectoryKind::IssueInject,
        TrajectoryKind::Blind,
        TrajectoryKind::General,
        TrajectoryKind::IssueResolution,
        TrajectoryKind::IssueReproduction,
        TrajectoryKind::LibraryGeneration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrajectoryKind::Setup => "setup",
            TrajectoryKind::TestGen => "test_gen",
            TrajectoryKind::Implement => "implement",
            TrajectoryKind::IssueInject => "issue_inject",
            TrajectoryKind::Blind => "blind",
            TrajectoryKind::General => "general",
            TrajectoryKind::IssueResolution => "issue_resolution",
            TrajectoryKind::IssueReproduction => "issue_reproduction",
            TrajectoryKind::LibraryGeneration => "library_generation",
        }
    }

    /// Runs that solve a task, as opposed to runs that build one.
    pub fn is_task_solving(self) -> bool {
        !matches!(
            self,
            TrajectoryKind::Setup | TrajectoryKind::TestGen | TrajectoryKind::IssueInject | TrajectoryKind::Blind
        )
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown trajectory kind `{s}`"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub project: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema_version: u32,
    pub id: String,
    pub kind: TrajectoryKind,
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub steps: Vec<AgentStep>,
    pub final_diff: DiffStats,
    /// 0 or 1 when the run was verified.
    pub reward: Option<u8>,
    pub outcome: AgentOutcome,
    pub provenance: Provenance,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("trajectory {id}: {count} messages, but {steps} steps with outcome {status:?} require {expected}")]
    Bookkeeping {
        id: String,
        count: usize,
        steps: usize,
        status: OutcomeStatus,
        expected: usize,
    },
    #[error("trajectory {id}: reward must be 0 or 1, got {reward}")]
    Reward { id: String, reward: u8 },
    #[error("trajectory {id}: outcome reports {reported} steps but {actual} are recorded")]
    StepCount { id: String, reported: u32, actual: usize },
    #[error("trajectory id must be non-empty and free of whitespace")]
    BadId,
}

impl Trajectory {
    pub fn from_run(
        id: impl Into<String>,
        kind: TrajectoryKind,
        model_id: impl Into<String>,
        run: AgentRun,
        final_diff: DiffStats,
        reward: Option<u8>,
        provenance: Provenance,
    ) -> Self {
        Self {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            id: id.into(),
            kind,
            model_id: model_id.into(),
            messages: run.messages,
            steps: run.steps,
            final_diff,
            reward,
            outcome: run.outcome,
            provenance,
        }
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.id.is_empty() || self.id.chars().any(char::is_whitespace) {
            return Err(TrajectoryError::BadId);
        }
        if self.outcome.steps_used as usize != self.steps.len() {
            return Err(TrajectoryError::StepCount {
                id: self.id.clone(),
                reported: self.outcome.steps_used,
                actual: self.steps.len(),
            });
        }
        let finished = usize::from(self.outcome.status == OutcomeStatus::Finished);
        let expected = 2 + 2 * self.steps.len() - finished;
        if self.messages.len() != expected {
            return Err(TrajectoryError::Bookkeeping {
                id: self.id.clone(),
                count: self.messages.len(),
                steps: self.steps.len(),
                status: self.outcome.status,
                expected,
            });
        }
        if let Some(r) = self.reward {
            if r > 1 {
                return Err(TrajectoryError::Reward { id: self.id.clone(), reward: r });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardFilter {
    #[default]
    Any,
    /// Unverified or rewarded.
    AbsentOrOne,
    One,
}

/// Selection over stored trajectories. `None` fields do not constrain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinds: Option<BTreeSet<TrajectoryKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statuses: Option<BTreeSet<OutcomeStatus>>,
    #[serde(default)]
    pub reward: RewardFilter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<String>,
}

impl TrajectoryFilter {
    pub fn all() -> Self {
        Self::default()
    }

    /// Finished, not failed verification, and of a task-solving kind.
    pub fn default_sft() -> Self {
        Self {
            kinds: Some(TrajectoryKind::ALL.into_iter().filter(|k| k.is_task_solving()).collect()),
            statuses: Some([OutcomeStatus::Finished].into_iter().collect()),
            reward: RewardFilter::AbsentOrOne,
            project: None,
        }
    }

    pub fn with_kinds(mut self, kinds: impl IntoIterator<Item = TrajectoryKind>) -> Self {
        self.kinds = Some(kinds.into_iter().collect());
        self
    }

    pub fn matches(&self, t: &Trajectory) -> bool {
        self.kinds.as_ref().is_none_or(|k| k.contains(&t.kind))
            && self.statuses.as_ref().is_none_or(|s| s.contains(&t.outcome.status))
            && match self.reward {
                RewardFilter::Any => true,
                RewardFilter::AbsentOrOne => t.reward.is_none_or(|r| r == 1),
                RewardFilter::One => t.reward == Some(1),
            }
            && self.project.as_ref().is_none_or(|p| *p == t.provenance.project)
    }
}
