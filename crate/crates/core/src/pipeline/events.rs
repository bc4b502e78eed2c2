//! Append-only JSONL log of a project's state transitions and records.
//!
//! Each line is `{"seq", "time", "project", "event", ...}`; `seq` starts at 1
//! and `time` comes from the pipeline clock, so replayed runs write identical
//! logs.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, StageState};
use crate::clock::Clock;
use crate::plan::TaskId;
use crate::trajectory::TrajectoryKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    StateChanged {
        from: StageState,
        to: StageState,
    },
    TrajectoryRecorded {
        id: String,
        kind: TrajectoryKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task: Option<TaskId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reward: Option<u8>,
    },
    ChecklistWritten {
        task: TaskId,
        cases: usize,
    },
    TestsRejected {
        task: TaskId,
        attempt: u32,
        stage: String,
        reason: String,
    },
    TestsSnapshotted {
        task: TaskId,
        files: usize,
        suite_digest: String,
    },
    TaskVerified {
        task: TaskId,
        reward: u8,
        suite_digest: String,
        tests_match_snapshot: bool,
    },
    TaskFailed {
        task: TaskId,
        stage: String,
        reason: String,
    },
    TaskSkipped {
        task: TaskId,
        because: TaskId,
    },
    InstanceAccepted {
        kind: String,
        instance: String,
    },
    InstanceRejected {
        kind: String,
        instance: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub time: String,
    pub project: String,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    project: String,
    next_seq: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl EventLog {
    /// Open (or create) the log at `path`; numbering continues after the
    /// last existing record.
    pub fn open(path: impl Into<PathBuf>, project: impl Into<String>) -> Result<Self, PipelineError> {
        let path = path.into();
        let next_seq = read_events(&path)?.last().map_or(1, |r| r.seq + 1);
        Ok(Self {
            path,
            project: project.into(),
            next_seq,
        })
    }

    /// Sequence number the next record will get.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn append(&mut self, clock: &dyn Clock, event: Event) -> Result<u64, PipelineError> {
        let record = EventRecord {
            seq: self.next_seq,
            time: clock.rfc3339(self.next_seq),
            project: self.project.clone(),
            event,
        };
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut line = serde_json::to_vec(&record).expect("events serialize");
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        f.write_all(&line).map_err(io_err(&self.path))?;
        self.next_seq += 1;
        Ok(record.seq)
    }
}

/// Every record of a log file; a missing file is an empty log.
pub fn read_events(path: &Path) -> Result<Vec<EventRecord>, PipelineError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Corrupt {
                path: path.display().to_string(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::LogicalClock;

    #[test]
    fn numbering_continues_across_opens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let clock = LogicalClock::new();
        let mut log = EventLog::open(&path, "p").unwrap();
        let change = Event::StateChanged {
            from: StageState::Proposed,
            to: StageState::Planned,
        };
        assert_eq!(log.append(&clock, change.clone()).unwrap(), 1);
        let mut log = EventLog::open(&path, "p").unwrap();
        assert_eq!(log.append(&clock, change).unwrap(), 2);
        let records = read_events(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].time, "2025-01-01T00:00:02Z");
        let line = fs::read_to_string(&path).unwrap();
        assert!(line.starts_with(r#"{"seq":1,"time":"2025-01-01T00:00:01Z","project":"p","event":"state_changed","from":{"state":"proposed"},"to":{"state":"planned"}}"#));
    }
}
