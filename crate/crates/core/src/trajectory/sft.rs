//! Chat-format export for supervised fine-tuning.
//!
//! One JSON object per line: `{"id", "kind", "messages": [{"role", "content"}]}`
//! with the messages in recorded order (system, task, then assistant and
//! tool-observation turns). Records are ordered by id.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Trajectory, TrajectoryFilter, TrajectoryKind};
use crate::gateway::ChatMessage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub id: String,
    pub kind: TrajectoryKind,
    pub messages: Vec<ChatMessage>,
}

pub fn sft_records(trajectories: &[Trajectory], filter: &TrajectoryFilter) -> Vec<SftRecord> {
    let mut out: Vec<SftRecord> = trajectories
        .iter()
        .filter(|t| filter.matches(t))
        .map(|t| SftRecord {
            id: t.id.clone(),
            kind: t.kind,
            messages: t.messages.clone(),
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// Write matching records as JSONL; returns how many were written.
pub fn export_sft(trajectories: &[Trajectory], filter: &TrajectoryFilter, out: &mut impl Write) -> std::io::Result<usize> {
    let records = sft_records(trajectories, filter);
    for r in &records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(records.len())
}
