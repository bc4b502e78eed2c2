//! Per-task unit-test checklists (`checklists/X.Y.Z.md`).
//!
//! ```text
//! ## Test Case N: Name
//! **Purpose:** ...
//! ### Test Scenarios
//! 1. **Happy Path Cases:**      (also "Normal/Happy Path")
//!    - ...
//! 2. **Edge Cases / Boundaries:**
//! 3. **Error Handling:**        (also "Error Handling / Exception Cases")
//! ### Assertions
//! - ...
//! ```
//!
//! Text after a `**Note:**` line, `---` separators and anything outside a
//! test case is ignored. The verbatim source is kept in [`TestChecklist::source`].

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TaskId;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenarios {
    pub happy: Vec<String>,
    pub edge: Vec<String>,
    pub error: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub name: String,
    pub purpose: String,
    pub scenarios: Scenarios,
    pub assertions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestChecklist {
    pub task_id: TaskId,
    pub cases: Vec<TestCase>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChecklistError {
    #[error("checklist for task {0} contains no test cases")]
    Empty(TaskId),
    #[error("checklist for task {task}: test case {case:?} has no assertions")]
    NoAssertions { task: TaskId, case: String },
    #[error("task {0} has no tests to write a checklist for")]
    NoTests(TaskId),
}

fn case_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^#{2,3}\s+Test Case\s+\d+\s*:\s*(.+?)\s*$").unwrap())
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:\d+\.\s*)?\*\*(.+?):?\*\*:?\s*(.*)$").unwrap())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Outside,
    Purpose,
    Scenarios,
    Happy,
    Edge,
    Error,
    Assertions,
    Ignore,
}

fn scenario_kind(label: &str) -> Option<Mode> {
    let l = label.to_ascii_lowercase();
    if l.contains("happy") || l.contains("normal") {
        Some(Mode::Happy)
    } else if l.contains("edge") || l.contains("boundar") {
        Some(Mode::Edge)
    } else if l.contains("error") || l.contains("exception") || l.contains("failure") {
        Some(Mode::Error)
    } else {
        None
    }
}

pub fn parse_checklist(task_id: TaskId, text: &str) -> Result<TestChecklist, ChecklistError> {
    let mut cases: Vec<TestCase> = Vec::new();
    let mut mode = Mode::Outside;
    for raw in text.lines() {
        let line = raw.trim();
        if let Some(c) = case_re().captures(line) {
            cases.push(TestCase {
                name: c[1].to_string(),
                purpose: String::new(),
                scenarios: Scenarios::default(),
                assertions: Vec::new(),
            });
            mode = Mode::Outside;
            continue;
        }
        let Some(case) = cases.last_mut() else {
            continue;
        };
        if line.is_empty() || line == "---" {
            if mode == Mode::Purpose && !case.purpose.is_empty() {
                mode = Mode::Outside;
            }
            continue;
        }
        if let Some(heading) = line.strip_prefix('#').map(|h| h.trim_start_matches('#').trim()) {
            let h = heading.to_ascii_lowercase();
            mode = if h.contains("assertion") {
                Mode::Assertions
            } else if h.contains("scenario") {
                Mode::Scenarios
            } else {
                Mode::Ignore
            };
            continue;
        }
        if let Some(c) = label_re().captures(line) {
            let label = c[1].trim();
            let rest = c[2].trim();
            if label.eq_ignore_ascii_case("purpose") {
                case.purpose = rest.to_string();
                mode = Mode::Purpose;
                continue;
            }
            if label.eq_ignore_ascii_case("note") {
                mode = Mode::Ignore;
                continue;
            }
            if matches!(mode, Mode::Scenarios | Mode::Happy | Mode::Edge | Mode::Error) {
                if let Some(kind) = scenario_kind(label) {
                    mode = kind;
                    continue;
                }
            }
        }
        let item = line
            .strip_prefix("- ")
            .or_else(|| line.strip_prefix("* "))
            .map(str::trim);
        match (mode, item) {
            (Mode::Purpose, _) => {
                if !case.purpose.is_empty() {
                    case.purpose.push(' ');
                }
                case.purpose.push_str(line);
            }
            (Mode::Happy, Some(i)) => case.scenarios.happy.push(i.to_string()),
            (Mode::Edge, Some(i)) => case.scenarios.edge.push(i.to_string()),
            (Mode::Error, Some(i)) => case.scenarios.error.push(i.to_string()),
            (Mode::Assertions, Some(i)) => case.assertions.push(i.to_string()),
            _ => {}
        }
    }
    if cases.is_empty() {
        return Err(ChecklistError::Empty(task_id));
    }
    if let Some(case) = cases.iter().find(|c| c.assertions.is_empty()) {
        return Err(ChecklistError::NoAssertions {
            task: task_id,
            case: case.name.clone(),
        });
    }
    Ok(TestChecklist {
        task_id,
        cases,
        source: text.to_string(),
    })
}

/// Earlier checklists, verbatim, for the `previous_unit_tests` placeholder.
pub fn checklist_prompt_history(previous: &[TestChecklist]) -> String {
    if previous.is_empty() {
        return "None yet.".to_string();
    }
    previous
        .iter()
        .map(|c| format!("### Checklist for Task {}\n\n{}", c.task_id, c.source.trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n")
}
