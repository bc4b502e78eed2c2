//! Hierarchical task plans: phases → modules → tasks.
//!
//! The on-disk form (`tasks.md`) is a markdown document with a fixed heading
//! grammar:
//!
//! ```text
//! # Project Description
//! # Project Instruction
//! # Detailed Documentation
//! ## Phase X: Name
//! **Goal:** ...
//! ### Module X.Y: Name
//! #### Task X.Y.Z: Title
//! - **Description:** ...
//! - **Dependencies:** None | X.Y.Z, ...
//! - **Difficulty:** N/5
//! - **Unit Tests:**
//!   - **Code Tests:**            (or `**Code Tests:** N/A`)
//!     - **TestName:** purpose
//!   - **Visual Tests:**          (parsed, never executed)
//! ```
//!
//! [`render`] writes exactly this grammar, and `parse_plan(render(p)) == p`.

mod checklist;
mod generate;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checklist::{
    checklist_prompt_history, parse_checklist, ChecklistError, Scenarios, TestCase, TestChecklist,
};
pub use generate::{extract_tasks_block, GenerateError, PlanGenerator};
pub use validate::{validate_plan, PlanReport, PlanViolation, MAX_PHASES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId {
    pub phase: u32,
    pub module: u32,
    pub task: u32,
}

impl TaskId {
    pub const fn new(phase: u32, module: u32, task: u32) -> Self {
        Self {
            phase,
            module,
            task,
        }
    }

    /// `1.1.1` → `1_1_1`, as used in test file names.
    pub fn underscored(&self) -> String {
        format!("{}_{}_{}", self.phase, self.module, self.task)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.phase, self.module, self.task)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed task id {0:?}")]
pub struct TaskIdError(pub String);

impl FromStr for TaskId {
    type Err = TaskIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TaskIdError(s.to_string());
        let parts: Vec<&str> = s.trim().split('.').collect();
        if parts.len() != 3 {
            return Err(err());
        }
        let mut nums = [0u32; 3];
        for (slot, part) in nums.iter_mut().zip(&parts) {
            if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            *slot = part.parse().map_err(|_| err())?;
            if *slot == 0 {
                return Err(err());
            }
        }
        Ok(Self::new(nums[0], nums[1], nums[2]))
    }
}

impl Serialize for TaskId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedTest {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub title: String,
    pub description: String,
    pub dependencies: Vec<TaskId>,
    pub difficulty: u8,
    pub code_tests: Vec<NamedTest>,
    /// Stored for completeness; never executed.
    pub visual_tests: Vec<NamedTest>,
    pub tests_na: bool,
}

impl TaskSpec {
    pub fn has_tests(&self) -> bool {
        !self.tests_na && !self.code_tests.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanModule {
    pub number: u32,
    pub name: String,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub number: u32,
    pub name: String,
    pub goal: String,
    pub modules: Vec<PlanModule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub project_description: String,
    pub project_instruction: String,
    pub phases: Vec<Phase>,
}

impl TaskPlan {
    /// Tasks in document order.
    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.phases
            .iter()
            .flat_map(|p| p.modules.iter())
            .flat_map(|m| m.tasks.iter())
    }

    pub fn task(&self, id: TaskId) -> Option<&TaskSpec> {
        self.tasks().find(|t| t.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    MalformedTaskId {
        line: usize,
        #[source]
        source: TaskIdError,
    },
    #[error("task {task}: missing required field {field}")]
    MissingField { task: TaskId, field: &'static str },
    #[error("task {task}: difficulty {value} outside 1..=5")]
    DifficultyRange { task: TaskId, value: String },
    #[error("task {task} depends on unknown task {dependency}")]
    UnknownDependency { task: TaskId, dependency: TaskId },
    #[error("dependency cycle among tasks {}", join_ids(.0))]
    Cycle(Vec<TaskId>),
}

fn join_ids(ids: &[TaskId]) -> String {
    ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanWarnings(pub Vec<String>);

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).unwrap())
}

fn phase_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"^##\s+Phase\s+(\d+)\s*:\s*(.*?)\s*$")
}

fn module_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"^###\s+Module\s+([0-9.]+)\s*:\s*(.*?)\s*$")
}

fn task_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"^####\s+Task\s+([0-9.]+)\s*:\s*(.*?)\s*$")
}

/// `- **Label:** value` at any indentation; group 1 is the indent.
fn field_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"^(\s*)[-*]\s+\*\*(.+?):\*\*\s*(.*?)\s*$")
}

fn goal_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"^\*\*Goal:\*\*\s*(.*?)\s*$")
}

fn difficulty_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"^(-?\d+)\s*/\s*5$")
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Preamble,
    Description,
    Instruction,
    Documentation,
    Unknown,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum TestList {
    None,
    Code,
    Visual,
}

struct TaskBuilder {
    id: TaskId,
    title: String,
    description: Option<String>,
    dependencies: Option<Vec<TaskId>>,
    difficulty: Option<u8>,
    code_tests: Vec<NamedTest>,
    visual_tests: Vec<NamedTest>,
    na: bool,
    list: TestList,
    last_field_description: bool,
}

impl TaskBuilder {
    fn finish(self) -> Result<TaskSpec, PlanError> {
        let task = self.id;
        let description = self.description.ok_or(PlanError::MissingField {
            task,
            field: "Description",
        })?;
        let dependencies = self.dependencies.ok_or(PlanError::MissingField {
            task,
            field: "Dependencies",
        })?;
        let difficulty = self.difficulty.ok_or(PlanError::MissingField {
            task,
            field: "Difficulty",
        })?;
        let tests_na = self.na && self.code_tests.is_empty() && self.visual_tests.is_empty();
        Ok(TaskSpec {
            id: task,
            title: self.title,
            description,
            dependencies,
            difficulty,
            code_tests: self.code_tests,
            visual_tests: self.visual_tests,
            tests_na,
        })
    }
}

fn is_na(value: &str) -> bool {
    matches!(
        value.trim().trim_end_matches('.').to_ascii_lowercase().as_str(),
        "n/a" | "na" | "none"
    )
}

fn parse_dependencies(value: &str, line: usize) -> Result<Vec<TaskId>, PlanError> {
    let value = value.trim().trim_end_matches('.');
    if value.is_empty() || is_na(value) || value == "-" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| {
            let part = part.trim().trim_start_matches("Task").trim();
            part.parse()
                .map_err(|source| PlanError::MalformedTaskId { line, source })
        })
        .collect()
}

fn parse_difficulty(task: TaskId, value: &str) -> Result<u8, PlanError> {
    let range_err = || PlanError::DifficultyRange {
        task,
        value: value.to_string(),
    };
    let caps = difficulty_re().captures(value.trim()).ok_or_else(range_err)?;
    let n: i64 = caps[1].parse().map_err(|_| range_err())?;
    if (1..=5).contains(&n) {
        Ok(n as u8)
    } else {
        Err(range_err())
    }
}

fn push_paragraph(target: &mut String, line: &str) {
    if line.trim().is_empty() {
        if !target.is_empty() && !target.ends_with("\n\n") {
            target.push_str("\n\n");
        }
    } else {
        if !target.is_empty() && !target.ends_with('\n') {
            target.push('\n');
        }
        target.push_str(line.trim_end());
    }
}

pub fn parse_plan(text: &str) -> Result<TaskPlan, PlanError> {
    parse_plan_with_warnings(text).map(|(p, _)| p)
}

/// Parse a plan document. Unknown sections and fields are skipped and
/// reported as warnings.
pub fn parse_plan_with_warnings(text: &str) -> Result<(TaskPlan, PlanWarnings), PlanError> {
    let mut warnings = PlanWarnings::default();
    let mut description = String::new();
    let mut instruction = String::new();
    let mut phases: Vec<Phase> = Vec::new();
    let mut section = Section::Preamble;
    let mut current: Option<TaskBuilder> = None;

    fn flush(current: &mut Option<TaskBuilder>, phases: &mut [Phase]) -> Result<(), PlanError> {
        if let Some(builder) = current.take() {
            let spec = builder.finish()?;
            let module = phases
                .last_mut()
                .and_then(|p| p.modules.last_mut())
                .expect("task builders are only created inside a module");
            module.tasks.push(spec);
        }
        Ok(())
    }

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        let trimmed = line.trim_start();

        if let Some(title) = trimmed.strip_prefix("# ") {
            flush(&mut current, &mut phases)?;
            section = match title.trim() {
                "Project Description" => Section::Description,
                "Project Instruction" => Section::Instruction,
                "Detailed Documentation" => Section::Documentation,
                other => {
                    warnings.0.push(format!("line {line_no}: ignoring unknown section {other:?}"));
                    Section::Unknown
                }
            };
            continue;
        }

        match section {
            Section::Preamble => {
                if !trimmed.is_empty() {
                    warnings.0.push(format!("line {line_no}: ignoring text before the first section"));
                }
                continue;
            }
            Section::Unknown => continue,
            Section::Description => {
                push_paragraph(&mut description, line);
                continue;
            }
            Section::Instruction => {
                push_paragraph(&mut instruction, line);
                continue;
            }
            Section::Documentation => {}
        }

        if let Some(c) = phase_re().captures(trimmed) {
            flush(&mut current, &mut phases)?;
            let number = c[1].parse().map_err(|_| PlanError::Syntax {
                line: line_no,
                message: format!("bad phase number {:?}", &c[1]),
            })?;
            phases.push(Phase {
                number,
                name: c[2].to_string(),
                goal: String::new(),
                modules: Vec::new(),
            });
            continue;
        }
        if let Some(c) = module_re().captures(trimmed) {
            flush(&mut current, &mut phases)?;
            let syntax = |message: String| PlanError::Syntax {
                line: line_no,
                message,
            };
            let (p, m) = c[1]
                .split_once('.')
                .and_then(|(p, m)| Some((p.parse::<u32>().ok()?, m.parse::<u32>().ok()?)))
                .ok_or_else(|| syntax(format!("malformed module number {:?}", &c[1])))?;
            let phase = phases
                .last_mut()
                .ok_or_else(|| syntax("module outside of a phase".into()))?;
            if p != phase.number {
                return Err(syntax(format!("module {p}.{m} placed under phase {}", phase.number)));
            }
            phase.modules.push(PlanModule {
                number: m,
                name: c[2].to_string(),
                tasks: Vec::new(),
            });
            continue;
        }
        if let Some(c) = task_re().captures(trimmed) {
            flush(&mut current, &mut phases)?;
            let id: TaskId = c[1]
                .parse()
                .map_err(|source| PlanError::MalformedTaskId {
                    line: line_no,
                    source,
                })?;
            let (phase_no, module_no) = phases
                .last()
                .and_then(|p| Some((p.number, p.modules.last()?.number)))
                .ok_or_else(|| PlanError::Syntax {
                    line: line_no,
                    message: format!("task {id} outside of a module"),
                })?;
            if (id.phase, id.module) != (phase_no, module_no) {
                return Err(PlanError::Syntax {
                    line: line_no,
                    message: format!("task {id} placed under module {phase_no}.{module_no}"),
                });
            }
            current = Some(TaskBuilder {
                id,
                title: c[2].to_string(),
                description: None,
                dependencies: None,
                difficulty: None,
                code_tests: Vec::new(),
                visual_tests: Vec::new(),
                na: false,
                list: TestList::None,
                last_field_description: false,
            });
            continue;
        }
        if let Some(c) = goal_re().captures(trimmed) {
            match (phases.last_mut(), &current) {
                (Some(phase), None) if phase.modules.is_empty() => phase.goal = c[1].to_string(),
                _ => warnings.0.push(format!("line {line_no}: stray goal line ignored")),
            }
            continue;
        }
        if trimmed.is_empty() || trimmed == "---" {
            if let Some(b) = current.as_mut() {
                b.last_field_description = false;
            }
            continue;
        }

        let Some(builder) = current.as_mut() else {
            warnings.0.push(format!("line {line_no}: ignoring text outside of a task"));
            continue;
        };
        let Some(c) = field_re().captures(line) else {
            if builder.last_field_description {
                let d = builder.description.get_or_insert_with(String::new);
                d.push(' ');
                d.push_str(trimmed);
            } else {
                warnings.0.push(format!("line {line_no}: ignoring unrecognized line in task {}", builder.id));
            }
            continue;
        };
        builder.last_field_description = false;
        let indent = c[1].len();
        let label = c[2].trim();
        let value = c[3].trim();
        if indent == 0 {
            builder.list = TestList::None;
            match label {
                "Description" => {
                    builder.description = Some(value.to_string());
                    builder.last_field_description = true;
                }
                "Dependencies" => builder.dependencies = Some(parse_dependencies(value, line_no)?),
                "Difficulty" => builder.difficulty = Some(parse_difficulty(builder.id, value)?),
                "Unit Tests" => {
                    if is_na(value) {
                        builder.na = true;
                    }
                }
                other => warnings.0.push(format!(
                    "line {line_no}: ignoring unknown field {other:?} in task {}",
                    builder.id
                )),
            }
            continue;
        }
        match label {
            "Code Tests" | "Visual Tests" if builder.list == TestList::None || indent <= 2 => {
                builder.list = if label == "Code Tests" {
                    TestList::Code
                } else {
                    TestList::Visual
                };
                if is_na(value) {
                    builder.na = true;
                }
            }
            name => {
                let test = NamedTest {
                    name: name.to_string(),
                    description: value.to_string(),
                };
                match builder.list {
                    TestList::Code => builder.code_tests.push(test),
                    TestList::Visual => builder.visual_tests.push(test),
                    TestList::None => warnings.0.push(format!(
                        "line {line_no}: test {name:?} outside a test list in task {}",
                        builder.id
                    )),
                }
            }
        }
    }
    flush(&mut current, &mut phases)?;
    if phases.is_empty() {
        return Err(PlanError::Syntax {
            line: text.lines().count().max(1),
            message: "no phases found".into(),
        });
    }
    for t in phases.iter().flat_map(|p| &p.modules).flat_map(|m| &m.tasks) {
        if !t.visual_tests.is_empty() {
            warnings.0.push(format!("task {}: visual tests are stored but never executed", t.id));
        }
    }
    Ok((
        TaskPlan {
            project_description: description.trim().to_string(),
            project_instruction: instruction.trim().to_string(),
            phases,
        },
        warnings,
    ))
}

fn render_tests(out: &mut String, label: &str, tests: &[NamedTest]) {
    out.push_str(&format!("  - **{label}:**\n"));
    for t in tests {
        out.push_str(&format!("    - **{}:** {}\n", t.name, t.description));
    }
}

/// Render one task section (heading plus fields).
pub fn render_task(task: &TaskSpec) -> String {
    let mut out = format!("#### Task {}: {}\n\n", task.id, task.title);
    out.push_str(&format!("- **Description:** {}\n", task.description));
    let deps = if task.dependencies.is_empty() {
        "None".to_string()
    } else {
        join_ids(&task.dependencies)
    };
    out.push_str(&format!("- **Dependencies:** {deps}\n"));
    out.push_str(&format!("- **Difficulty:** {}/5\n", task.difficulty));
    out.push_str("- **Unit Tests:**\n");
    if task.tests_na {
        out.push_str("  - **Code Tests:** N/A\n");
    } else {
        render_tests(&mut out, "Code Tests", &task.code_tests);
        if !task.visual_tests.is_empty() {
            render_tests(&mut out, "Visual Tests", &task.visual_tests);
        }
    }
    out
}

/// Write the canonical `tasks.md` form.
pub fn render(plan: &TaskPlan) -> String {
    let mut out = String::new();
    out.push_str("# Project Description\n\n");
    out.push_str(&plan.project_description);
    out.push_str("\n\n# Project Instruction\n\n");
    out.push_str(&plan.project_instruction);
    out.push_str("\n\n# Detailed Documentation\n");
    for phase in &plan.phases {
        out.push_str(&format!("\n## Phase {}: {}\n\n", phase.number, phase.name));
        if !phase.goal.is_empty() {
            out.push_str(&format!("**Goal:** {}\n\n", phase.goal));
        }
        for (mi, module) in phase.modules.iter().enumerate() {
            if mi > 0 {
                out.push('\n');
            }
            out.push_str(&format!("### Module {}.{}: {}\n", phase.number, module.number, module.name));
            for task in &module.tasks {
                out.push('\n');
                out.push_str(&render_task(task));
            }
        }
    }
    out
}

/// Dependency-respecting order; among ready tasks the smallest id goes first.
pub fn topological_order(plan: &TaskPlan) -> Result<Vec<TaskId>, PlanError> {
    let tasks: BTreeMap<TaskId, &TaskSpec> = plan.tasks().map(|t| (t.id, t)).collect();
    let mut indegree: BTreeMap<TaskId, usize> = tasks.keys().map(|&id| (id, 0)).collect();
    let mut dependents: BTreeMap<TaskId, Vec<TaskId>> = BTreeMap::new();
    for task in tasks.values() {
        let deps: BTreeSet<TaskId> = task.dependencies.iter().copied().collect();
        for dep in deps {
            if !tasks.contains_key(&dep) {
                return Err(PlanError::UnknownDependency {
                    task: task.id,
                    dependency: dep,
                });
            }
            *indegree.get_mut(&task.id).unwrap() += 1;
            dependents.entry(dep).or_default().push(task.id);
        }
    }
    let mut ready: BTreeSet<TaskId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&id, _)| id)
        .collect();
    let mut order = Vec::with_capacity(tasks.len());
    while let Some(id) = ready.pop_first() {
        order.push(id);
        for next in dependents.get(&id).into_iter().flatten() {
            let d = indegree.get_mut(next).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert(*next);
            }
        }
    }
    if order.len() != tasks.len() {
        let stuck = indegree
            .into_iter()
            .filter(|(id, _)| !order.contains(id))
            .map(|(id, _)| id)
            .collect();
        return Err(PlanError::Cycle(stuck));
    }
    Ok(order)
}
