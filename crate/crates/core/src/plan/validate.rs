use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{topological_order, PlanError, TaskId, TaskPlan};

pub const MAX_PHASES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanViolation {
    PhaseCount { found: usize },
    Numbering { expected: String, found: String },
    DuplicateTask { task: TaskId },
    UnknownDependency { task: TaskId, dependency: TaskId },
    /// Dependency on a task that appears later in the document (or itself).
    ForwardDependency { task: TaskId, dependency: TaskId },
    Cycle { tasks: Vec<TaskId> },
    NoTests { task: TaskId },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PhaseCount { found } => write!(f, "phase-count: {found} phases, at most {MAX_PHASES} allowed"),
            Self::Numbering { expected, found } => write!(f, "numbering: expected {expected}, found {found}"),
            Self::DuplicateTask { task } => write!(f, "duplicate task {task}"),
            Self::UnknownDependency { task, dependency } => {
                write!(f, "task {task} depends on unknown task {dependency}")
            }
            Self::ForwardDependency { task, dependency } => {
                write!(f, "task {task} depends on {dependency}, which is not listed before it")
            }
            Self::Cycle { tasks } => {
                let ids: Vec<String> = tasks.iter().map(ToString::to_string).collect();
                write!(f, "cycle: dependency cycle among {}", ids.join(", "))
            }
            Self::NoTests { task } => write!(f, "task {task} has no tests and is not marked N/A"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanReport {
    pub violations: Vec<PlanViolation>,
}

impl PlanReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_plan(plan: &TaskPlan) -> PlanReport {
    let mut violations = Vec::new();
    if plan.phases.len() > MAX_PHASES {
        violations.push(PlanViolation::PhaseCount {
            found: plan.phases.len(),
        });
    }
    for (pi, phase) in plan.phases.iter().enumerate() {
        let expected = pi as u32 + 1;
        if phase.number != expected {
            violations.push(PlanViolation::Numbering {
                expected: format!("phase {expected}"),
                found: format!("phase {}", phase.number),
            });
        }
        for (mi, module) in phase.modules.iter().enumerate() {
            let expected = mi as u32 + 1;
            if module.number != expected {
                violations.push(PlanViolation::Numbering {
                    expected: format!("module {}.{expected}", phase.number),
                    found: format!("module {}.{}", phase.number, module.number),
                });
            }
            for (ti, task) in module.tasks.iter().enumerate() {
                let expected = TaskId::new(phase.number, module.number, ti as u32 + 1);
                if task.id != expected {
                    violations.push(PlanViolation::Numbering {
                        expected: format!("task {expected}"),
                        found: format!("task {}", task.id),
                    });
                }
            }
        }
    }

    let mut position: BTreeMap<TaskId, usize> = BTreeMap::new();
    for (i, task) in plan.tasks().enumerate() {
        if position.insert(task.id, i).is_some() {
            violations.push(PlanViolation::DuplicateTask { task: task.id });
        }
    }
    for (i, task) in plan.tasks().enumerate() {
        let mut seen = BTreeSet::new();
        for &dep in &task.dependencies {
            if !seen.insert(dep) {
                continue;
            }
            match position.get(&dep) {
                None => violations.push(PlanViolation::UnknownDependency {
                    task: task.id,
                    dependency: dep,
                }),
                Some(&p) if p >= i => violations.push(PlanViolation::ForwardDependency {
                    task: task.id,
                    dependency: dep,
                }),
                Some(_) => {}
            }
        }
        if !task.tests_na && task.code_tests.is_empty() && task.visual_tests.is_empty() {
            violations.push(PlanViolation::NoTests { task: task.id });
        }
    }
    if !violations
        .iter()
        .any(|v| matches!(v, PlanViolation::UnknownDependency { .. }))
    {
        if let Err(PlanError::Cycle(tasks)) = topological_order(plan) {
            violations.push(PlanViolation::Cycle { tasks });
        }
    }
    PlanReport { violations }
}
