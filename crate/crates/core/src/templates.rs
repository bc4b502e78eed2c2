//! Prompt templates with `{{ name }}` placeholders.
//!
//! Templates are plain text files laid out as `<group>/<name>.txt` (the
//! container template is `docker/python.Dockerfile`). The files shipped in
//! `crates/core/templates/` are compiled in as the builtin set; a directory
//! passed to [`TemplateSet::load_dir`] overrides any subset of them.
//!
//! Placeholders:
//!
//! | template | placeholders |
//! |---|---|
//! | `proposal/system` | `requirements`, `language` |
//! | `proposal/user` | `num_projects`, `language` |
//! | `proposal/continue` | `num_projects`, `response` |
//! | `plan/user` | `project_description`, `constraints` |
//! | `plan/continue` | `project_description`, `constraints`, `response` |
//! | `checklist/user` | `project_description`, `tasks_prompt`, `previous_unit_tests`, `unit_test_prompt` |
//! | `agent/system` | `workdir` |
//! | `setup/task` | `project_description`, `constraints` |
//! | `testgen/task` | `project_task`, `task_number`, `unit_test_prompt`, `test_file`, `test_script` |
//! | `implement/{after_attempt,always,never}` | `task_number`, `task_description`, `constraints` |
//! | `issue/user` | `project_description`, `test_prompt`, `test_code` |
//! | `inject/task`, `blind/task` | `issue_description`, `project_description`, `task_number`, `task_description` |
//! | `solve/*` | `problem_statement` |

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unknown template {0}")]
    Unknown(String),
    #[error("template {template} needs a value for placeholder {placeholder}")]
    MissingVariable { template: String, placeholder: String },
    #[error("cannot read template directory {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

macro_rules! builtin {
    ($($name:literal => $file:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../templates/", $file)))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin! {
    "proposal/system" => "proposal/system.txt",
    "proposal/user" => "proposal/user.txt",
    "proposal/continue" => "proposal/continue.txt",
    "plan/system" => "plan/system.txt",
    "plan/user" => "plan/user.txt",
    "plan/continue" => "plan/continue.txt",
    "checklist/system" => "checklist/system.txt",
    "checklist/user" => "checklist/user.txt",
    "agent/system" => "agent/system.txt",
    "setup/task" => "setup/task.txt",
    "testgen/task" => "testgen/task.txt",
    "implement/after_attempt" => "implement/after_attempt.txt",
    "implement/always" => "implement/always.txt",
    "implement/never" => "implement/never.txt",
    "issue/system" => "issue/system.txt",
    "issue/user" => "issue/user.txt",
    "inject/task" => "inject/task.txt",
    "blind/task" => "blind/task.txt",
    "solve/issue_resolution" => "solve/issue_resolution.txt",
    "solve/issue_reproduction" => "solve/issue_reproduction.txt",
    "solve/library_generation" => "solve/library_generation.txt",
    "docker/python" => "docker/python.Dockerfile",
};

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    entries: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            entries: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Builtin set overlaid with every known template found under `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let mut set = Self::builtin();
        for (name, _) in BUILTIN {
            let file = if *name == "docker/python" {
                dir.join("docker/python.Dockerfile")
            } else {
                dir.join(format!("{name}.txt"))
            };
            match fs::read_to_string(&file) {
                Ok(text) => {
                    set.entries.insert(name.to_string(), text);
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => {
                    return Err(TemplateError::Io {
                        path: file.display().to_string(),
                        source,
                    })
                }
            }
        }
        Ok(set)
    }

    pub fn insert(&mut self, name: impl Into<String>, text: impl Into<String>) {
        self.entries.insert(name.into(), text.into());
    }

    pub fn raw(&self, name: &str) -> Result<&str, TemplateError> {
        self.entries
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| TemplateError::Unknown(name.to_string()))
    }

    /// Placeholder names used by a template, sorted.
    pub fn placeholders(&self, name: &str) -> Result<BTreeSet<String>, TemplateError> {
        let text = self.raw(name)?;
        Ok(placeholder_re()
            .captures_iter(text)
            .map(|c| c[1].to_string())
            .collect())
    }

    /// Substitute every placeholder in one pass. Substituted values are not
    /// scanned again, so a value may itself contain `{{ ... }}`.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let text = self.raw(name)?;
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for caps in placeholder_re().captures_iter(text) {
            let whole = caps.get(0).unwrap();
            let key = &caps[1];
            let value = vars
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::MissingVariable {
                    template: name.to_string(),
                    placeholder: key.to_string(),
                })?;
            out.push_str(&text[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&text[last..]);
        Ok(out)
    }
}
