use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError};
use crate::proposal::ProjectProposal;
use crate::templates::{TemplateError, TemplateSet};

use super::checklist::{checklist_prompt_history, parse_checklist, ChecklistError, TestChecklist};
use super::{render_task, TaskId, TaskPlan};

const OPEN: &str = "<tasks>";
const CLOSE: &str = "</tasks>";

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("plan output has no closing </tasks> tag after {attempts} continuation(s)")]
    Unterminated { attempts: u32, raw: String },
    #[error("task {0} is not in the plan")]
    UnknownTask(TaskId),
    #[error(transparent)]
    Checklist(#[from] ChecklistError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// The text between `<tasks>` and `</tasks>`, trimmed and newline-terminated.
/// A missing opening tag means the document starts at the beginning.
pub fn extract_tasks_block(text: &str) -> Option<String> {
    let start = text.find(OPEN).map(|i| i + OPEN.len()).unwrap_or(0);
    let end = start + text[start..].find(CLOSE)?;
    let mut body = text[start..end].trim().to_string();
    body.push('\n');
    Some(body)
}

pub struct PlanGenerator<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub model: String,
    pub max_continuations: u32,
    pub max_output_tokens: u32,
}

impl PlanGenerator<'_> {
    fn call(&self, system: &str, user: String) -> Result<String, GatewayError> {
        let request = CompletionRequest::new(
            &self.model,
            vec![ChatMessage::system(system), ChatMessage::user(user)],
        )
        .with_max_output_tokens(self.max_output_tokens);
        Ok(self.gateway.complete(&request)?.content)
    }

    /// Ask for a plan; while the `</tasks>` tag is missing, send the
    /// continuation prompt and append its output. Returns the plan document
    /// and the number of continuation calls made.
    pub fn generate_plan(&self, proposal: &ProjectProposal) -> Result<(String, u32), GenerateError> {
        let system = self.templates.raw("plan/system")?.to_string();
        let vars = [
            ("project_description", proposal.description.as_str()),
            ("constraints", proposal.constraints.as_str()),
        ];
        let mut text = self.call(&system, self.templates.render("plan/user", &vars)?)?;
        let mut attempts = 0;
        while !text.contains(CLOSE) {
            if attempts == self.max_continuations {
                return Err(GenerateError::Unterminated { attempts, raw: text });
            }
            attempts += 1;
            let prompt = self.templates.render(
                "plan/continue",
                &[vars[0], vars[1], ("response", text.as_str())],
            )?;
            let more = self.call(&system, prompt)?;
            text.push_str(&more);
        }
        let body = extract_tasks_block(&text).expect("closing tag present");
        Ok((body, attempts))
    }

    pub fn generate_checklist(
        &self,
        plan: &TaskPlan,
        plan_text: &str,
        task_id: TaskId,
        previous: &[TestChecklist],
    ) -> Result<TestChecklist, GenerateError> {
        let task = plan.task(task_id).ok_or(GenerateError::UnknownTask(task_id))?;
        if !task.has_tests() {
            return Err(ChecklistError::NoTests(task_id).into());
        }
        let system = self.templates.raw("checklist/system")?.to_string();
        let history = checklist_prompt_history(previous);
        let task_text = render_task(task);
        let user = self.templates.render(
            "checklist/user",
            &[
                ("project_description", &plan.project_description),
                ("tasks_prompt", plan_text),
                ("previous_unit_tests", &history),
                ("unit_test_prompt", &task_text),
            ],
        )?;
        let text = self.call(&system, user)?;
        Ok(parse_checklist(task_id, &text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extract_trims_and_tolerates_missing_open_tag() {
        assert_eq!(extract_tasks_block("pre <tasks>\n# A\n</tasks> post").unwrap(), "# A\n");
        assert_eq!(extract_tasks_block("# A\n</tasks>").unwrap(), "# A\n");
        assert_eq!(extract_tasks_block("<tasks># A"), None);
    }
}
