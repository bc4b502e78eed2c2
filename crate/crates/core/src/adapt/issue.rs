//! `<issue>` / `<description>` bug proposals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::TaskId;
use crate::tags::{find_tag, TagLookup};

pub const TAG_ISSUE: &str = "issue";
pub const TAG_DESCRIPTION: &str = "description";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueSpec {
    /// Instructions for introducing the bug; never shown to solvers.
    pub technical_issue: String,
    /// User-facing bug report; becomes the problem statement.
    pub user_description: String,
    pub source_task: TaskId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IssueError {
    #[error("issue proposal has no <{0}> tag")]
    MissingTag(&'static str),
    #[error("issue proposal has no closing </{0}> tag")]
    Unclosed(&'static str),
    #[error("<{0}> is empty")]
    Empty(&'static str),
    #[error("the user description must not contain a code block")]
    CodeInDescription,
}

fn field(text: &str, tag: &'static str) -> Result<String, IssueError> {
    match find_tag(text, tag) {
        TagLookup::Found { value, .. } if value.is_empty() => Err(IssueError::Empty(tag)),
        TagLookup::Found { value, .. } => Ok(value.to_string()),
        TagLookup::Unclosed => Err(IssueError::Unclosed(tag)),
        TagLookup::Missing => Err(IssueError::MissingTag(tag)),
    }
}

/// A fenced block (``` or ~~~ at the start of a line) anywhere in `text`.
pub fn has_code_block(text: &str) -> bool {
    text.lines().any(|l| {
        let l = l.trim_start();
        l.starts_with("```") || l.starts_with("~~~")
    })
}

pub fn parse_issue(text: &str, source_task: TaskId) -> Result<IssueSpec, IssueError> {
    let spec = IssueSpec {
        technical_issue: field(text, TAG_ISSUE)?,
        user_description: field(text, TAG_DESCRIPTION)?,
        source_task,
    };
    spec.validate()?;
    Ok(spec)
}

impl IssueSpec {
    pub fn validate(&self) -> Result<(), IssueError> {
        if self.technical_issue.trim().is_empty() {
            return Err(IssueError::Empty(TAG_ISSUE));
        }
        if self.user_description.trim().is_empty() {
            return Err(IssueError::Empty(TAG_DESCRIPTION));
        }
        if has_code_block(&self.user_description) {
            return Err(IssueError::CodeInDescription);
        }
        Ok(())
    }

    /// The tagged form [`parse_issue`] reads.
    pub fn render(&self) -> String {
        format!(
            "<{TAG_ISSUE}>\n{}\n</{TAG_ISSUE}>\n\n<{TAG_DESCRIPTION}>\n{}\n</{TAG_DESCRIPTION}>\n",
            self.technical_issue, self.user_description
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> TaskId {
        TaskId::new(1, 1, 1)
    }

    #[test]
    fn errors() {
        assert_eq!(parse_issue("<issue>x</issue>", t()), Err(IssueError::MissingTag("description")));
        assert_eq!(
            parse_issue("<issue>x</issue><description>y", t()),
            Err(IssueError::Unclosed("description"))
        );
        assert_eq!(parse_issue("<issue> </issue><description>y</description>", t()), Err(IssueError::Empty("issue")));
        assert_eq!(
            parse_issue("<issue>x</issue><description>see\n```python\nf('')\n```\n</description>", t()),
            Err(IssueError::CodeInDescription)
        );
    }

    #[test]
    fn inline_code_is_allowed() {
        let spec = parse_issue("<issue>x</issue><description>returns `False`</description>", t()).unwrap();
        assert_eq!(spec.user_description, "returns `False`");
        assert_eq!(parse_issue(&spec.render(), t()).unwrap(), spec);
    }
}
