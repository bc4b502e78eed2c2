//! Text action grammar.
//!
//! A reply carries exactly one fenced block whose info string starts with an
//! action tag:
//!
//! | tag      | info string            | body                                   |
//! |----------|------------------------|----------------------------------------|
//! | `bash`   | `bash`                 | command, run from the workdir          |
//! | `read`   | `read PATH [A-B]`      | ignored                                |
//! | `write`  | `write PATH`           | full file content                      |
//! | `edit`   | `edit PATH`            | `<<<<<<< SEARCH` / `=======` / `>>>>>>> REPLACE` |
//! | `finish` | `finish`               | summary                                |
//!
//! A fence is a line of three or more backticks at column 0; it closes on a
//! line of only backticks at least as long. Blocks with other info strings
//! (`python`, none, ...) are reasoning. Everything outside the action block
//! is kept as the step's reasoning.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ACTION_TAGS: [&str; 5] = ["bash", "read", "write", "edit", "finish"];
const SEARCH: &str = "<<<<<<< SEARCH";
const DIVIDER: &str = "=======";
const REPLACE: &str = ">>>>>>> REPLACE";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolCall {
    Bash {
        command: String,
    },
    FileRead {
        path: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lines: Option<(usize, usize)>,
    },
    FileWrite {
        path: String,
        content: String,
    },
    StrReplaceEdit {
        path: String,
        old_text: String,
        new_text: String,
    },
    Finish {
        summary: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Bash,
    FileRead,
    FileWrite,
    StrReplaceEdit,
    Finish,
}

impl ToolCall {
    pub fn kind(&self) -> ToolKind {
        match self {
            ToolCall::Bash { .. } => ToolKind::Bash,
            ToolCall::FileRead { .. } => ToolKind::FileRead,
            ToolCall::FileWrite { .. } => ToolKind::FileWrite,
            ToolCall::StrReplaceEdit { .. } => ToolKind::StrReplaceEdit,
            ToolCall::Finish { .. } => ToolKind::Finish,
        }
    }

    /// Render the call back into the grammar (the inverse of [`parse_action`]).
    pub fn render(&self) -> String {
        let block = |info: &str, body: &str| {
            let longest = body
                .lines()
                .filter(|l| l.chars().all(|c| c == '`') && !l.is_empty())
                .map(str::len)
                .max()
                .unwrap_or(0);
            let fence = "`".repeat(longest.max(2) + 1);
            let body = if body.is_empty() || body.ends_with('\n') {
                body.to_string()
            } else {
                format!("{body}\n")
            };
            format!("{fence}{info}\n{body}{fence}")
        };
        match self {
            ToolCall::Bash { command } => block("bash", command),
            ToolCall::FileRead { path, lines } => match lines {
                Some((a, b)) => block(&format!("read {path} {a}-{b}"), ""),
                None => block(&format!("read {path}"), ""),
            },
            ToolCall::FileWrite { path, content } => block(&format!("write {path}"), content),
            ToolCall::StrReplaceEdit { path, old_text, new_text } => {
                let line = |s: &str| if s.is_empty() { String::new() } else { format!("{s}\n") };
                let body = format!("{SEARCH}\n{}{DIVIDER}\n{}{REPLACE}\n", line(old_text), line(new_text));
                block(&format!("edit {path}"), &body)
            }
            ToolCall::Finish { summary } => block("finish", summary),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no action block found; end your reply with exactly one fenced block tagged bash, read, write, edit or finish")]
    NoAction,
    #[error("found {0} action blocks; exactly one action block is allowed per reply")]
    MultipleActions(usize),
    #[error("the `{0}` block is not closed")]
    Unclosed(String),
    #[error("the `{tag}` block needs {what}")]
    MissingArgument { tag: String, what: &'static str },
    #[error("invalid line range `{0}`; use START-END with 1 <= START <= END")]
    BadRange(String),
    #[error("malformed edit block: {0}")]
    MalformedEdit(String),
    #[error("the bash block is empty")]
    EmptyCommand,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAction {
    pub call: ToolCall,
    /// Reply text with the action block removed, trimmed.
    pub reasoning: String,
}

struct Block {
    info: String,
    body: Vec<String>,
    start: usize,
    end: usize,
    closed: bool,
}

fn fence_len(line: &str) -> usize {
    line.bytes().take_while(|&b| b == b'`').count()
}

fn blocks(lines: &[&str]) -> Vec<Block> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let n = fence_len(lines[i]);
        if n < 3 {
            i += 1;
            continue;
        }
        let info = lines[i][n..].trim().to_string();
        let mut j = i + 1;
        let mut closed = false;
        while j < lines.len() {
            let l = lines[j].trim_end();
            if fence_len(l) >= n && fence_len(l) == l.len() {
                closed = true;
                break;
            }
            j += 1;
        }
        out.push(Block {
            info,
            body: lines[i + 1..j.min(lines.len())].iter().map(|s| s.to_string()).collect(),
            start: i,
            end: j.min(lines.len().saturating_sub(1)),
            closed,
        });
        i = j + 1;
    }
    out
}

fn tag_of(info: &str) -> Option<&'static str> {
    let first = info.split_whitespace().next()?;
    ACTION_TAGS.iter().copied().find(|t| *t == first)
}

fn joined(lines: &[String]) -> String {
    if lines.is_empty() {
        String::new()
    } else {
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}

fn parse_range(text: &str) -> Result<(usize, usize), ParseError> {
    let bad = || ParseError::BadRange(text.to_string());
    let (a, b) = text.split_once('-').ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok((a, b))
}

fn parse_edit(body: &[String]) -> Result<(String, String), ParseError> {
    let pos = |marker: &str| body.iter().position(|l| l.trim_end() == marker);
    let s = pos(SEARCH).ok_or_else(|| ParseError::MalformedEdit(format!("missing `{SEARCH}` line")))?;
    let d = body
        .iter()
        .skip(s + 1)
        .position(|l| l.trim_end() == DIVIDER)
        .map(|p| p + s + 1)
        .ok_or_else(|| ParseError::MalformedEdit(format!("missing `{DIVIDER}` line")))?;
    let r = body
        .iter()
        .skip(d + 1)
        .position(|l| l.trim_end() == REPLACE)
        .map(|p| p + d + 1)
        .ok_or_else(|| ParseError::MalformedEdit(format!("missing `{REPLACE}` line")))?;
    if body[s + 1..d].is_empty() {
        return Err(ParseError::MalformedEdit("the search text is empty".into()));
    }
    Ok((body[s + 1..d].join("\n"), body[d + 1..r].join("\n")))
}

fn build(tag: &str, info: &str, body: &[String]) -> Result<ToolCall, ParseError> {
    let mut args = info.split_whitespace().skip(1);
    let path = |args: &mut dyn Iterator<Item = &str>| {
        args.next().map(str::to_string).ok_or(ParseError::MissingArgument {
            tag: tag.to_string(),
            what: "a file path",
        })
    };
    Ok(match tag {
        "bash" => {
            let command = joined(body);
            if command.trim().is_empty() {
                return Err(ParseError::EmptyCommand);
            }
            ToolCall::Bash { command }
        }
        "read" => {
            let path = path(&mut args)?;
            let lines = args.next().map(parse_range).transpose()?;
            ToolCall::FileRead { path, lines }
        }
        "write" => ToolCall::FileWrite {
            path: path(&mut args)?,
            content: joined(body),
        },
        "edit" => {
            let path = path(&mut args)?;
            let (old_text, new_text) = parse_edit(body)?;
            ToolCall::StrReplaceEdit { path, old_text, new_text }
        }
        _ => ToolCall::Finish {
            summary: body.join("\n").trim().to_string(),
        },
    })
}

pub fn parse_action(text: &str) -> Result<ParsedAction, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let found = blocks(&lines);
    let actions: Vec<&Block> = found.iter().filter(|b| tag_of(&b.info).is_some()).collect();
    let block = match actions.as_slice() {
        [] => return Err(ParseError::NoAction),
        [one] => *one,
        many => return Err(ParseError::MultipleActions(many.len())),
    };
    let tag = tag_of(&block.info).expect("filtered on tag");
    if !block.closed {
        return Err(ParseError::Unclosed(tag.to_string()));
    }
    let call = build(tag, &block.info, &block.body)?;
    let mut rest: Vec<&str> = lines[..block.start].to_vec();
    rest.extend_from_slice(&lines[(block.end + 1).min(lines.len())..]);
    Ok(ParsedAction {
        call,
        reasoning: rest.join("\n").trim().to_string(),
    })
}
