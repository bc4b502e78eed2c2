//! Minimal container build file reader: logical lines, instruction names and
//! the line each instruction starts on.

use super::SandboxError;

const KNOWN: &[&str] = &[
    "ADD", "ARG", "CMD", "COPY", "ENTRYPOINT", "ENV", "EXPOSE", "FROM", "HEALTHCHECK", "LABEL",
    "MAINTAINER", "ONBUILD", "RUN", "SHELL", "STOPSIGNAL", "USER", "VOLUME", "WORKDIR",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DockerInstruction {
    pub line: usize,
    pub keyword: String,
    pub args: String,
    /// The instruction as written (continuations joined with spaces).
    pub text: String,
}

fn provision_error(message: String) -> SandboxError {
    SandboxError::Provision {
        message,
        log: String::new(),
    }
}

/// Split into instructions and reject unknown keywords or a missing `FROM`.
pub fn validate_dockerfile(text: &str) -> Result<Vec<DockerInstruction>, SandboxError> {
    let mut out = Vec::new();
    let mut pending: Option<(usize, String)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if pending.is_none() && (line.is_empty() || line.starts_with('#')) {
            continue;
        }
        let (start, mut acc) = pending.take().unwrap_or((idx + 1, String::new()));
        if line.starts_with('#') {
            pending = Some((start, acc));
            continue;
        }
        let (body, continued) = match line.strip_suffix('\\') {
            Some(b) => (b.trim_end(), true),
            None => (line, false),
        };
        if !acc.is_empty() && !body.is_empty() {
            acc.push(' ');
        }
        acc.push_str(body);
        if continued {
            pending = Some((start, acc));
            continue;
        }
        let (keyword, args) = acc
            .split_once(char::is_whitespace)
            .map(|(k, a)| (k.to_string(), a.trim().to_string()))
            .unwrap_or_else(|| (acc.clone(), String::new()));
        let upper = keyword.to_ascii_uppercase();
        if !KNOWN.contains(&upper.as_str()) {
            return Err(provision_error(format!(
                "line {start}: unknown instruction {keyword:?} in `{acc}`"
            )));
        }
        out.push(DockerInstruction {
            line: start,
            keyword: upper,
            args,
            text: acc,
        });
    }
    if let Some((start, acc)) = pending {
        return Err(provision_error(format!(
            "line {start}: unterminated continuation in `{acc}`"
        )));
    }
    match out.iter().find(|i| i.keyword != "ARG") {
        Some(i) if i.keyword == "FROM" => Ok(out),
        Some(i) => Err(provision_error(format!(
            "line {}: expected FROM before `{}`",
            i.line, i.text
        ))),
        None => Err(provision_error("build file has no FROM instruction".into())),
    }
}
