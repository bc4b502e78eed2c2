//! Observations for the file tools.

use crate::sandbox::{Sandbox, SandboxError};

const CONTEXT_LINES: usize = 3;

fn numbered(lines: &[&str], first: usize) -> String {
    let width = (first + lines.len()).to_string().len();
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{:>width$}| {l}\n", first + i))
        .collect()
}

fn missing(path: &str, e: SandboxError) -> String {
    match e {
        SandboxError::NotFound(_) => format!("[error] file not found: {path}"),
        other => format!("[error] {other}"),
    }
}

/// Replace the single occurrence of `old_text` in `path` with `new_text`.
/// Zero or several matches leave the file untouched; every outcome is an
/// observation for the agent, never an error.
pub fn apply_edit(sandbox: &mut dyn Sandbox, path: &str, old_text: &str, new_text: &str) -> String {
    let bytes = match sandbox.read_file(path) {
        Ok(b) => b,
        Err(e) => return missing(path, e),
    };
    let Ok(text) = String::from_utf8(bytes) else {
        return format!("[error] {path} is not UTF-8 text");
    };
    let matches = text.matches(old_text).count();
    match matches {
        0 => return format!("[error] search text not found in {path}; the file is unchanged"),
        1 => {}
        n => {
            return format!(
                "[error] search text is not unique in {path} ({n} matches); include more surrounding lines. The file is unchanged"
            )
        }
    }
    let at = text.find(old_text).expect("one match");
    let updated = format!("{}{}{}", &text[..at], new_text, &text[at + old_text.len()..]);
    if let Err(e) = sandbox.write_file(path, updated.as_bytes()) {
        return format!("[error] {e}");
    }
    let first_line = text[..at].matches('\n').count();
    let lines: Vec<&str> = updated.lines().collect();
    let from = first_line.saturating_sub(CONTEXT_LINES);
    let to = (first_line + new_text.lines().count().max(1) + CONTEXT_LINES).min(lines.len());
    format!("[ok] edited {path}\n{}", numbered(&lines[from..to], from + 1))
}

pub fn read_observation(sandbox: &mut dyn Sandbox, path: &str, range: Option<(usize, usize)>) -> String {
    let bytes = match sandbox.read_file(path) {
        Ok(b) => b,
        Err(e) => return missing(path, e),
    };
    let text = String::from_utf8_lossy(&bytes);
    let lines: Vec<&str> = text.lines().collect();
    let (a, b) = range.unwrap_or((1, lines.len().max(1)));
    if lines.is_empty() {
        return format!("[ok] {path} is empty\n");
    }
    if a > lines.len() {
        return format!("[error] {path} has only {} lines", lines.len());
    }
    let b = b.min(lines.len());
    format!("[ok] {path} lines {a}-{b} of {}\n{}", lines.len(), numbered(&lines[a - 1..b], a))
}

pub fn write_observation(sandbox: &mut dyn Sandbox, path: &str, content: &str) -> String {
    match sandbox.write_file(path, content.as_bytes()) {
        Ok(()) => format!("[ok] wrote {} bytes to {path}", content.len()),
        Err(e) => format!("[error] {e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::local::LocalProvisioner;
    use crate::sandbox::snapshot::sha256_hex;
    use crate::sandbox::{Provisioner, SandboxSpec};

    fn sandbox(file: &str) -> (tempfile::TempDir, Box<dyn Sandbox>) {
        let ctx = tempfile::tempdir().unwrap();
        std::fs::write(ctx.path().join("Dockerfile"), "FROM scratch\n").unwrap();
        std::fs::write(ctx.path().join("a.py"), file).unwrap();
        let sb = LocalProvisioner::new().provision(&SandboxSpec::new(ctx.path())).unwrap();
        (ctx, sb)
    }

    #[test]
    fn unique_match_is_replaced() {
        let (_c, mut sb) = sandbox("def f():\n    return 1\n");
        let before = sha256_hex(&sb.read_file("a.py").unwrap());
        let obs = apply_edit(sb.as_mut(), "a.py", "return 1", "return 2");
        assert!(obs.starts_with("[ok]") && obs.contains("2|     return 2"), "{obs}");
        assert_ne!(sha256_hex(&sb.read_file("a.py").unwrap()), before);
        assert_eq!(sb.read_file("a.py").unwrap(), b"def f():\n    return 2\n");
    }

    #[test]
    fn zero_and_duplicate_matches_leave_file_alone() {
        let text = "x = 1\nx = 1\n";
        let (_c, mut sb) = sandbox(text);
        assert!(apply_edit(sb.as_mut(), "a.py", "y = 2", "z").contains("not found"));
        assert!(apply_edit(sb.as_mut(), "a.py", "x = 1", "x = 2").contains("not unique"));
        assert_eq!(sb.read_file("a.py").unwrap(), text.as_bytes());
        assert!(apply_edit(sb.as_mut(), "nope.py", "a", "b").contains("file not found"));
    }

    #[test]
    fn read_ranges() {
        let (_c, mut sb) = sandbox("a\nb\nc\n");
        assert_eq!(read_observation(sb.as_mut(), "a.py", Some((2, 9))), "[ok] a.py lines 2-3 of 3\n2| b\n3| c\n");
        assert!(read_observation(sb.as_mut(), "a.py", Some((5, 9))).starts_with("[error]"));
    }
}
