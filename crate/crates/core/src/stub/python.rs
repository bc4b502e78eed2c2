//! Python function-body stubber.
//!
//! The source is split into logical lines by a small tokenizer that knows
//! about string literals (all prefixes, triple quotes), comments, bracket
//! nesting and backslash continuations. Every `def` / `async def` that is
//! not itself inside a function body is rewritten:
//!
//! * block body: everything after an optional docstring is replaced by one
//!   `pass` line at the body's own indentation;
//! * one-line body (`def f(x): return x`): the text after the header colon
//!   becomes ` pass`, a trailing comment is kept.
//!
//! Decorators, headers, class bodies, module code, blank lines and comments
//! outside function bodies are copied byte for byte. Functions nested in a
//! function body disappear with that body. A function whose body is already
//! `pass` (after an optional docstring), or only a docstring, is unchanged,
//! which makes the rewrite idempotent.
//!
//! f-strings are scanned like plain strings, so a quote character reused
//! inside a replacement field (allowed since Python 3.12) is not supported.

use super::StubError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok {
    Name,
    Str,
    Op(u8),
    Other,
}

#[derive(Debug, Clone, Copy)]
struct Token {
    kind: Tok,
    start: usize,
    end: usize,
    depth: usize,
}

#[derive(Debug)]
struct Logical {
    /// Start of the first physical line.
    start: usize,
    /// One past the final newline (or end of file).
    end: usize,
    /// Indentation width of the first physical line (tabs to multiples of 8).
    indent: usize,
    tokens: Vec<Token>,
}

impl Logical {
    fn is_blank(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b >= 0x80
}

fn is_ident(b: u8) -> bool {
    is_ident_start(b) || b.is_ascii_digit()
}

fn string_prefix(word: &[u8]) -> bool {
    word.len() <= 2
        && word
            .iter()
            .all(|c| matches!(c.to_ascii_lowercase(), b'r' | b'b' | b'u' | b'f'))
}

fn indent_width(line: &[u8]) -> usize {
    let mut w = 0;
    for &b in line {
        match b {
            b' ' => w += 1,
            b'\t' => w = (w / 8 + 1) * 8,
            b'\x0c' => w = 0,
            _ => break,
        }
    }
    w
}

fn line_of(src: &[u8], at: usize) -> usize {
    src[..at.min(src.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

fn logical_lines(path: &str, src: &[u8]) -> Result<Vec<Logical>, StubError> {
    let err = |at: usize, message: &str| StubError::Parse {
        path: path.to_string(),
        line: line_of(src, at),
        message: message.to_string(),
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let start = i;
        let line_end = src[i..].iter().position(|&b| b == b'\n').map_or(src.len(), |p| i + p);
        let indent = indent_width(&src[i..line_end]);
        let mut tokens = Vec::new();
        let mut depth: usize = 0;
        loop {
            if i >= src.len() {
                if depth > 0 {
                    return Err(err(start, "unclosed bracket at end of file"));
                }
                break;
            }
            let b = src[i];
            match b {
                b'\n' => {
                    i += 1;
                    if depth == 0 {
                        break;
                    }
                }
                b' ' | b'\t' | b'\r' | b'\x0c' => i += 1,
                b'#' => {
                    while i < src.len() && src[i] != b'\n' {
                        i += 1;
                    }
                }
                b'\\' => {
                    let next = src.get(i + 1).copied();
                    let crlf = next == Some(b'\r') && src.get(i + 2) == Some(&b'\n');
                    if next == Some(b'\n') || crlf {
                        i += if crlf { 3 } else { 2 };
                    } else {
                        return Err(err(i, "unexpected character after line continuation"));
                    }
                }
                b'\'' | b'"' => {
                    let end = scan_string(src, i).ok_or_else(|| err(i, "unterminated string literal"))?;
                    tokens.push(Token { kind: Tok::Str, start: i, end, depth });
                    i = end;
                }
                b'(' | b'[' | b'{' => {
                    tokens.push(Token { kind: Tok::Op(b), start: i, end: i + 1, depth });
                    depth += 1;
                    i += 1;
                }
                b')' | b']' | b'}' => {
                    depth = depth.checked_sub(1).ok_or_else(|| err(i, "unmatched closing bracket"))?;
                    tokens.push(Token { kind: Tok::Op(b), start: i, end: i + 1, depth });
                    i += 1;
                }
                _ if is_ident_start(b) => {
                    let mut j = i;
                    while j < src.len() && is_ident(src[j]) {
                        j += 1;
                    }
                    if j < src.len() && matches!(src[j], b'\'' | b'"') && string_prefix(&src[i..j]) {
                        let end = scan_string(src, j).ok_or_else(|| err(i, "unterminated string literal"))?;
                        tokens.push(Token { kind: Tok::Str, start: i, end, depth });
                        i = end;
                    } else {
                        tokens.push(Token { kind: Tok::Name, start: i, end: j, depth });
                        i = j;
                    }
                }
                _ if b.is_ascii_digit() => {
                    let mut j = i;
                    while j < src.len() && (is_ident(src[j]) || src[j] == b'.') {
                        j += 1;
                    }
                    tokens.push(Token { kind: Tok::Other, start: i, end: j, depth });
                    i = j;
                }
                _ => {
                    tokens.push(Token { kind: Tok::Op(b), start: i, end: i + 1, depth });
                    i += 1;
                }
            }
        }
        out.push(Logical { start, end: i, indent, tokens });
    }
    Ok(out)
}

/// End offset of the string literal whose opening quote is at `q`.
fn scan_string(src: &[u8], q: usize) -> Option<usize> {
    let quote = src[q];
    let triple = src.get(q + 1) == Some(&quote) && src.get(q + 2) == Some(&quote);
    let mut i = q + if triple { 3 } else { 1 };
    while i < src.len() {
        match src[i] {
            b'\\' => i += 2,
            b'\n' if !triple => return None,
            c if c == quote => {
                if !triple {
                    return Some(i + 1);
                }
                if src.get(i + 1) == Some(&quote) && src.get(i + 2) == Some(&quote) {
                    return Some(i + 3);
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    None
}

fn text<'a>(src: &'a [u8], t: &Token) -> &'a [u8] {
    &src[t.start..t.end]
}

/// Index of the token after `def` / `async def`, if the line is a def.
fn def_header(src: &[u8], line: &Logical) -> Option<usize> {
    let t = &line.tokens;
    match t.first().map(|x| text(src, x)) {
        Some(b"def") => Some(1),
        Some(b"async") if t.get(1).map(|x| text(src, x)) == Some(b"def") => Some(2),
        _ => None,
    }
}

fn header_colon(line: &Logical, from: usize) -> Option<usize> {
    line.tokens[from..]
        .iter()
        .position(|t| t.kind == Tok::Op(b':') && t.depth == 0)
        .map(|p| p + from)
}

fn is_docstring(line: &Logical) -> bool {
    !line.tokens.is_empty() && line.tokens.iter().all(|t| t.kind == Tok::Str)
}

fn is_pass(src: &[u8], line: &Logical) -> bool {
    line.tokens.len() == 1 && text(src, &line.tokens[0]) == b"pass"
}

/// Rewrite every top-level function body in `source`.
pub fn stub_python(path: &str, source: &str) -> Result<String, StubError> {
    let src = source.as_bytes();
    let lines = logical_lines(path, src)?;
    let newline = if source.contains("\r\n") { "\r\n" } else { "\n" };
    let mut out = String::with_capacity(source.len());
    let mut copied = 0;
    let mut i = 0;
    while i < lines.len() {
        let line = &lines[i];
        let Some(after_def) = def_header(src, line) else {
            i += 1;
            continue;
        };
        let colon = header_colon(line, after_def).ok_or_else(|| StubError::Parse {
            path: path.to_string(),
            line: line_of(src, line.start),
            message: "function header without a colon".into(),
        })?;
        let colon_tok = line.tokens[colon];
        let rest = &line.tokens[colon + 1..];
        if !rest.is_empty() {
            // One-line body.
            let already = rest.len() == 1 && text(src, &rest[0]) == b"pass";
            if !already {
                let body_end = rest.last().expect("non-empty").end;
                out.push_str(&source[copied..colon_tok.end]);
                out.push_str(" pass");
                copied = body_end;
            }
            i += 1;
            continue;
        }
        // Block body: following lines indented deeper than the header.
        let mut last = None;
        let mut j = i + 1;
        while j < lines.len() {
            let l = &lines[j];
            if !l.is_blank() {
                if l.indent <= line.indent {
                    break;
                }
                last = Some(j);
            }
            j += 1;
        }
        let Some(last) = last else {
            return Err(StubError::Parse {
                path: path.to_string(),
                line: line_of(src, line.start),
                message: "function without a body".into(),
            });
        };
        let body: Vec<usize> = (i + 1..=last).filter(|&k| !lines[k].is_blank()).collect();
        let mut keep_until = i + 1;
        let mut stmts = body.as_slice();
        if let Some(&first) = stmts.first() {
            if is_docstring(&lines[first]) {
                keep_until = first + 1;
                stmts = &stmts[1..];
            }
        }
        let unchanged = stmts.is_empty() || (stmts.len() == 1 && is_pass(src, &lines[stmts[0]]));
        if !unchanged {
            let first_body = &lines[body[0]];
            let indent_end = src[first_body.start..]
                .iter()
                .position(|&b| !matches!(b, b' ' | b'\t' | b'\x0c'))
                .map_or(first_body.start, |p| first_body.start + p);
            let indent = &source[first_body.start..indent_end];
            let region_start = lines[keep_until - 1].end;
            let region_end = lines[last].end;
            out.push_str(&source[copied..region_start]);
            out.push_str(indent);
            out.push_str("pass");
            // Keep the original line ending unless the body ran to EOF without one.
            if source[..region_end].ends_with('\n') {
                out.push_str(newline);
            }
            copied = region_end;
        }
        i = last + 1;
    }
    out.push_str(&source[copied..]);
    Ok(out)
}
