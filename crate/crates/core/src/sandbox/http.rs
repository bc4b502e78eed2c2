//! Just enough HTTP/1.1 over a Unix socket for the container runtime API:
//! one request per connection, `Content-Length`, chunked or read-to-EOF bodies.

use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixStream;
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::SandboxError;

#[derive(Debug, Clone)]
pub struct UnixHttp {
    socket: PathBuf,
    timeout: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub body: Vec<u8>,
}

impl Response {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

fn runtime(msg: impl std::fmt::Display) -> SandboxError {
    SandboxError::Runtime(msg.to_string())
}

impl UnixHttp {
    pub fn new(socket: impl AsRef<Path>) -> Self {
        Self {
            socket: socket.as_ref().to_path_buf(),
            timeout: None,
        }
    }

    pub fn request(
        &self,
        method: &str,
        path: &str,
        content_type: Option<&str>,
        body: &[u8],
        read_timeout: Option<Duration>,
    ) -> Result<Response, SandboxError> {
        let mut stream = UnixStream::connect(&self.socket)
            .map_err(|e| runtime(format!("cannot connect to {}: {e}", self.socket.display())))?;
        stream.set_read_timeout(read_timeout.or(self.timeout))?;
        let mut head = format!(
            "{method} {path} HTTP/1.1\r\nHost: docker\r\nConnection: close\r\nContent-Length: {}\r\n",
            body.len()
        );
        if let Some(ct) = content_type {
            head.push_str(&format!("Content-Type: {ct}\r\n"));
        }
        head.push_str("\r\n");
        stream.write_all(head.as_bytes())?;
        stream.write_all(body)?;
        stream.flush()?;
        read_response(BufReader::new(stream))
    }
}

fn read_response(mut reader: impl BufRead) -> Result<Response, SandboxError> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let status: u16 = line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| runtime(format!("bad status line {line:?}")))?;
    let mut length = None;
    let mut chunked = false;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(runtime("connection closed inside headers"));
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((name, value)) = l.split_once(':') {
            let name = name.trim().to_ascii_lowercase();
            let value = value.trim();
            if name == "content-length" {
                length = value.parse::<usize>().ok();
            } else if name == "transfer-encoding" && value.eq_ignore_ascii_case("chunked") {
                chunked = true;
            }
        }
    }
    let mut body = Vec::new();
    if chunked {
        loop {
            line.clear();
            reader.read_line(&mut line)?;
            let size_text = line.trim().split(';').next().unwrap_or("");
            let size = usize::from_str_radix(size_text, 16)
                .map_err(|_| runtime(format!("bad chunk size {size_text:?}")))?;
            if size == 0 {
                break;
            }
            let start = body.len();
            body.resize(start + size, 0);
            reader.read_exact(&mut body[start..])?;
            line.clear();
            reader.read_line(&mut line)?;
        }
    } else if status == 204 || status == 304 {
    } else if let Some(n) = length {
        body.resize(n, 0);
        reader.read_exact(&mut body)?;
    } else {
        reader.read_to_end(&mut body)?;
    }
    Ok(Response { status, body })
}

/// Split a multiplexed attach stream into (stdout, stderr) byte vectors.
/// Frames are `[stream, 0, 0, 0, len_be32]` followed by `len` bytes.
pub fn demux(mut bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>), SandboxError> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 8 {
            return Err(runtime("truncated stream frame header"));
        }
        let len = u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
        let payload = bytes
            .get(8..8 + len)
            .ok_or_else(|| runtime("truncated stream frame"))?;
        match bytes[0] {
            2 => err.extend_from_slice(payload),
            _ => out.extend_from_slice(payload),
        }
        bytes = &bytes[8 + len..];
    }
    Ok((out, err))
}
