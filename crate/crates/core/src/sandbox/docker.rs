//! Container backend speaking the runtime's HTTP API on its Unix socket.
//!
//! Provisioning builds an image from the build context (tagged by the
//! context's digest, so identical contexts share an image), creates a
//! container whose command keeps it alive, starts it with networking
//! disabled, and uploads the context into the workdir. Commands run through
//! `exec` under `timeout`, which kills the command's whole process group and
//! exits with 124.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::dockerfile::validate_dockerfile;
use super::http::{demux, Response, UnixHttp};
use super::snapshot::sha256_hex;
use super::tarball::{read_tar, tar_from_files};
use super::{
    cap_output, relative_path, ExecResult, Provisioner, Sandbox, SandboxError, SandboxSpec,
    SandboxState, OUTPUT_CAP, TIMEOUT_EXIT_CODE,
};

pub const DEFAULT_SOCKET: &str = "/var/run/docker.sock";
const KEEP_ALIVE: [&str; 3] = ["tail", "-f", "/dev/null"];
const API_TIMEOUT: Duration = Duration::from_secs(600);

fn encode(s: &str) -> String {
    let mut out = String::new();
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~/".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn runtime(msg: impl std::fmt::Display) -> SandboxError {
    SandboxError::Runtime(msg.to_string())
}

fn expect_ok(r: Response, what: &str) -> Result<Response, SandboxError> {
    if r.is_success() {
        Ok(r)
    } else {
        Err(runtime(format!("{what} failed with status {}: {}", r.status, r.text().trim())))
    }
}

fn json_body(r: &Response) -> Result<Value, SandboxError> {
    serde_json::from_slice(&r.body).map_err(|e| runtime(format!("malformed runtime reply: {e}")))
}

fn context_files(dir: &Path, rel: &str, out: &mut Vec<(String, Vec<u8>)>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let child = if rel.is_empty() { name } else { format!("{rel}/{name}") };
        let meta = fs::metadata(entry.path())?;
        if meta.is_dir() {
            context_files(&entry.path(), &child, out)?;
        } else if meta.is_file() {
            out.push((child, fs::read(entry.path())?));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DockerProvisioner {
    http: UnixHttp,
}

impl DockerProvisioner {
    pub fn new(socket: impl AsRef<Path>) -> Self {
        Self {
            http: UnixHttp::new(socket),
        }
    }
}

impl Default for DockerProvisioner {
    fn default() -> Self {
        Self::new(DEFAULT_SOCKET)
    }
}

impl Provisioner for DockerProvisioner {
    fn provision(&self, spec: &SandboxSpec) -> Result<Box<dyn Sandbox>, SandboxError> {
        let provision_err = |message: String, log: String| SandboxError::Provision { message, log };
        let dockerfile = fs::read_to_string(spec.build_context.join("Dockerfile"))
            .map_err(|e| provision_err(format!("cannot read build file: {e}"), String::new()))?;
        let instructions = validate_dockerfile(&dockerfile)?;
        let mut files = Vec::new();
        context_files(&spec.build_context, "", &mut files)?;
        let context = tar_from_files(files)?;
        let tag = format!("envforge-{}", &sha256_hex(&context)[..16]);

        let reply = self.http.request(
            "POST",
            &format!("/build?t={}&rm=1&forcerm=1", encode(&tag)),
            Some("application/x-tar"),
            &context,
            Some(API_TIMEOUT),
        )?;
        let mut log = String::new();
        let mut error = None;
        for line in reply.text().lines() {
            let Ok(v) = serde_json::from_str::<Value>(line) else {
                continue;
            };
            if let Some(s) = v.get("stream").and_then(Value::as_str) {
                log.push_str(s);
            }
            if let Some(e) = v.get("error").and_then(Value::as_str) {
                error = Some(e.to_string());
            }
        }
        if !reply.is_success() || error.is_some() {
            let message = error.unwrap_or_else(|| format!("build returned status {}", reply.status));
            let culprit = instructions
                .iter()
                .filter(|i| i.keyword == "RUN")
                .find(|i| message.contains(i.args.as_str()));
            let message = match culprit {
                Some(i) => format!("line {}: `{}`: {message}", i.line, i.text),
                None => message,
            };
            return Err(provision_err(message, log));
        }

        let body = json!({
            "Image": tag,
            "WorkingDir": spec.workdir,
            "Cmd": KEEP_ALIVE,
            "Entrypoint": Value::Null,
            "Tty": false,
            "HostConfig": {
                "NanoCpus": u64::from(spec.limits.cpus) * 1_000_000_000,
                "Memory": spec.limits.memory_bytes,
                "NetworkMode": "none",
            },
        });
        let created = expect_ok(
            self.http.request(
                "POST",
                "/containers/create",
                Some("application/json"),
                body.to_string().as_bytes(),
                Some(API_TIMEOUT),
            )?,
            "container create",
        )?;
        let id = json_body(&created)?
            .get("Id")
            .and_then(Value::as_str)
            .ok_or_else(|| runtime("create reply without Id"))?
            .to_string();
        let mut sandbox = DockerSandbox {
            http: self.http.clone(),
            id,
            state: SandboxState::Building,
            workdir: spec.workdir.clone(),
        };
        expect_ok(
            self.http.request("POST", &format!("/containers/{}/start", sandbox.id), None, &[], Some(API_TIMEOUT))?,
            "container start",
        )
        .map_err(|e| provision_err(e.to_string(), log.clone()))?;
        sandbox.state = SandboxState::Running;
        sandbox.put_archive(&context)?;
        Ok(Box::new(sandbox))
    }
}

pub struct DockerSandbox {
    http: UnixHttp,
    id: String,
    state: SandboxState,
    workdir: String,
}

impl DockerSandbox {
    fn require_running(&self) -> Result<(), SandboxError> {
        if self.state == SandboxState::Running {
            Ok(())
        } else {
            Err(SandboxError::State {
                id: self.id.clone(),
                state: self.state,
            })
        }
    }

    fn absolute(&self, rel: &str) -> String {
        if rel.is_empty() {
            self.workdir.clone()
        } else {
            format!("{}/{rel}", self.workdir.trim_end_matches('/'))
        }
    }

    fn put_archive(&self, tar: &[u8]) -> Result<(), SandboxError> {
        let path = format!("/containers/{}/archive?path={}", self.id, encode(&self.workdir));
        expect_ok(
            self.http.request("PUT", &path, Some("application/x-tar"), tar, Some(API_TIMEOUT))?,
            "archive upload",
        )?;
        Ok(())
    }

    /// Archive of `rel`; `None` when the path does not exist.
    fn get_archive(&self, rel: &str) -> Result<Option<Vec<(String, Vec<u8>)>>, SandboxError> {
        let path = format!("/containers/{}/archive?path={}", self.id, encode(&self.absolute(rel)));
        let r = self.http.request("GET", &path, None, &[], Some(API_TIMEOUT))?;
        if r.status == 404 {
            return Ok(None);
        }
        Ok(Some(read_tar(&expect_ok(r, "archive download")?.body)?))
    }
}

impl Sandbox for DockerSandbox {
    fn id(&self) -> &str {
        &self.id
    }

    fn state(&self) -> SandboxState {
        self.state
    }

    fn workdir(&self) -> &str {
        &self.workdir
    }

    fn exec(&mut self, command: &str, timeout: Duration) -> Result<ExecResult, SandboxError> {
        self.require_running()?;
        let started = Instant::now();
        let secs = format!("{:.3}", timeout.as_secs_f64());
        let body = json!({
            "AttachStdout": true,
            "AttachStderr": true,
            "Tty": false,
            "WorkingDir": self.workdir,
            "Env": [
                "LANG=C.UTF-8",
                "PYTHONDONTWRITEBYTECODE=1",
                "PYTHONHASHSEED=0",
                "PYTEST_ADDOPTS=-p no:cacheprovider",
            ],
            "Cmd": ["timeout", "-k", "2", secs, "bash", "-c", command],
        });
        let created = expect_ok(
            self.http.request(
                "POST",
                &format!("/containers/{}/exec", self.id),
                Some("application/json"),
                body.to_string().as_bytes(),
                Some(API_TIMEOUT),
            )?,
            "exec create",
        )?;
        let exec_id = json_body(&created)?
            .get("Id")
            .and_then(Value::as_str)
            .ok_or_else(|| runtime("exec reply without Id"))?
            .to_string();
        let stream = expect_ok(
            self.http.request(
                "POST",
                &format!("/exec/{exec_id}/start"),
                Some("application/json"),
                br#"{"Detach":false,"Tty":false}"#,
                Some(timeout + Duration::from_secs(30)),
            )?,
            "exec start",
        )?;
        let (out, err) = demux(&stream.body)?;
        let inspect = expect_ok(
            self.http.request("GET", &format!("/exec/{exec_id}/json"), None, &[], Some(API_TIMEOUT))?,
            "exec inspect",
        )?;
        let exit_code = json_body(&inspect)?
            .get("ExitCode")
            .and_then(Value::as_i64)
            .ok_or_else(|| runtime("exec inspect without ExitCode"))? as i32;
        let keep = |b: &[u8]| cap_output(&b[..b.len().min(OUTPUT_CAP)], b.len());
        Ok(ExecResult {
            exit_code,
            stdout: keep(&out),
            stderr: keep(&err),
            duration_ms: started.elapsed().as_millis() as u64,
            timed_out: exit_code == TIMEOUT_EXIT_CODE,
        })
    }

    fn read_file(&mut self, path: &str) -> Result<Vec<u8>, SandboxError> {
        self.require_running()?;
        let rel = relative_path(&self.workdir, path)?;
        let entries = self
            .get_archive(&rel)?
            .ok_or_else(|| SandboxError::NotFound(path.to_string()))?;
        match entries.as_slice() {
            [(_, content)] if !rel.is_empty() => Ok(content.clone()),
            _ => Err(SandboxError::NotFound(path.to_string())),
        }
    }

    fn write_file(&mut self, path: &str, bytes: &[u8]) -> Result<(), SandboxError> {
        self.require_running()?;
        let rel = relative_path(&self.workdir, path)?;
        if rel.is_empty() {
            return Err(SandboxError::PathEscape(path.to_string()));
        }
        self.put_archive(&tar_from_files(vec![(rel, bytes.to_vec())])?)
    }

    fn remove_path(&mut self, path: &str) -> Result<(), SandboxError> {
        let rel = relative_path(&self.workdir, path)?;
        if rel.is_empty() {
            return Err(SandboxError::PathEscape(path.to_string()));
        }
        let r = self.exec(&format!("rm -rf -- {}", super::vcs::shell_quote(&rel)), API_TIMEOUT)?;
        if !r.success() {
            return Err(runtime(format!("rm {rel} failed: {}", r.combined())));
        }
        Ok(())
    }

    fn list_files(&mut self, root: &str) -> Result<Vec<String>, SandboxError> {
        self.require_running()?;
        let rel = relative_path(&self.workdir, root)?;
        let entries = self
            .get_archive(&rel)?
            .ok_or_else(|| SandboxError::NotFound(root.to_string()))?;
        let parent = match rel.rsplit_once('/') {
            Some((p, _)) => format!("{p}/"),
            None => String::new(),
        };
        let mut out: Vec<String> = entries
            .into_iter()
            .filter_map(|(p, _)| {
                if rel.is_empty() {
                    p.split_once('/').map(|(_, rest)| rest.to_string())
                } else {
                    Some(format!("{parent}{p}"))
                }
            })
            .filter(|p| !p.is_empty())
            .collect();
        if out.len() == 1 && out[0] == rel {
            return Err(SandboxError::NotFound(root.to_string()));
        }
        out.sort();
        Ok(out)
    }

    fn stop(&mut self) -> Result<(), SandboxError> {
        if self.state == SandboxState::Running {
            let r = self.http.request("POST", &format!("/containers/{}/stop?t=2", self.id), None, &[], Some(API_TIMEOUT))?;
            if !(r.is_success() || r.status == 304) {
                return Err(runtime(format!("stop failed: {}", r.text())));
            }
            self.state = SandboxState::Stopped;
        }
        Ok(())
    }

    fn destroy(&mut self) -> Result<(), SandboxError> {
        if self.state != SandboxState::Destroyed {
            let r = self.http.request("DELETE", &format!("/containers/{}?force=1", self.id), None, &[], Some(API_TIMEOUT))?;
            if !(r.is_success() || r.status == 404) {
                return Err(runtime(format!("remove failed: {}", r.text())));
            }
            self.state = SandboxState::Destroyed;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::os::unix::net::UnixListener;
    use std::sync::{Arc, Mutex};

    type Handler = dyn Fn(&str, &str, &[u8]) -> (u16, Vec<u8>) + Send + Sync;

    /// Serve requests on a Unix socket, answering with `handler(method, path, body)`.
    fn mock(handler: Arc<Handler>) -> (tempfile::TempDir, std::path::PathBuf, Arc<Mutex<Vec<String>>>) {
        let dir = tempfile::tempdir().unwrap();
        let sock = dir.path().join("docker.sock");
        let listener = UnixListener::bind(&sock).unwrap();
        let log = Arc::new(Mutex::new(Vec::new()));
        let seen = log.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let mut parts = line.split_whitespace();
                let method = parts.next().unwrap_or("").to_string();
                let path = parts.next().unwrap_or("").to_string();
                let mut len = 0;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h == "\r\n" {
                        break;
                    }
                    if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                seen.lock().unwrap().push(format!("{method} {path}"));
                let (status, reply) = handler(&method, &path, &body);
                let mut stream = stream;
                let _ = write!(stream, "HTTP/1.1 {status} X\r\nContent-Length: {}\r\n\r\n", reply.len());
                let _ = stream.write_all(&reply);
            }
        });
        (dir, sock, log)
    }

    fn context() -> tempfile::TempDir {
        let ctx = tempfile::tempdir().unwrap();
        fs::write(ctx.path().join("Dockerfile"), "FROM python:3.12\nRUN pip install pytest\nCMD [\"tail\", \"-f\", \"/dev/null\"]\n").unwrap();
        fs::write(ctx.path().join("main.py"), "print(1)\n").unwrap();
        ctx
    }

    fn frame(kind: u8, data: &[u8]) -> Vec<u8> {
        let mut f = vec![kind, 0, 0, 0];
        f.extend_from_slice(&(data.len() as u32).to_be_bytes());
        f.extend_from_slice(data);
        f
    }

    #[test]
    fn provision_exec_and_files_against_mock_runtime() {
        let files: Arc<Mutex<Vec<(String, Vec<u8>)>>> = Arc::default();
        let store = files.clone();
        let handler: Arc<Handler> = Arc::new(move |method, path, body| {
            let ok = |v: Value| (200, v.to_string().into_bytes());
            match (method, path.split('?').next().unwrap()) {
                ("POST", "/build") => (200, b"{\"stream\":\"Step 1/3\"}\n".to_vec()),
                ("POST", "/containers/create") => {
                    let req: Value = serde_json::from_slice(body).unwrap();
                    assert_eq!(req["HostConfig"]["NetworkMode"], "none");
                    (201, br#"{"Id":"c1"}"#.to_vec())
                }
                ("POST", "/containers/c1/start") => (204, Vec::new()),
                ("PUT", "/containers/c1/archive") => {
                    store.lock().unwrap().extend(read_tar(body).unwrap());
                    (200, Vec::new())
                }
                ("GET", "/containers/c1/archive") => {
                    let target = path.split("path=").nth(1).unwrap().replace("%2F", "/");
                    let rel = target.trim_start_matches("/workspace/").to_string();
                    let files = store.lock().unwrap();
                    let hits: Vec<_> = files
                        .iter()
                        .filter(|(p, _)| *p == rel || p.starts_with(&format!("{rel}/")))
                        .map(|(p, c)| {
                            let parent = rel.rsplit_once('/').map(|(d, _)| d.len() + 1).unwrap_or(0);
                            (p[parent..].to_string(), c.clone())
                        })
                        .collect();
                    if hits.is_empty() {
                        (404, b"{}".to_vec())
                    } else {
                        (200, tar_from_files(hits).unwrap())
                    }
                }
                ("POST", "/containers/c1/exec") => {
                    let req: Value = serde_json::from_slice(body).unwrap();
                    assert_eq!(req["Cmd"][0], "timeout");
                    ok(json!({"Id": "e1"}))
                }
                ("POST", "/exec/e1/start") => {
                    let mut b = frame(1, b"hi\n");
                    b.extend(frame(2, b"warn\n"));
                    (200, b)
                }
                ("GET", "/exec/e1/json") => ok(json!({"ExitCode": 3, "Running": false})),
                ("POST", "/containers/c1/stop") => (204, Vec::new()),
                ("DELETE", "/containers/c1") => (204, Vec::new()),
                other => panic!("unexpected request {other:?}"),
            }
        });
        let (_dir, sock, log) = mock(handler);
        let ctx = context();
        let mut sb = DockerProvisioner::new(&sock).provision(&SandboxSpec::new(ctx.path())).unwrap();
        assert_eq!(sb.state(), SandboxState::Running);
        let r = sb.exec("echo hi", Duration::from_secs(5)).unwrap();
        assert_eq!((r.exit_code, r.stdout.as_str(), r.stderr.as_str()), (3, "hi\n", "warn\n"));
        assert_eq!(sb.read_file("main.py").unwrap(), b"print(1)\n");
        assert!(matches!(sb.read_file("nope.py"), Err(SandboxError::NotFound(_))));
        sb.write_file("tests/t.py", b"x").unwrap();
        assert_eq!(sb.list_files("tests").unwrap(), ["tests/t.py"]);
        sb.stop().unwrap();
        sb.destroy().unwrap();
        let log = log.lock().unwrap();
        assert!(log[0].starts_with("POST /build?t=envforge-"));
    }

    #[test]
    fn build_error_names_the_failing_line() {
        let handler: Arc<Handler> = Arc::new(|_, _, _| {
            (200, b"{\"stream\":\"Step 2/3 : RUN pip install pytest\"}\n{\"error\":\"The command '/bin/sh -c pip install pytest' returned a non-zero code: 1\"}\n".to_vec())
        });
        let (_dir, sock, _) = mock(handler);
        let ctx = context();
        let err = DockerProvisioner::new(&sock)
            .provision(&SandboxSpec::new(ctx.path()))
            .err()
            .unwrap()
            .to_string();
        assert!(err.contains("line 2") && err.contains("RUN pip install pytest"), "{err}");
    }
}
