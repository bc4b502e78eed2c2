//! Process-local backend: every handle owns a private temporary directory and
//! runs commands as `bash -c` subprocesses in it.
//!
//! * Commands run in their own process group with a cleared environment
//!   (`PATH`, `HOME`, `TMPDIR`, `LANG`, and Python settings that keep the tree
//!   free of caches). When the command ends or times out the whole group is
//!   killed, so stray background processes cannot outlive the call.
//! * The logical workdir (`/workspace`) is mapped onto the host directory:
//!   occurrences of the workdir path in a command are rewritten to the host
//!   path, and host paths in output are rewritten back.
//! * Provisioning validates the build file and copies the build context into
//!   the workspace. `RUN` steps are only executed when `run_build_steps` is set.
//!
//! The backend gives filesystem separation between handles, not security
//! isolation: commands run with the caller's privileges.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;

use super::dockerfile::validate_dockerfile;
use super::{
    cap_output, relative_path, ExecResult, Provisioner, Sandbox, SandboxError, SandboxSpec,
    SandboxState, OUTPUT_CAP, TIMEOUT_EXIT_CODE,
};

#[derive(Debug, Clone, Default)]
pub struct LocalProvisioner {
    /// Parent directory for sandbox directories; the system temp dir if unset.
    pub base_dir: Option<PathBuf>,
    pub run_build_steps: bool,
}

impl LocalProvisioner {
    pub fn new() -> Self {
        Self::default()
    }
}

pub struct LocalSandbox {
    id: String,
    state: SandboxState,
    workdir: String,
    dir: Option<tempfile::TempDir>,
    root: PathBuf,
}

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    fs::create_dir_all(to)?;
    let mut entries: Vec<_> = fs::read_dir(from)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let src = entry.path();
        let dst = to.join(entry.file_name());
        let meta = fs::metadata(&src)?;
        if meta.is_dir() {
            copy_tree(&src, &dst)?;
        } else if meta.is_file() {
            fs::copy(&src, &dst)?;
        }
    }
    Ok(())
}

impl Provisioner for LocalProvisioner {
    fn provision(&self, spec: &SandboxSpec) -> Result<Box<dyn Sandbox>, SandboxError> {
        let dockerfile = spec.build_context.join("Dockerfile");
        let text = fs::read_to_string(&dockerfile).map_err(|e| SandboxError::Provision {
            message: format!("cannot read {}: {e}", dockerfile.display()),
            log: String::new(),
        })?;
        let instructions = validate_dockerfile(&text)?;
        if !spec.workdir.starts_with('/') {
            return Err(SandboxError::Provision {
                message: format!("workdir {:?} is not absolute", spec.workdir),
                log: String::new(),
            });
        }
        let mut builder = tempfile::Builder::new();
        builder.prefix("envforge-sbx-");
        let dir = match &self.base_dir {
            Some(base) => {
                fs::create_dir_all(base)?;
                builder.tempdir_in(base)?
            }
            None => builder.tempdir()?,
        };
        let base = dir.path().to_path_buf();
        for sub in ["home", "tmp"] {
            fs::create_dir_all(base.join(sub))?;
        }
        let root = base.join("workspace");
        copy_tree(&spec.build_context, &root).map_err(|e| SandboxError::Provision {
            message: format!("cannot populate workspace: {e}"),
            log: String::new(),
        })?;
        let id = format!(
            "local-{}",
            base.file_name().unwrap().to_string_lossy().trim_start_matches("envforge-sbx-")
        );
        let mut sandbox = LocalSandbox {
            id,
            state: SandboxState::Building,
            workdir: spec.workdir.clone(),
            dir: Some(dir),
            root,
        };
        sandbox.state = SandboxState::Running;
        if self.run_build_steps {
            let timeout = Duration::from_secs(spec.limits.default_timeout_secs.max(1));
            for ins in instructions.iter().filter(|i| i.keyword == "RUN") {
                let result = sandbox.exec(&ins.args, timeout)?;
                if !result.success() {
                    return Err(SandboxError::Provision {
                        message: format!("line {}: `{}` exited with {}", ins.line, ins.text, result.exit_code),
                        log: result.combined(),
                    });
                }
            }
        }
        Ok(Box::new(sandbox))
    }
}

fn workdir_ref_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(^|[\s'"=:(])(/[A-Za-z0-9_.-]+)(/|$|[\s'";:)&|])"#).unwrap())
}

/// Read a stream to the end, keeping only the first `OUTPUT_CAP` bytes.
fn drain(mut stream: impl Read + Send + 'static) -> thread::JoinHandle<(Vec<u8>, usize)> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut total = 0usize;
        let mut buf = [0u8; 8192];
        loop {
            match stream.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    total += n;
                    let room = OUTPUT_CAP.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        (kept, total)
    })
}

fn kill_group(pid: u32) {
    // SAFETY: killpg only sends a signal; a stale group id yields ESRCH.
    unsafe {
        libc::killpg(pid as libc::pid_t, libc::SIGKILL);
    }
}

impl LocalSandbox {
    /// Host directory backing the workspace.
    pub fn host_root(&self) -> &Path {
        &self.root
    }

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

    fn host_path(&self, path: &str) -> Result<PathBuf, SandboxError> {
        let rel = relative_path(&self.workdir, path)?;
        Ok(if rel.is_empty() {
            self.root.clone()
        } else {
            self.root.join(rel)
        })
    }

    fn rewrite_command(&self, command: &str) -> String {
        let host = self.root.to_string_lossy();
        let workdir = self.workdir.as_str();
        let mut out = command.to_string();
        // repeat until stable: adjacent references share delimiters
        for _ in 0..4 {
            let next = workdir_ref_re()
                .replace_all(&out, |c: &regex::Captures| {
                    if &c[2] == workdir {
                        format!("{}{}{}", &c[1], host, &c[3])
                    } else {
                        c[0].to_string()
                    }
                })
                .into_owned();
            if next == out {
                break;
            }
            out = next;
        }
        out
    }

    fn scrub(&self, text: String) -> String {
        let host = self.root.to_string_lossy();
        if text.contains(host.as_ref()) {
            text.replace(host.as_ref(), &self.workdir)
        } else {
            text
        }
    }

    fn walk(&self, dir: &Path, rel: &str, out: &mut Vec<String>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let child_rel = if rel.is_empty() {
                name
            } else {
                format!("{rel}/{name}")
            };
            let ty = entry.file_type()?;
            if ty.is_dir() {
                self.walk(&entry.path(), &child_rel, out)?;
            } else if ty.is_file() {
                out.push(child_rel);
            }
        }
        Ok(())
    }
}

impl Sandbox for LocalSandbox {
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
        use std::os::unix::process::CommandExt;

        self.require_running()?;
        let base = self.root.parent().expect("workspace has a parent");
        let path = std::env::var("PATH").unwrap_or_else(|_| "/usr/local/bin:/usr/bin:/bin".into());
        let started = Instant::now();
        let mut child = Command::new("bash")
            .arg("-c")
            .arg(self.rewrite_command(command))
            .current_dir(&self.root)
            .env_clear()
            .env("PATH", path)
            .env("HOME", base.join("home"))
            .env("TMPDIR", base.join("tmp"))
            .env("LANG", "C.UTF-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONHASHSEED", "0")
            .env("PYTEST_ADDOPTS", "-p no:cacheprovider")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0)
            .spawn()?;
        let pid = child.id();
        let out = drain(child.stdout.take().expect("piped"));
        let err = drain(child.stderr.take().expect("piped"));
        let deadline = started + timeout;
        let mut timed_out = false;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if Instant::now() >= deadline {
                timed_out = true;
                kill_group(pid);
                child.wait()?;
                break None;
            }
            thread::sleep(Duration::from_millis(5));
        };
        kill_group(pid);
        let (out_bytes, out_total) = out.join().unwrap_or_default();
        let (err_bytes, err_total) = err.join().unwrap_or_default();
        let exit_code = match status {
            None => TIMEOUT_EXIT_CODE,
            Some(s) => {
                use std::os::unix::process::ExitStatusExt;
                s.code().unwrap_or_else(|| 128 + s.signal().unwrap_or(0))
            }
        };
        Ok(ExecResult {
            exit_code,
            stdout: self.scrub(cap_output(&out_bytes, out_total)),
            stderr: self.scrub(cap_output(&err_bytes, err_total)),
            duration_ms: started.elapsed().as_millis() as u64,
            timed_out,
        })
    }

    fn read_file(&mut self, path: &str) -> Result<Vec<u8>, SandboxError> {
        self.require_running()?;
        let host = self.host_path(path)?;
        match fs::read(&host) {
            Ok(b) => Ok(b),
            Err(e) if matches!(e.kind(), std::io::ErrorKind::NotFound | std::io::ErrorKind::IsADirectory) => {
                Err(SandboxError::NotFound(path.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn write_file(&mut self, path: &str, bytes: &[u8]) -> Result<(), SandboxError> {
        self.require_running()?;
        let rel = relative_path(&self.workdir, path)?;
        if rel.is_empty() {
            return Err(SandboxError::PathEscape(path.to_string()));
        }
        let host = self.root.join(rel);
        if let Some(parent) = host.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(host, bytes)?;
        Ok(())
    }

    fn remove_path(&mut self, path: &str) -> Result<(), SandboxError> {
        self.require_running()?;
        let rel = relative_path(&self.workdir, path)?;
        if rel.is_empty() {
            return Err(SandboxError::PathEscape(path.to_string()));
        }
        let host = self.root.join(rel);
        match fs::symlink_metadata(&host) {
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
            Ok(m) if m.is_dir() => Ok(fs::remove_dir_all(host)?),
            Ok(_) => Ok(fs::remove_file(host)?),
        }
    }

    fn list_files(&mut self, root: &str) -> Result<Vec<String>, SandboxError> {
        self.require_running()?;
        let rel = relative_path(&self.workdir, root)?;
        let host = self.host_path(root)?;
        if !host.is_dir() {
            return Err(SandboxError::NotFound(root.to_string()));
        }
        let mut out = Vec::new();
        self.walk(&host, &rel, &mut out)?;
        out.sort();
        Ok(out)
    }

    fn stop(&mut self) -> Result<(), SandboxError> {
        if self.state == SandboxState::Running {
            self.state = SandboxState::Stopped;
        }
        Ok(())
    }

    fn destroy(&mut self) -> Result<(), SandboxError> {
        self.state = SandboxState::Destroyed;
        if let Some(dir) = self.dir.take() {
            dir.close()?;
        }
        Ok(())
    }
}
