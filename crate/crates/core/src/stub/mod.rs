//! Repository stubbing: every function body becomes a no-op while the
//! surrounding source is kept byte for byte.

pub mod python;

use thiserror::Error;

use crate::sandbox::tarball::ExportOptions;
use crate::sandbox::{tarball, Sandbox, SandboxError};

#[derive(Debug, Error)]
pub enum StubError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path} is not UTF-8 text")]
    Encoding { path: String },
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

/// A rewriter for one source language.
pub trait Stubber: Send + Sync {
    /// Whether `path` is a source file of this language that should be stubbed.
    fn applies(&self, path: &str) -> bool;
    fn stub_source(&self, path: &str, source: &str) -> Result<String, StubError>;
}

pub struct PythonStubber;

/// Test files are never stubbed.
pub fn is_test_path(path: &str) -> bool {
    let name = path.rsplit('/').next().unwrap_or(path);
    path.starts_with("tests/")
        || path.contains("/tests/")
        || name.starts_with("test_")
        || name.ends_with("_test.py")
        || name == "conftest.py"
}

impl Stubber for PythonStubber {
    fn applies(&self, path: &str) -> bool {
        path.ends_with(".py") && !is_test_path(path)
    }

    fn stub_source(&self, path: &str, source: &str) -> Result<String, StubError> {
        python::stub_python(path, source)
    }
}

/// Stub every applicable file of an in-memory tree; other files pass through.
pub fn stub_repository(
    stubber: &dyn Stubber,
    files: Vec<(String, Vec<u8>)>,
) -> Result<Vec<(String, Vec<u8>)>, StubError> {
    files
        .into_iter()
        .map(|(path, bytes)| {
            if !stubber.applies(&path) {
                return Ok((path, bytes));
            }
            let source = String::from_utf8(bytes).map_err(|_| StubError::Encoding { path: path.clone() })?;
            let stubbed = stubber.stub_source(&path, &source)?;
            Ok((path, stubbed.into_bytes()))
        })
        .collect()
}

/// Stub the workspace of a sandbox in place; returns the rewritten paths.
pub fn stub_workspace(stubber: &dyn Stubber, sandbox: &mut dyn Sandbox) -> Result<Vec<String>, StubError> {
    let files = tarball::read_tar(&tarball::export_tar(sandbox, "", ExportOptions::default())?)?;
    let mut changed = Vec::new();
    for (path, bytes) in stub_repository(stubber, files.clone())? {
        let before = files.iter().find(|(p, _)| *p == path).map(|(_, b)| b);
        if before != Some(&bytes) {
            sandbox.write_file(&path, &bytes)?;
            changed.push(path);
        }
    }
    Ok(changed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tests_are_not_stubbed() {
        let s = PythonStubber;
        assert!(s.applies("pkg/mod.py"));
        assert!(!s.applies("tests/test_mod.py"));
        assert!(!s.applies("pkg/tests/helpers.py"));
        assert!(!s.applies("conftest.py"));
        assert!(!s.applies("README.md"));
        let files = vec![
            ("a.py".to_string(), b"def f():\n    return 1\n".to_vec()),
            ("tests/test_a.py".to_string(), b"def test():\n    assert 1\n".to_vec()),
        ];
        let out = stub_repository(&s, files).unwrap();
        assert_eq!(out[0].1, b"def f():\n    pass\n");
        assert_eq!(out[1].1, b"def test():\n    assert 1\n");
    }
}
