//! Python-side oracles for the stubber: signatures via the `ast` module,
//! import checks and pytest tallies.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

use envforge_core::stub::{stub_repository, PythonStubber, Stubber};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/stub_corpus")
}

/// All files under `root` as (relative path, bytes), sorted.
pub fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            if name == "__pycache__" || name == ".pytest_cache" {
                continue;
            }
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

pub fn write_tree(root: &Path, files: &[(String, Vec<u8>)]) {
    for (rel, bytes) in files {
        let path = root.join(rel);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, bytes).unwrap();
    }
}

pub fn stub_tree(files: &[(String, Vec<u8>)]) -> Vec<(String, Vec<u8>)> {
    stub_repository(&PythonStubber, files.to_vec()).expect("corpus stubs cleanly")
}

fn python(root: &Path, script: &str, args: &[&str]) -> (bool, String) {
    let out = Command::new("python3")
        .arg("-c")
        .arg(script)
        .args(args)
        .current_dir(root)
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .output()
        .expect("python3 runs");
    let mut text = String::from_utf8_lossy(&out.stdout).to_string();
    text.push_str(&String::from_utf8_lossy(&out.stderr));
    (out.status.success(), text)
}

const SIGNATURES: &str = r#"
import ast, pathlib, sys
root = pathlib.Path(".")
for path in sorted(root.rglob("*.py")):
    rel = path.as_posix()
    if rel.startswith("tests/"):
        continue
    tree = ast.parse(path.read_text())
    def visit(node, scope, in_func):
        for child in ast.iter_child_nodes(node):
            if isinstance(child, (ast.FunctionDef, ast.AsyncFunctionDef)):
                if not in_func:
                    ret = ast.unparse(child.returns) if child.returns else ""
                    decos = ",".join(ast.unparse(d) for d in child.decorator_list)
                    kind = "async" if isinstance(child, ast.AsyncFunctionDef) else "def"
                    print("\t".join([rel, scope + child.name, kind, ast.unparse(child.args), ret, decos]))
                visit(child, scope + child.name + ".", True)
            elif isinstance(child, ast.ClassDef):
                visit(child, scope + child.name + ".", in_func)
            else:
                visit(child, scope, in_func)
    visit(tree, "", False)
"#;

/// (file, qualified name, kind, arguments, return annotation, decorators) of
/// every function without a function ancestor.
pub fn signatures(root: &Path) -> Result<BTreeSet<String>, String> {
    let (ok, out) = python(root, SIGNATURES, &[]);
    if !ok {
        return Err(out);
    }
    Ok(out.lines().map(str::to_string).collect())
}

const IMPORT_ALL: &str = r#"
import importlib, pathlib, sys
sys.path.insert(0, ".")
n = 0
for path in sorted(pathlib.Path(".").rglob("*.py")):
    if path.parts[0] == "tests":
        continue
    parts = list(path.with_suffix("").parts)
    if parts[-1] == "__init__":
        parts.pop()
    importlib.import_module(".".join(parts))
    n += 1
print(n)
"#;

/// Compile and import every non-test module; returns how many were imported.
pub fn import_all(root: &Path) -> Result<usize, String> {
    let (ok, out) = python(root, IMPORT_ALL, &[]);
    if !ok {
        return Err(out);
    }
    out.trim().parse().map_err(|_| out)
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct PytestTally {
    pub passed: u32,
    pub failed: u32,
    pub errors: u32,
}

pub fn pytest(root: &Path) -> PytestTally {
    let out = Command::new("python3")
        .args(["-m", "pytest", "-q", "-p", "no:cacheprovider", "tests"])
        .current_dir(root)
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .output()
        .expect("pytest runs");
    let text = String::from_utf8_lossy(&out.stdout);
    let summary = text.lines().rev().find(|l| l.contains(" in ")).unwrap_or("");
    let mut tally = PytestTally::default();
    let words: Vec<&str> = summary.split(|c: char| c == ' ' || c == ',').filter(|w| !w.is_empty()).collect();
    for pair in words.windows(2) {
        let Ok(n) = pair[0].trim_start_matches('=').parse::<u32>() else { continue };
        match pair[1] {
            "passed" => tally.passed = n,
            "failed" => tally.failed = n,
            "error" | "errors" => tally.errors = n,
            _ => {}
        }
    }
    tally
}

/// Whole-pipeline check used by the acceptance suite: returns a short
/// description of what held, or the first violation.
pub fn check_corpus() -> Result<String, String> {
    let original = read_tree(&corpus_dir());
    let sources = original.iter().filter(|(p, _)| PythonStubber.applies(p)).count();
    if sources < 20 {
        return Err(format!("corpus has only {sources} source files"));
    }
    let stubbed = stub_tree(&original);
    if stub_tree(&stubbed) != stubbed {
        return Err("stubbing is not idempotent".into());
    }
    let orig_dir = tempfile::tempdir().unwrap();
    let stub_dir = tempfile::tempdir().unwrap();
    write_tree(orig_dir.path(), &original);
    write_tree(stub_dir.path(), &stubbed);
    let want = signatures(orig_dir.path())?;
    let got = signatures(stub_dir.path())?;
    if want != got {
        let missing: Vec<_> = want.difference(&got).collect();
        let extra: Vec<_> = got.difference(&want).collect();
        return Err(format!("signature sets differ: missing {missing:?}, extra {extra:?}"));
    }
    let imported = import_all(stub_dir.path())?;
    let before = pytest(orig_dir.path());
    if before.passed == 0 || before.failed + before.errors > 0 {
        return Err(format!("original corpus tests: {before:?}"));
    }
    let after = pytest(stub_dir.path());
    if after.passed != 0 || after.failed != before.passed {
        return Err(format!("stubbed corpus tests: {after:?} (original {before:?})"));
    }
    Ok(format!(
        "{sources} files, {} signatures kept, {imported} modules import, {} tests fail after stubbing",
        want.len(),
        after.failed
    ))
}
