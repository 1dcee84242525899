//! Writing file maps to disk and driving git in fixture repositories.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::process::{Command, Stdio};

/// Relative path to file contents.
pub type Files = BTreeMap<String, String>;

/// Writes `files` under `root`, skipping unchanged files and deleting the
/// ones `previous` had that `files` does not.
pub fn sync(root: &Path, previous: &Files, files: &Files) -> io::Result<()> {
    for (rel, body) in files {
        if previous.get(rel) == Some(body) && root.join(rel).exists() {
            continue;
        }
        let p = root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(p, body)?;
    }
    for rel in previous.keys().filter(|k| !files.contains_key(*k)) {
        match fs::remove_file(root.join(rel)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e),
            _ => {}
        }
    }
    Ok(())
}

pub fn write_all(root: &Path, files: &Files) -> io::Result<()> {
    sync(root, &Files::new(), files)
}

/// Runs git in `dir` and returns its stdout; panics on failure since
/// fixtures are only used from tests.
pub fn git(dir: &Path, args: &[&str]) -> String {
    let out = Command::new("git")
        .current_dir(dir)
        .args(["-c", "user.name=fixture", "-c", "user.email=fixture@example.invalid", "-c", "commit.gpgsign=false"])
        .args(args)
        .env("GIT_AUTHOR_DATE", "2024-01-01T00:00:00Z")
        .env("GIT_COMMITTER_DATE", "2024-01-01T00:00:00Z")
        .output()
        .expect("git is installed");
    assert!(
        out.status.success(),
        "git {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn init_repo(dir: &Path) {
    git(dir, &["init", "-q", "-b", "main"]);
}

/// Stages everything and commits; returns the full hash.
pub fn commit_all(dir: &Path, message: &str) -> String {
    git(dir, &["add", "-A"]);
    git(dir, &["commit", "-q", "--allow-empty", "-m", message]);
    git(dir, &["rev-parse", "HEAD"]).trim().to_string()
}

/// Extracts the tracked tree at `rev` into `dest` (no build products).
pub fn export(dir: &Path, rev: &str, dest: &Path) -> io::Result<()> {
    fs::create_dir_all(dest)?;
    let mut archive = Command::new("git")
        .current_dir(dir)
        .args(["archive", "--format=tar", rev])
        .stdout(Stdio::piped())
        .spawn()?;
    let stdout = archive.stdout.take().expect("piped");
    let tar = Command::new("tar").arg("-x").arg("-C").arg(dest).stdin(stdout).status()?;
    let st = archive.wait()?;
    if !st.success() || !tar.success() {
        return Err(io::Error::other(format!("exporting {rev} failed")));
    }
    Ok(())
}
