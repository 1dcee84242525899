//! Shared helpers for the command-line test targets.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use depsentry::config::{Config, Overrides, VcsMode};
use depsentry::detect::{Finding, FindingKind};
use depsentry::trace::{build_actual_graph, run_traced_build, BuildMode, TraceError};
use depsentry::{DependencyGraph, Provenance};
use depsentry_fixtures::tree;

pub fn config(root: &Path, store: &Path, replay: Option<PathBuf>, vcs: VcsMode) -> Config {
    let o = Overrides { store: Some(store.to_path_buf()), replay, vcs_mode: Some(vcs), make_args: None };
    Config::load(root, o).expect("fixture config")
}

/// `None` when live tracing works here, otherwise why not.
pub fn tracer_unavailable() -> Option<String> {
    let dir = tempfile::tempdir().ok()?;
    std::fs::write(dir.path().join("Makefile"), "all:\n\t@true\n").ok()?;
    match run_traced_build(dir.path(), &[], &BuildMode::Clean) {
        Err(TraceError::TracerUnavailable(why)) => Some(why),
        _ => None,
    }
}

/// Graph of a traced clean build of `rev` exported from `repo` into a scratch directory.
pub fn clean_build_graph(repo: &Path, rev: &str) -> Result<DependencyGraph, String> {
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    tree::export(repo, rev, scratch.path()).map_err(|e| e.to_string())?;
    let trace = run_traced_build(scratch.path(), &[], &BuildMode::Clean).map_err(|e| e.to_string())?;
    build_actual_graph(&trace, Provenance::CleanTrace, rev).map(|b| b.graph).map_err(|e| e.to_string())
}

/// Per-target differences, one line each; empty when the structures match.
pub fn graph_mismatch(got: &DependencyGraph, want: &DependencyGraph) -> Vec<String> {
    let mut out = Vec::new();
    let targets: BTreeSet<_> = got.targets().chain(want.targets()).cloned().collect();
    for t in targets {
        match (got.deps(&t), want.deps(&t)) {
            (Some(a), Some(b)) if a == b => {}
            (Some(a), Some(b)) => {
                let extra: Vec<_> = a.difference(b).map(|p| p.as_str()).collect();
                let missing: Vec<_> = b.difference(a).map(|p| p.as_str()).collect();
                out.push(format!("{t}: extra {extra:?} missing {missing:?}"));
            }
            (Some(_), None) => out.push(format!("{t}: only in merged graph")),
            (None, _) => out.push(format!("{t}: only in clean-build graph")),
        }
    }
    out
}

pub type Key = (FindingKind, String, String);

pub fn key(f: &Finding) -> Key {
    (f.kind, f.target.to_string(), f.dependency.to_string())
}

pub fn keys(findings: &[Finding]) -> BTreeSet<Key> {
    findings.iter().map(key).collect()
}

pub fn md(t: &str, d: &str) -> Key {
    (FindingKind::MissingDependency, t.to_string(), d.to_string())
}

pub fn rd(t: &str, d: &str) -> Key {
    (FindingKind::RedundantDependency, t.to_string(), d.to_string())
}

/// Diff between two committed revisions, as `git diff` prints it.
pub fn diff_between(repo: &Path, from: &str, to: &str) -> String {
    tree::git(repo, &["diff", "-M", from, to])
}

/// Gives the filesystem clock a tick so files written next are strictly
/// newer than the last build's outputs.
pub fn tick() {
    std::thread::sleep(std::time::Duration::from_millis(20));
}
