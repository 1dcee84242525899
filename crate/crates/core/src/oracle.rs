//! Behavioral confirmation of findings.
//!
//! A missing dependency is confirmed when making the dependency newer does
//! not rebuild the target. A redundant dependency is confirmed when the
//! target still builds in a scratch copy after the prerequisite is removed
//! from its rule and the file is out of reach.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use nix::sys::stat::{utimensat, UtimensatFlags};
use nix::sys::time::TimeSpec;
use thiserror::Error;
use walkdir::WalkDir;

use crate::detect::{Finding, FindingKind};
use crate::make::{parse_database, MakeDb, MakeRunner};
use crate::path::{normalize_path, ProjectPath, Resolved};

/// Seconds added to the newest mtime in the tree when bumping a file.
pub const BUMP_SECONDS: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    TimestampMutation,
    PrerequisiteRemoval,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::TimestampMutation => "timestamp-mutation",
            Method::PrerequisiteRemoval => "prerequisite-removal",
        }
    }

    pub fn for_kind(kind: FindingKind) -> Method {
        match kind {
            FindingKind::MissingDependency => Method::TimestampMutation,
            FindingKind::RedundantDependency => Method::PrerequisiteRemoval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub finding: Finding,
    pub confirmed: bool,
    pub method: Method,
    pub detail: String,
}

impl Verdict {
    /// `kind<TAB>target<TAB>dependency<TAB>confirmed<TAB>method`
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.finding.kind.as_str(),
            self.finding.target,
            self.finding.dependency,
            self.confirmed,
            self.method.as_str()
        )
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("probe build failed: {0}")]
    ProbeFailed(String),
    #[error("cannot rewrite the rule of {target}: {msg}")]
    RewriteFailed { target: String, msg: String },
    #[error("a {0} finding cannot be checked this way")]
    WrongKind(&'static str),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> OracleError {
    let context = context.into();
    move |source| OracleError::Io { context, source }
}

/// Top-level entries of the project that probes never touch.
#[derive(Debug, Clone)]
pub struct ProbeScope {
    pub skip: BTreeSet<PathBuf>,
}

impl ProbeScope {
    pub fn new(project_root: &Path, store_dir: Option<&Path>) -> ProbeScope {
        let mut skip: BTreeSet<PathBuf> = [project_root.join(".git")].into_iter().collect();
        if let Some(s) = store_dir {
            skip.insert(s.to_path_buf());
            if let Ok(c) = s.canonicalize() {
                skip.insert(c);
            }
        }
        ProbeScope { skip }
    }

    fn walk<'a>(&'a self, root: &Path) -> impl Iterator<Item = walkdir::DirEntry> + 'a {
        WalkDir::new(root)
            .min_depth(1)
            .into_iter()
            .filter_entry(move |e| !self.skip.contains(e.path()))
            .filter_map(Result::ok)
    }
}

fn mtime_of(p: &Path) -> Option<SystemTime> {
    fs::metadata(p).and_then(|m| m.modified()).ok()
}

fn to_timespec(t: SystemTime) -> TimeSpec {
    let d = t.duration_since(UNIX_EPOCH).unwrap_or_default();
    TimeSpec::new(d.as_secs() as i64, d.subsec_nanos() as i64)
}

fn set_mtime(p: &Path, t: SystemTime) -> Result<(), OracleError> {
    utimensat(nix::fcntl::AT_FDCWD, p, &TimeSpec::UTIME_OMIT, &to_timespec(t), UtimensatFlags::FollowSymlink)
        .map_err(|e| OracleError::Io { context: format!("setting mtime of {}", p.display()), source: e.into() })
}

fn probe_failed(e: crate::make::MakeError) -> OracleError {
    OracleError::ProbeFailed(e.to_string())
}

/// Bumps the dependency's mtime past everything in the tree, runs make, and
/// confirms the finding when the target was left alone. Every mtime that
/// changed during the probe is put back afterwards.
pub fn verify_md(finding: &Finding, project_root: &Path, runner: &MakeRunner, scope: &ProbeScope) -> Result<Verdict, OracleError> {
    if finding.kind != FindingKind::MissingDependency {
        return Err(OracleError::WrongKind("redundant-dependency"));
    }
    runner.build(project_root, &[], &[]).map_err(probe_failed)?;

    let mut before: BTreeMap<PathBuf, SystemTime> = BTreeMap::new();
    let mut newest = UNIX_EPOCH;
    for e in scope.walk(project_root) {
        if let Some(t) = mtime_of(e.path()) {
            newest = newest.max(t);
            before.insert(e.path().to_path_buf(), t);
        }
    }
    let target = finding.target.to_abs(project_root);
    let dep = finding.dependency.to_abs(project_root);
    let target_before = mtime_of(&target);
    if target_before.is_none() {
        return Err(OracleError::ProbeFailed(format!("{} does not exist after building", finding.target)));
    }
    if !dep.exists() {
        return Err(OracleError::ProbeFailed(format!("{} does not exist", finding.dependency)));
    }
    let bumped = newest.max(SystemTime::now()) + Duration::from_secs(BUMP_SECONDS);
    set_mtime(&dep, bumped)?;

    let result = runner.build(project_root, &[], &[]);
    let target_after = mtime_of(&target);

    let mut restore_err = None;
    for e in scope.walk(project_root) {
        if let (Some(old), Some(now)) = (before.get(e.path()), mtime_of(e.path())) {
            if *old != now {
                if let Err(err) = set_mtime(e.path(), *old) {
                    restore_err.get_or_insert(err);
                }
            }
        }
    }
    result.map_err(probe_failed)?;
    if let Some(err) = restore_err {
        return Err(err);
    }
    let confirmed = target_after == target_before;
    let detail = if confirmed {
        format!("{} was not rebuilt after {} changed", finding.target, finding.dependency)
    } else {
        format!("{} was rebuilt after {} changed", finding.target, finding.dependency)
    };
    Ok(Verdict { finding: finding.clone(), confirmed, method: Method::TimestampMutation, detail })
}

fn copy_tree(from: &Path, to: &Path, scope: &ProbeScope) -> Result<(), OracleError> {
    for e in scope.walk(from) {
        let rel = e.path().strip_prefix(from).expect("walk stays under the root");
        let dest = to.join(rel);
        let ft = e.file_type();
        if ft.is_dir() {
            fs::create_dir_all(&dest).map_err(io_err(format!("creating {}", dest.display())))?;
        } else if ft.is_symlink() {
            let link = fs::read_link(e.path()).map_err(io_err(format!("reading link {}", e.path().display())))?;
            std::os::unix::fs::symlink(&link, &dest).map_err(io_err(format!("linking {}", dest.display())))?;
        } else {
            fs::copy(e.path(), &dest).map_err(io_err(format!("copying {}", e.path().display())))?;
            if let Some(t) = mtime_of(e.path()) {
                set_mtime(&dest, t)?;
            }
        }
    }
    Ok(())
}

/// A makefile equivalent to the database, with `dep` removed from `target`.
pub fn flatten_without(db: &MakeDb, target: &str, dep: &ProjectPath, root: &Path) -> Result<String, OracleError> {
    let same = |s: &str| matches!(normalize_path(s, root), Ok(Resolved::Project(p)) if p == *dep);
    let rule = db
        .rule(target)
        .ok_or_else(|| OracleError::RewriteFailed { target: target.into(), msg: "no rule in the make database".into() })?;
    if rule.recipe_lines.is_empty() {
        return Err(OracleError::RewriteFailed { target: target.into(), msg: "rule has no recipe".into() });
    }
    if !rule.prerequisites.iter().chain(&rule.order_only).any(|p| same(p)) {
        return Err(OracleError::RewriteFailed {
            target: target.into(),
            msg: format!("{dep} is not a direct prerequisite"),
        });
    }
    let mut out = String::new();
    for v in &db.variables {
        out.push_str(&v.text);
        out.push('\n');
    }
    out.push('\n');
    for r in &db.rules {
        for tv in &r.target_vars {
            out.push_str(tv);
            out.push('\n');
        }
        let keep = |p: &&String| r.target != target || !same(p);
        let pre: Vec<&str> = r.prerequisites.iter().filter(keep).map(|s| s.as_str()).collect();
        let oo: Vec<&str> = r.order_only.iter().filter(keep).map(|s| s.as_str()).collect();
        out.push_str(&r.target);
        out.push_str(if r.double_colon { "::" } else { ":" });
        for p in &pre {
            out.push(' ');
            out.push_str(p);
        }
        if !oo.is_empty() {
            out.push_str(" |");
            for p in &oo {
                out.push(' ');
                out.push_str(p);
            }
        }
        out.push('\n');
        for l in &r.recipe_lines {
            out.push('\t');
            out.push_str(l.strip_prefix('\t').unwrap_or(l));
            out.push('\n');
        }
        out.push('\n');
    }
    if !db.phony.is_empty() {
        out.push_str(".PHONY:");
        for p in &db.phony {
            out.push(' ');
            out.push_str(p);
        }
        out.push('\n');
    }
    Ok(out)
}

const FLAT_MAKEFILE: &str = ".depsentry-flat.mk";
const HIDDEN_SUFFIX: &str = ".depsentry-hidden";

/// Removes the prerequisite in a scratch copy and builds the target from a
/// clean state. The original project is only read.
pub fn verify_rd(finding: &Finding, project_root: &Path, runner: &MakeRunner, scope: &ProbeScope) -> Result<Verdict, OracleError> {
    if finding.kind != FindingKind::RedundantDependency {
        return Err(OracleError::WrongKind("missing-dependency"));
    }
    let scratch = tempfile::tempdir().map_err(io_err("creating scratch directory"))?;
    let root = scratch.path();
    copy_tree(project_root, root, scope)?;

    let target = finding.target.as_str();
    let db_text = runner.database_for(root, &[target.to_string()]).map_err(probe_failed)?;
    let db = parse_database(&db_text).map_err(|e| OracleError::RewriteFailed { target: target.into(), msg: e.to_string() })?;
    let flat = flatten_without(&db, target, &finding.dependency, root)?;
    fs::write(root.join(FLAT_MAKEFILE), flat).map_err(io_err("writing scratch makefile"))?;

    // Start from clean: everything with a recipe is rebuilt.
    for r in db.rules.iter().filter(|r| !r.recipe_lines.is_empty() && !db.phony.contains(&r.target)) {
        let p = root.join(&r.target);
        if p.is_file() || p.is_symlink() {
            let _ = fs::remove_file(&p);
        }
    }
    let rule = db.rule(target).expect("flatten_without found the rule");
    let same = |s: &String| matches!(normalize_path(s, root), Ok(Resolved::Project(p)) if p == finding.dependency);
    let others: Vec<String> = rule.prerequisites.iter().chain(&rule.order_only).filter(|p| !same(p)).cloned().collect();
    // The whole build first, so inputs the target reads without declaring
    // them (generated headers) exist. Failures here surface below.
    let _ = runner.build(root, &["-f", FLAT_MAKEFILE, "-k"], &[]);
    if !others.is_empty() {
        runner.build(root, &["-f", FLAT_MAKEFILE], &others).map_err(probe_failed)?;
    }
    let out = root.join(target);
    if out.is_file() || out.is_symlink() {
        let _ = fs::remove_file(&out);
    }

    let dep = finding.dependency.to_abs(root);
    if dep.exists() || dep.is_symlink() {
        let hidden = PathBuf::from(format!("{}{}", dep.display(), HIDDEN_SUFFIX));
        fs::rename(&dep, &hidden).map_err(io_err(format!("hiding {}", finding.dependency)))?;
    }
    let mut leading: Vec<String> = vec!["-f".into(), FLAT_MAKEFILE.into()];
    for o in &others {
        leading.push("-o".into());
        leading.push(o.clone());
    }
    let leading: Vec<&str> = leading.iter().map(|s| s.as_str()).collect();
    let result = runner.build(root, &leading, &[target.to_string()]);
    let (confirmed, detail) = match result {
        Ok(()) => (true, format!("{} builds without {}", finding.target, finding.dependency)),
        Err(e) => (false, format!("{} does not build without {}: {e}", finding.target, finding.dependency)),
    };
    Ok(Verdict { finding: finding.clone(), confirmed, method: Method::PrerequisiteRemoval, detail })
}

/// Dispatches on the finding's kind.
pub fn verify(finding: &Finding, project_root: &Path, runner: &MakeRunner, scope: &ProbeScope) -> Result<Verdict, OracleError> {
    match finding.kind {
        FindingKind::MissingDependency => verify_md(finding, project_root, runner, scope),
        FindingKind::RedundantDependency => verify_rd(finding, project_root, runner, scope),
    }
}
