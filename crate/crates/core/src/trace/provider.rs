//! Where traces come from: a live traced `make` run, or recorded trace files.

use std::path::{Path, PathBuf};

use super::{format, BuildTrace, TraceError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildMode {
    /// `make -B`: everything is rebuilt.
    Clean,
    /// Plain `make`: only what make considers out of date.
    Incremental,
    /// `make -B <target>`: one target and everything under it.
    SingleTarget(String),
}

impl BuildMode {
    /// Arguments appended to the configured make arguments.
    pub fn make_args(&self, base: &[String]) -> Vec<String> {
        let mut v = Vec::new();
        if !matches!(self, BuildMode::Incremental) {
            v.push("-B".to_string());
        }
        v.extend(base.iter().cloned());
        if let BuildMode::SingleTarget(t) = self {
            v.push(t.clone());
        }
        v
    }
}

/// File stem a trace is stored under, e.g. `clean`, `abc123.incremental`,
/// `abc123.target.src%2Fa.o`.
pub fn trace_label(commit: &str, mode: &BuildMode) -> String {
    match mode {
        BuildMode::Clean => "clean".to_string(),
        BuildMode::Incremental => format!("{commit}.incremental"),
        BuildMode::SingleTarget(t) => format!("{commit}.target.{}", escape_target(t)),
    }
}

fn escape_target(t: &str) -> String {
    let mut out = String::new();
    for c in t.chars() {
        match c {
            '%' => out.push_str("%25"),
            '/' => out.push_str("%2F"),
            ' ' => out.push_str("%20"),
            c => out.push(c),
        }
    }
    out
}

pub trait TraceProvider {
    fn trace_build(
        &mut self,
        project_root: &Path,
        make_args: &[String],
        mode: &BuildMode,
        commit: &str,
    ) -> Result<BuildTrace, TraceError>;
}

/// Runs make under the system tracer. Traces are kept in `persist_dir` when set.
#[derive(Debug, Clone, Default)]
pub struct LiveTracer {
    pub make_program: Option<String>,
    pub persist_dir: Option<PathBuf>,
}

impl TraceProvider for LiveTracer {
    fn trace_build(
        &mut self,
        project_root: &Path,
        make_args: &[String],
        mode: &BuildMode,
        commit: &str,
    ) -> Result<BuildTrace, TraceError> {
        let make = self.make_program.clone().unwrap_or_else(|| "make".to_string());
        let trace = run_traced_build_with(&make, project_root, make_args, mode)?;
        if let Some(dir) = &self.persist_dir {
            let file = dir.join(format!("{}.trace", trace_label(commit, mode)));
            format::write_trace(&trace, &file)?;
        }
        Ok(trace)
    }
}

/// Reads `<dir>/<label>.trace` instead of building.
#[derive(Debug, Clone)]
pub struct ReplayTracer {
    pub dir: PathBuf,
}

impl TraceProvider for ReplayTracer {
    fn trace_build(&mut self, _root: &Path, _args: &[String], mode: &BuildMode, commit: &str) -> Result<BuildTrace, TraceError> {
        format::read_trace(&self.dir.join(format!("{}.trace", trace_label(commit, mode))))
    }
}

/// Runs `make` in `project_root` under the tracer and returns the event log.
pub fn run_traced_build(project_root: &Path, make_args: &[String], mode: &BuildMode) -> Result<BuildTrace, TraceError> {
    run_traced_build_with("make", project_root, make_args, mode)
}

fn run_traced_build_with(make: &str, project_root: &Path, make_args: &[String], mode: &BuildMode) -> Result<BuildTrace, TraceError> {
    let mut argv = vec![make.to_string()];
    argv.extend(mode.make_args(make_args));
    trace_command(project_root, &argv)
}

#[cfg(all(target_os = "linux", target_arch = "x86_64"))]
fn trace_command(root: &Path, argv: &[String]) -> Result<BuildTrace, TraceError> {
    super::ptrace::trace_command(root, argv)
}

#[cfg(not(all(target_os = "linux", target_arch = "x86_64")))]
fn trace_command(_root: &Path, _argv: &[String]) -> Result<BuildTrace, TraceError> {
    Err(TraceError::TracerUnavailable(
        "live tracing needs Linux on x86_64; record traces elsewhere and use replay mode".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(trace_label("c1", &BuildMode::Clean), "clean");
        assert_eq!(trace_label("c1", &BuildMode::Incremental), "c1.incremental");
        assert_eq!(trace_label("c1", &BuildMode::SingleTarget("src/a.o".into())), "c1.target.src%2Fa.o");
    }

    #[test]
    fn mode_arguments() {
        let base = vec!["CC=gcc".to_string()];
        assert_eq!(BuildMode::Clean.make_args(&base), ["-B", "CC=gcc"]);
        assert_eq!(BuildMode::Incremental.make_args(&base), ["CC=gcc"]);
        assert_eq!(BuildMode::SingleTarget("x.o".into()).make_args(&base), ["-B", "CC=gcc", "x.o"]);
    }

    #[test]
    fn replay_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = ReplayTracer { dir: dir.path().to_path_buf() };
        assert!(matches!(
            r.trace_build(dir.path(), &[], &BuildMode::Clean, "c"),
            Err(TraceError::MissingTrace(_))
        ));
    }
}
