//! Build tracing: the event model, the on-disk trace format, classification
//! of process file accesses, and the live and replay trace sources.

mod classify;
mod format;
#[cfg(all(target_os = "linux", target_arch = "x86_64"))]
mod ptrace;
mod provider;

use std::path::PathBuf;

use thiserror::Error;

pub use classify::{build_actual_graph, classify_process, ActualBuild, ProcessFileSummary};
pub use format::{parse_trace, read_trace, write_trace};
pub use provider::{run_traced_build, trace_label, BuildMode, LiveTracer, ReplayTracer, TraceProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Read,
    Write,
    Create,
    Delete,
    /// `path` is the old name, `path2` the new one.
    Rename,
    /// `path` holds the command line.
    Exec,
    Spawn,
    /// `path` holds the exit status.
    Exit,
}

impl Op {
    pub fn code(self) -> char {
        match self {
            Op::Read => 'R',
            Op::Write => 'W',
            Op::Create => 'C',
            Op::Delete => 'D',
            Op::Rename => 'N',
            Op::Exec => 'X',
            Op::Spawn => 'S',
            Op::Exit => 'E',
        }
    }

    pub fn from_code(s: &str) -> Option<Op> {
        Some(match s {
            "R" => Op::Read,
            "W" => Op::Write,
            "C" => Op::Create,
            "D" => Op::Delete,
            "N" => Op::Rename,
            "X" => Op::Exec,
            "S" => Op::Spawn,
            "E" => Op::Exit,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub seq: u64,
    pub pid: i32,
    pub ppid: i32,
    pub op: Op,
    pub path: String,
    pub path2: Option<String>,
}

/// The ordered event log of one build invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildTrace {
    /// Root the absolute paths in the events were recorded under.
    pub project_root: PathBuf,
    pub events: Vec<TraceEvent>,
}

impl BuildTrace {
    pub fn root_pid(&self) -> Option<i32> {
        self.events.first().map(|e| e.pid)
    }

    /// Exit status of the root process, if the trace recorded it.
    pub fn root_status(&self) -> Option<i32> {
        let root = self.root_pid()?;
        self.events
            .iter()
            .rev()
            .find(|e| e.pid == root && e.op == Op::Exit)
            .and_then(|e| e.path.parse().ok())
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("build failed with status {status}\n{stderr_tail}")]
    BuildFailed { status: i32, stderr_tail: String },
    #[error("tracer unavailable: {0}")]
    TracerUnavailable(String),
    #[error("malformed trace at line {line}: {msg}")]
    TraceParseError { line: usize, msg: String },
    #[error("no recorded trace {0}")]
    MissingTrace(PathBuf),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl TraceError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> TraceError {
        TraceError::Io { context: context.into(), source }
    }
}
