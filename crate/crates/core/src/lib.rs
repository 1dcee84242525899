//! Detection of missing and redundant dependencies in GNU Make C/C++ builds.
//!
//! The library compares the dependencies a project declares in its
//! makefiles with the dependencies observed while the build runs, and keeps
//! the observed graph up to date across commits without full rebuilds.

pub mod change;
pub mod config;
pub mod detect;
pub mod graph;
pub mod infer;
pub mod make;
pub mod oracle;
pub mod path;
pub mod pipeline;
pub mod store;
pub mod trace;
mod util;

pub use graph::{DependencyGraph, GraphDelta, GraphKind, Provenance, TargetNode};
pub use path::ProjectPath;
