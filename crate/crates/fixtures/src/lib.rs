//! Synthetic Make/C projects for the depsentry test suites.
//!
//! Everything here is deterministic: generators take explicit seeds and git
//! commits use fixed identities and dates.

pub mod generator;
pub mod scenarios;
pub mod tree;

pub use generator::{GenProject, Step, SCRIPT};
pub use tree::Files;
