//! Everything learned from GNU Make itself: the declared graph from the
//! internal database and per-target recipe text from dry runs.

mod db;
mod phony;
mod recipes;
mod run;

use thiserror::Error;

pub use db::{parse_database, parse_internal_db, DeclaredRule, MakeDb, MakeVariable};
pub use phony::{expand_phony, DeclaredGraph};
pub use recipes::{diff_recipes, snapshot_recipes, CanonicalRecipe, RecipeSnapshot};
pub use run::MakeRunner;

#[derive(Debug, Error)]
pub enum MakeError {
    #[error("make database, line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error(transparent)]
    Cycle(#[from] crate::graph::GraphError),
    #[error("`{command}` exited with status {status}\n{stderr}")]
    MakeFailed { command: String, status: i32, stderr: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}
