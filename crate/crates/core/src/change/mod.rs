//! What a commit changed: files, include directives, and whether any
//! makefile was touched.

mod diff;
mod directives;
mod includes;

use thiserror::Error;

pub use diff::{parse_diff, CommitDelta, Rename};
pub use directives::{extract_directive_changes, include_specs, DirectiveChange, IncludeSpec};
pub use includes::{compiler_dependencies, resolve_include, transitive_includes, IncludeClosure, Resolution, SearchPaths};

use crate::path::ProjectPath;

#[derive(Debug, Error)]
pub enum ChangeError {
    #[error("diff line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("cannot read {path}: {source}")]
    IoError {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FileKind {
    Source,
    Header,
    Makefile,
    Other,
}

/// Suffix lists used to classify files, without the leading dot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suffixes {
    pub source: Vec<String>,
    pub header: Vec<String>,
}

impl Default for Suffixes {
    fn default() -> Self {
        Suffixes {
            source: ["c", "cpp", "cc"].iter().map(|s| s.to_string()).collect(),
            header: ["h", "hpp"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Suffixes {
    pub fn kind(&self, path: &ProjectPath) -> FileKind {
        let name = path.file_name();
        if matches!(name, "Makefile" | "makefile" | "GNUmakefile") {
            return FileKind::Makefile;
        }
        match path.extension() {
            Some("mk") => FileKind::Makefile,
            Some(e) if self.source.iter().any(|s| s == e) => FileKind::Source,
            Some(e) if self.header.iter().any(|s| s == e) => FileKind::Header,
            _ => FileKind::Other,
        }
    }

    pub fn is_code(&self, path: &ProjectPath) -> bool {
        matches!(self.kind(path), FileKind::Source | FileKind::Header)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds() {
        let s = Suffixes::default();
        let k = |p: &str| s.kind(&ProjectPath::new(p).unwrap());
        assert_eq!(k("src/a.c"), FileKind::Source);
        assert_eq!(k("x.cpp"), FileKind::Source);
        assert_eq!(k("include/h.hpp"), FileKind::Header);
        assert_eq!(k("sub/Makefile"), FileKind::Makefile);
        assert_eq!(k("rules.mk"), FileKind::Makefile);
        assert_eq!(k("GNUmakefile"), FileKind::Makefile);
        assert_eq!(k("src/Readme"), FileKind::Other);
        assert_eq!(k("a.cxx"), FileKind::Other);
        assert_eq!(k(".h"), FileKind::Other);
    }
}
