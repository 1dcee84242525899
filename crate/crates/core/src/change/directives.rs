//! `#include` directives added or removed by a commit.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;

use super::{CommitDelta, Suffixes};
use crate::path::ProjectPath;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IncludeSpec {
    /// `#include "name"`
    Quoted(String),
    /// `#include <name>`
    Angled(String),
    /// `#include MACRO`; not resolvable without preprocessing.
    Macro(String),
}

impl fmt::Display for IncludeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IncludeSpec::Quoted(s) => write!(f, "\"{s}\""),
            IncludeSpec::Angled(s) => write!(f, "<{s}>"),
            IncludeSpec::Macro(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectiveChange {
    pub file: ProjectPath,
    pub added_includes: BTreeSet<IncludeSpec>,
    pub removed_includes: BTreeSet<IncludeSpec>,
}

static INCLUDE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^\s*#\s*include\s*(?:"([^"]+)"|<([^>]+)>|([A-Za-z_][A-Za-z0-9_]*))"#).unwrap());

/// The include spec on one source line, if it is an include directive.
pub fn parse_include_line(line: &str) -> Option<IncludeSpec> {
    let c = INCLUDE.captures(line)?;
    if let Some(q) = c.get(1) {
        Some(IncludeSpec::Quoted(q.as_str().to_string()))
    } else if let Some(a) = c.get(2) {
        Some(IncludeSpec::Angled(a.as_str().to_string()))
    } else {
        c.get(3).map(|m| IncludeSpec::Macro(m.as_str().to_string()))
    }
}

/// All include directives of a file's text, in order of appearance.
pub fn include_specs(text: &str) -> Vec<IncludeSpec> {
    text.lines().filter_map(parse_include_line).collect()
}

/// Include directives on the `+`/`-` lines of modified and renamed source
/// and header files. A directive removed and re-added verbatim cancels out.
pub fn extract_directive_changes(delta: &CommitDelta, suffixes: &Suffixes) -> Vec<DirectiveChange> {
    let mut out = Vec::new();
    let files = delta
        .modified
        .iter()
        .map(|(p, h)| (p, h))
        .chain(delta.renamed.iter().map(|r| (&r.to, &r.hunks)));
    for (file, hunks) in files {
        if !suffixes.is_code(file) {
            continue;
        }
        let mut added = BTreeSet::new();
        let mut removed = BTreeSet::new();
        for h in hunks {
            for line in h.lines().skip(1) {
                if let Some(rest) = line.strip_prefix('+') {
                    added.extend(parse_include_line(rest));
                } else if let Some(rest) = line.strip_prefix('-') {
                    removed.extend(parse_include_line(rest));
                }
            }
        }
        let both: BTreeSet<IncludeSpec> = added.intersection(&removed).cloned().collect();
        added.retain(|s| !both.contains(s));
        removed.retain(|s| !both.contains(s));
        if !added.is_empty() || !removed.is_empty() {
            out.push(DirectiveChange { file: file.clone(), added_includes: added, removed_includes: removed });
        }
    }
    out
}
