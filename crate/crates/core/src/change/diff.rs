//! Unified diff parsing, with git's extended headers.

use std::sync::LazyLock;

use regex::Regex;

use super::{ChangeError, FileKind, Suffixes};
use crate::path::ProjectPath;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rename {
    pub from: ProjectPath,
    pub to: ProjectPath,
    pub hunks: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommitDelta {
    pub commit_id: String,
    pub modified: Vec<(ProjectPath, Vec<String>)>,
    pub added_files: Vec<ProjectPath>,
    pub deleted_files: Vec<ProjectPath>,
    pub renamed: Vec<Rename>,
    pub makefile_changed: bool,
}

impl CommitDelta {
    pub fn is_empty(&self) -> bool {
        self.modified.is_empty() && self.added_files.is_empty() && self.deleted_files.is_empty() && self.renamed.is_empty()
    }

    /// Every path the commit touched, on either side of a rename.
    pub fn touched(&self) -> Vec<&ProjectPath> {
        let mut v: Vec<&ProjectPath> = self.modified.iter().map(|(p, _)| p).collect();
        v.extend(&self.added_files);
        v.extend(&self.deleted_files);
        for r in &self.renamed {
            v.push(&r.from);
            v.push(&r.to);
        }
        v
    }
}

static HUNK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@").unwrap());

#[derive(Default)]
struct FileSection {
    old: Option<String>,
    new: Option<String>,
    added: bool,
    deleted: bool,
    rename_from: Option<String>,
    rename_to: Option<String>,
    hunks: Vec<String>,
}

/// Parses a unified diff. `--- a/x` / `+++ b/x` prefixes are stripped, and
/// `diff --git` extended headers mark additions, deletions and renames.
pub fn parse_diff(text: &str, suffixes: &Suffixes, commit_id: &str) -> Result<CommitDelta, ChangeError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut sections: Vec<(usize, FileSection)> = Vec::new();
    let mut cur: Option<(usize, FileSection)> = None;
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if let Some(rest) = line.strip_prefix("diff --git ") {
            if let Some(c) = cur.take() {
                sections.push(c);
            }
            let mut s = FileSection::default();
            if let Some((a, b)) = split_git_header(rest) {
                s.old = Some(a);
                s.new = Some(b);
            }
            cur = Some((i + 1, s));
            i += 1;
            continue;
        }
        if line.starts_with("--- ") && lines.get(i + 1).is_some_and(|n| n.starts_with("+++ ")) {
            let old = diff_path(&line[4..]);
            let new = diff_path(&lines[i + 1][4..]);
            let fresh = match &cur {
                Some((_, s)) => !s.hunks.is_empty(),
                None => true,
            };
            if fresh {
                if let Some(c) = cur.take() {
                    sections.push(c);
                }
                cur = Some((i + 1, FileSection::default()));
            }
            let s = &mut cur.as_mut().unwrap().1;
            match old {
                None => s.added = true,
                Some(p) => s.old = Some(p),
            }
            match new {
                None => s.deleted = true,
                Some(p) => s.new = Some(p),
            }
            i += 2;
            continue;
        }
        if line.starts_with("@@") {
            let Some((_, s)) = cur.as_mut() else {
                return Err(ChangeError::ParseError { line: i + 1, msg: "hunk outside a file section".into() });
            };
            let caps = HUNK
                .captures(line)
                .ok_or_else(|| ChangeError::ParseError { line: i + 1, msg: format!("malformed hunk header {line:?}") })?;
            let count = |k: usize| caps.get(k).map(|m| m.as_str().parse::<usize>().unwrap_or(usize::MAX)).unwrap_or(1);
            let (mut old_left, mut new_left) = (count(2), count(4));
            if old_left == usize::MAX || new_left == usize::MAX {
                return Err(ChangeError::ParseError { line: i + 1, msg: "hunk length out of range".into() });
            }
            let mut hunk = vec![line];
            i += 1;
            while i < lines.len() && (old_left > 0 || new_left > 0) {
                let l = lines[i];
                match l.as_bytes().first() {
                    Some(b'+') => new_left = new_left.saturating_sub(1),
                    Some(b'-') => old_left = old_left.saturating_sub(1),
                    Some(b' ') | None => {
                        old_left = old_left.saturating_sub(1);
                        new_left = new_left.saturating_sub(1);
                    }
                    Some(b'\\') => {}
                    _ => {
                        return Err(ChangeError::ParseError { line: i + 1, msg: "hunk shorter than its header says".into() });
                    }
                }
                hunk.push(l);
                i += 1;
            }
            while i < lines.len() && lines[i].starts_with('\\') {
                hunk.push(lines[i]);
                i += 1;
            }
            s.hunks.push(hunk.join("\n"));
            continue;
        }
        if let Some((_, s)) = cur.as_mut() {
            if line.starts_with("new file mode") {
                s.added = true;
            } else if line.starts_with("deleted file mode") {
                s.deleted = true;
            } else if let Some(p) = line.strip_prefix("rename from ").or_else(|| line.strip_prefix("copy from ")) {
                s.rename_from = Some(unquote(p));
            } else if let Some(p) = line.strip_prefix("rename to ") {
                s.rename_to = Some(unquote(p));
            } else if let Some(p) = line.strip_prefix("copy to ") {
                s.added = true;
                s.new = Some(unquote(p));
                s.rename_from = None;
            }
        }
        i += 1;
    }
    if let Some(c) = cur.take() {
        sections.push(c);
    }

    let mut delta = CommitDelta { commit_id: commit_id.to_string(), ..Default::default() };
    let path = |raw: &str, line: usize| {
        ProjectPath::new(raw).map_err(|_| ChangeError::ParseError { line, msg: format!("bad path {raw:?}") })
    };
    for (line, s) in sections {
        if let (Some(from), Some(to)) = (&s.rename_from, &s.rename_to) {
            delta.renamed.push(Rename { from: path(from, line)?, to: path(to, line)?, hunks: s.hunks });
        } else if s.added {
            let p = s.new.as_deref().or(s.old.as_deref());
            if let Some(p) = p {
                delta.added_files.push(path(p, line)?);
            }
        } else if s.deleted {
            if let Some(p) = s.old.as_deref().or(s.new.as_deref()) {
                delta.deleted_files.push(path(p, line)?);
            }
        } else if let Some(p) = s.new.as_deref().or(s.old.as_deref()) {
            let p = path(p, line)?;
            match delta.modified.iter_mut().find(|(q, _)| *q == p) {
                Some((_, h)) => h.extend(s.hunks),
                None => delta.modified.push((p, s.hunks)),
            }
        }
    }
    delta.makefile_changed = delta.touched().iter().any(|p| suffixes.kind(p) == FileKind::Makefile);
    Ok(delta)
}

/// `a/x b/y` from a `diff --git` line; only unambiguous forms are split.
fn split_git_header(rest: &str) -> Option<(String, String)> {
    if rest.starts_with('"') {
        let end = rest[1..].find('"')? + 1;
        let a = unquote(&rest[..=end]);
        let b = unquote(rest[end + 1..].trim());
        return Some((strip_prefix(&a), strip_prefix(&b)));
    }
    let mid = rest.find(" b/")?;
    Some((strip_prefix(&rest[..mid]), strip_prefix(&rest[mid + 1..])))
}

fn strip_prefix(p: &str) -> String {
    p.strip_prefix("a/").or_else(|| p.strip_prefix("b/")).unwrap_or(p).to_string()
}

/// Path from a `---`/`+++` line; `None` for /dev/null.
fn diff_path(raw: &str) -> Option<String> {
    let raw = raw.split('\t').next().unwrap_or(raw).trim_end();
    let p = unquote(raw);
    if p == "/dev/null" {
        return None;
    }
    Some(strip_prefix(&p))
}

fn unquote(s: &str) -> String {
    let Some(inner) = s.strip_prefix('"').and_then(|r| r.strip_suffix('"')) else {
        return s.to_string();
    };
    let mut out = String::new();
    let mut it = inner.chars();
    while let Some(c) = it.next() {
        if c == '\\' {
            match it.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some(o) => out.push(o),
                None => {}
            }
        } else {
            out.push(c);
        }
    }
    out
}
