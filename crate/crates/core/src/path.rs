//! Project-relative path handling.
//!
//! Every path in a dependency graph is stored relative to the project root
//! in a normalized form, so graphs built from different checkouts of the
//! same project compare equal.

use std::fmt;
use std::path::{Component, Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathError {
    #[error("invalid path {0:?}")]
    InvalidPath(String),
}

/// A normalized path relative to the project root.
///
/// Never empty, never absolute, no `.` or `..` segments, `/` separators.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProjectPath(String);

impl ProjectPath {
    /// Builds a project path from an already relative string, normalizing it lexically.
    pub fn new(rel: &str) -> Result<ProjectPath, PathError> {
        if rel.starts_with('/') {
            return Err(PathError::InvalidPath(rel.to_string()));
        }
        match lexical(rel)? {
            Some(segs) if !segs.is_empty() => Ok(ProjectPath(segs.join("/"))),
            _ => Err(PathError::InvalidPath(rel.to_string())),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn to_abs(&self, root: &Path) -> PathBuf {
        root.join(&self.0)
    }

    pub fn file_name(&self) -> &str {
        self.0.rsplit('/').next().unwrap_or(&self.0)
    }

    /// Directory part, `None` for files at the project root.
    pub fn parent(&self) -> Option<ProjectPath> {
        self.0.rfind('/').map(|i| ProjectPath(self.0[..i].to_string()))
    }

    /// Path without directory and without the last extension.
    pub fn stem(&self) -> &str {
        let name = self.file_name();
        match name.rfind('.') {
            Some(0) | None => name,
            Some(i) => &name[..i],
        }
    }

    pub fn extension(&self) -> Option<&str> {
        let name = self.file_name();
        match name.rfind('.') {
            Some(0) | None => None,
            Some(i) => Some(&name[i + 1..]),
        }
    }

    /// The path with its directory kept and the extension swapped.
    pub fn with_extension(&self, ext: &str) -> ProjectPath {
        let keep = self.0.len() - self.file_name().len() + self.stem().len();
        ProjectPath(format!("{}.{}", &self.0[..keep], ext))
    }

    pub fn join(&self, rel: &str) -> Result<ProjectPath, PathError> {
        ProjectPath::new(&format!("{}/{}", self.0, rel))
    }
}

impl fmt::Display for ProjectPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ProjectPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Result of normalizing a raw path against a project root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolved {
    Project(ProjectPath),
    External,
}

/// Normalizes `raw` (absolute, or relative to `root`) to a project path.
///
/// Paths that leave the project tree are `External`. The project root itself
/// and strings with NUL bytes are rejected. If `root` is reached through a
/// symlink, paths under its canonical location are accepted too.
pub fn normalize_path(raw: &str, root: &Path) -> Result<Resolved, PathError> {
    if raw.is_empty() || raw.contains('\0') {
        return Err(PathError::InvalidPath(raw.to_string()));
    }
    let root_segs = match lexical(&root.to_string_lossy())? {
        Some(s) => s,
        None => return Err(PathError::InvalidPath(root.display().to_string())),
    };
    let joined = if raw.starts_with('/') {
        raw.to_string()
    } else {
        format!("{}/{}", root.display(), raw)
    };
    let segs = match lexical(&joined)? {
        Some(s) => s,
        None => return Ok(Resolved::External),
    };
    if let Some(r) = strip(&segs, &root_segs, raw)? {
        return Ok(r);
    }
    if let Ok(canon) = root.canonicalize() {
        if let Some(canon_segs) = lexical(&canon.to_string_lossy())? {
            if canon_segs != root_segs {
                if let Some(r) = strip(&segs, &canon_segs, raw)? {
                    return Ok(r);
                }
            }
        }
    }
    Ok(Resolved::External)
}

fn strip(segs: &[String], root: &[String], raw: &str) -> Result<Option<Resolved>, PathError> {
    if segs.len() < root.len() || segs[..root.len()] != *root {
        return Ok(None);
    }
    if segs.len() == root.len() {
        return Err(PathError::InvalidPath(raw.to_string()));
    }
    Ok(Some(Resolved::Project(ProjectPath(segs[root.len()..].join("/")))))
}

/// Splits and folds `.`/`..`. Returns `None` when `..` climbs above the
/// start of a relative path.
fn lexical(p: &str) -> Result<Option<Vec<String>>, PathError> {
    if p.contains('\0') {
        return Err(PathError::InvalidPath(p.to_string()));
    }
    let mut out: Vec<String> = Vec::new();
    for c in Path::new(p).components() {
        match c {
            Component::RootDir | Component::Prefix(_) | Component::CurDir => {}
            Component::ParentDir => {
                if out.pop().is_none() {
                    if p.starts_with('/') {
                        continue;
                    }
                    return Ok(None);
                }
            }
            Component::Normal(s) => out.push(s.to_string_lossy().into_owned()),
        }
    }
    Ok(Some(out))
}

/// Lexically normalizes an absolute path without touching the filesystem.
pub fn clean_abs(p: &str) -> String {
    match lexical(p) {
        Ok(Some(segs)) => format!("/{}", segs.join("/")),
        _ => p.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pp(s: &str) -> Resolved {
        Resolved::Project(ProjectPath::new(s).unwrap())
    }

    #[test]
    fn examples() {
        let root = Path::new("/p");
        assert_eq!(normalize_path("/p/src/../src/a.c", root).unwrap(), pp("src/a.c"));
        assert_eq!(normalize_path("/usr/include/stdio.h", root).unwrap(), Resolved::External);
        assert_eq!(normalize_path("/p", root), Err(PathError::InvalidPath("/p".into())));
        assert_eq!(normalize_path("./a//b.c", root).unwrap(), pp("a/b.c"));
        assert_eq!(normalize_path("../q/x", root).unwrap(), Resolved::External);
        assert!(normalize_path("a\0b", root).is_err());
        assert!(normalize_path("", root).is_err());
        assert_eq!(normalize_path("/pq/x", root).unwrap(), Resolved::External);
    }

    #[test]
    fn root_reached_through_symlink() {
        let dir = tempfile::tempdir().unwrap();
        let real = dir.path().join("real");
        std::fs::create_dir(&real).unwrap();
        let link = dir.path().join("link");
        std::os::unix::fs::symlink(&real, &link).unwrap();
        let canon = real.canonicalize().unwrap();
        let raw = format!("{}/src/a.c", canon.display());
        assert_eq!(normalize_path(&raw, &link).unwrap(), pp("src/a.c"));
    }

    #[test]
    fn parts() {
        let p = ProjectPath::new("src/fzy.c").unwrap();
        assert_eq!(p.stem(), "fzy");
        assert_eq!(p.extension(), Some("c"));
        assert_eq!(p.with_extension("o").as_str(), "src/fzy.o");
        assert_eq!(p.parent().unwrap().as_str(), "src");
        let q = ProjectPath::new("Makefile").unwrap();
        assert_eq!(q.parent(), None);
        assert_eq!(q.with_extension("o").as_str(), "Makefile.o");
        assert_eq!(ProjectPath::new(".hidden").unwrap().stem(), ".hidden");
        assert!(ProjectPath::new("../x").is_err());
        assert!(ProjectPath::new(".").is_err());
    }
}
