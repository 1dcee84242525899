//! Resolving include directives to files, and include closures.

use std::collections::{BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use super::directives::include_specs;
use super::{ChangeError, IncludeSpec};
use crate::path::{normalize_path, ProjectPath, Resolved};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Project(ProjectPath),
    External(PathBuf),
    Unresolved,
}

/// Directories searched for includes, in compiler order. Relative
/// directories are taken relative to the project root.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchPaths {
    /// `-iquote` directories, searched for quoted includes only.
    pub quote: Vec<String>,
    /// `-I` directories.
    pub include: Vec<String>,
    /// `-isystem` and `-idirafter` directories.
    pub system: Vec<String>,
    /// Skip the compiler's built-in system directories.
    pub no_builtin: bool,
}

impl SearchPaths {
    /// Picks up `-I`, `-iquote`, `-isystem` and `-idirafter` from recipe text.
    pub fn from_recipe(text: &str) -> SearchPaths {
        let mut sp = SearchPaths::default();
        let words: Vec<&str> = text.split_whitespace().map(|w| w.trim_matches(|c| c == '\'' || c == '"')).collect();
        let mut i = 0;
        while i < words.len() {
            let w = words[i];
            if w == "-nostdinc" {
                sp.no_builtin = true;
            }
            for (flag, kind) in [("-iquote", 0), ("-isystem", 2), ("-idirafter", 2), ("-I", 1)] {
                let Some(rest) = w.strip_prefix(flag) else { continue };
                let dir = if rest.is_empty() {
                    i += 1;
                    match words.get(i) {
                        Some(d) => d.to_string(),
                        None => break,
                    }
                } else {
                    rest.to_string()
                };
                match kind {
                    0 => sp.quote.push(dir),
                    1 => sp.include.push(dir),
                    _ => sp.system.push(dir),
                }
                break;
            }
            i += 1;
        }
        sp
    }
}

/// The compiler's built-in include directories, asked once per process.
fn builtin_dirs() -> &'static [String] {
    static DIRS: OnceLock<Vec<String>> = OnceLock::new();
    DIRS.get_or_init(|| {
        let probe = Command::new("cc").args(["-E", "-Wp,-v", "-xc", "/dev/null"]).env("LC_ALL", "C").output();
        let mut dirs = Vec::new();
        if let Ok(out) = probe {
            let text = String::from_utf8_lossy(&out.stderr);
            let mut inside = false;
            for l in text.lines() {
                if l.starts_with("#include <...> search starts here") {
                    inside = true;
                } else if l.starts_with("End of search list") {
                    break;
                } else if inside {
                    dirs.push(l.trim().to_string());
                }
            }
        }
        if dirs.is_empty() {
            dirs = vec!["/usr/local/include".into(), "/usr/include".into()];
        }
        dirs
    })
}

fn candidate(root: &Path, dir: &str, name: &str) -> PathBuf {
    let d = Path::new(dir);
    if d.is_absolute() {
        d.join(name)
    } else {
        root.join(d).join(name)
    }
}

/// Resolves one include spec. Quoted includes look in the including file's
/// directory first; both forms then search the given paths and the
/// compiler's system directories. The first existing file wins.
pub fn resolve_include(spec: &IncludeSpec, including_file: &ProjectPath, search: &SearchPaths, project_root: &Path) -> Resolution {
    let (name, quoted) = match spec {
        IncludeSpec::Quoted(n) => (n.as_str(), true),
        IncludeSpec::Angled(n) => (n.as_str(), false),
        IncludeSpec::Macro(_) => return Resolution::Unresolved,
    };
    let mut dirs: Vec<String> = Vec::new();
    if quoted {
        dirs.push(including_file.parent().map(|p| p.as_str().to_string()).unwrap_or_default());
        dirs.extend(search.quote.iter().cloned());
    }
    dirs.extend(search.include.iter().cloned());
    dirs.extend(search.system.iter().cloned());
    if !search.no_builtin {
        dirs.extend(builtin_dirs().iter().cloned());
    }
    if Path::new(name).is_absolute() {
        dirs = vec![String::new()];
    }
    for d in dirs {
        let c = if Path::new(name).is_absolute() { PathBuf::from(name) } else { candidate(project_root, &d, name) };
        if c.is_file() {
            return match normalize_path(&c.to_string_lossy(), project_root) {
                Ok(Resolved::Project(p)) => Resolution::Project(p),
                _ => Resolution::External(c),
            };
        }
    }
    Resolution::Unresolved
}

/// Result of following includes from one file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IncludeClosure {
    pub files: BTreeSet<ProjectPath>,
    /// Directives that resolved nowhere, with the file that contains them.
    pub unresolved: Vec<(ProjectPath, IncludeSpec)>,
}

/// Project files reachable from `file` through include directives,
/// excluding `file` itself. Conditional includes count as unconditional.
pub fn transitive_includes(file: &ProjectPath, search: &SearchPaths, project_root: &Path) -> Result<IncludeClosure, ChangeError> {
    let read = |p: &ProjectPath| {
        std::fs::read(p.to_abs(project_root))
            .map(|b| String::from_utf8_lossy(&b).into_owned())
            .map_err(|e| ChangeError::IoError { path: p.to_string(), source: e })
    };
    let first = read(file)?;
    let mut out = IncludeClosure::default();
    let mut seen: BTreeSet<ProjectPath> = [file.clone()].into_iter().collect();
    let mut queue: VecDeque<(ProjectPath, String)> = VecDeque::from([(file.clone(), first)]);
    while let Some((cur, text)) = queue.pop_front() {
        for spec in include_specs(&text) {
            match resolve_include(&spec, &cur, search, project_root) {
                Resolution::Project(p) => {
                    if seen.insert(p.clone()) {
                        out.files.insert(p.clone());
                        if let Ok(t) = read(&p) {
                            queue.push_back((p, t));
                        }
                    }
                }
                Resolution::External(_) => {}
                Resolution::Unresolved => out.unresolved.push((cur.clone(), spec)),
            }
        }
    }
    Ok(out)
}

/// Project headers the compiler itself reports for `file` (`cc -MM`).
pub fn compiler_dependencies(file: &ProjectPath, flags: &[String], project_root: &Path) -> Option<BTreeSet<ProjectPath>> {
    let out = Command::new("cc")
        .current_dir(project_root)
        .arg("-MM")
        .args(flags)
        .arg(file.as_str())
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let text = String::from_utf8_lossy(&out.stdout).replace("\\\n", " ");
    let (_, deps) = text.split_once(':')?;
    Some(
        deps.split_whitespace()
            .filter_map(|d| match normalize_path(d, project_root) {
                Ok(Resolved::Project(p)) if p != *file => Some(p),
                _ => None,
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn p(s: &str) -> ProjectPath {
        ProjectPath::new(s).unwrap()
    }

    fn tree(files: &[(&str, &str)]) -> tempfile::TempDir {
        let d = tempfile::tempdir().unwrap();
        for (f, body) in files {
            let path = d.path().join(f);
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(path, body).unwrap();
        }
        d
    }

    #[test]
    fn quoted_from_same_directory() {
        let d = tree(&[("src/fzy.c", "#include \"fzy.h\"\n"), ("src/fzy.h", "")]);
        let r = resolve_include(&IncludeSpec::Quoted("fzy.h".into()), &p("src/fzy.c"), &SearchPaths::default(), d.path());
        assert_eq!(r, Resolution::Project(p("src/fzy.h")));
    }

    #[test]
    fn system_header_is_external() {
        let d = tree(&[("a.c", "")]);
        match resolve_include(&IncludeSpec::Angled("stdio.h".into()), &p("a.c"), &SearchPaths::default(), d.path()) {
            Resolution::External(_) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn not_yet_generated_is_unresolved() {
        let d = tree(&[("a.c", "")]);
        let r = resolve_include(&IncludeSpec::Quoted("gen/config.h".into()), &p("a.c"), &SearchPaths::default(), d.path());
        assert_eq!(r, Resolution::Unresolved);
        let m = resolve_include(&IncludeSpec::Macro("CFG".into()), &p("a.c"), &SearchPaths::default(), d.path());
        assert_eq!(m, Resolution::Unresolved);
    }

    #[test]
    fn local_directory_shadows_search_path() {
        let d = tree(&[("src/x.c", ""), ("src/h.h", ""), ("include/h.h", "")]);
        let sp = SearchPaths::from_recipe("cc -Iinclude -c src/x.c");
        let q = resolve_include(&IncludeSpec::Quoted("h.h".into()), &p("src/x.c"), &sp, d.path());
        assert_eq!(q, Resolution::Project(p("src/h.h")));
        let a = resolve_include(&IncludeSpec::Angled("h.h".into()), &p("src/x.c"), &sp, d.path());
        assert_eq!(a, Resolution::Project(p("include/h.h")));
    }

    #[test]
    fn recipe_flags() {
        let sp = SearchPaths::from_recipe("gcc -I include -Ideps -iquote q -isystem /opt/x -c a.c");
        assert_eq!(sp.include, ["include", "deps"]);
        assert_eq!(sp.quote, ["q"]);
        assert_eq!(sp.system, ["/opt/x"]);
    }

    #[test]
    fn closure_follows_headers() {
        let d = tree(&[("b.c", "#include \"h.h\"\n"), ("h.h", "#include \"g.h\"\n"), ("g.h", "")]);
        let c = transitive_includes(&p("b.c"), &SearchPaths::default(), d.path()).unwrap();
        assert_eq!(c.files, [p("g.h"), p("h.h")].into_iter().collect());
        let cc = compiler_dependencies(&p("b.c"), &[], d.path());
        if let Some(cc) = cc {
            assert_eq!(cc, c.files);
        }
    }

    #[test]
    fn closure_of_file_without_includes() {
        let d = tree(&[("a.c", "int x;\n")]);
        assert!(transitive_includes(&p("a.c"), &SearchPaths::default(), d.path()).unwrap().files.is_empty());
    }

    #[test]
    fn mutual_includes_terminate() {
        // x.c -> x.h -> y.h -> x.h: the fixed point is {x.h, y.h}.
        let d = tree(&[("x.c", "#include \"x.h\"\n"), ("x.h", "#include \"y.h\"\n"), ("y.h", "#include \"x.h\"\n")]);
        let c = transitive_includes(&p("x.c"), &SearchPaths::default(), d.path()).unwrap();
        assert_eq!(c.files, [p("x.h"), p("y.h")].into_iter().collect());
    }

    #[test]
    fn unreadable_file() {
        let d = tree(&[]);
        assert!(matches!(
            transitive_includes(&p("missing.c"), &SearchPaths::default(), d.path()),
            Err(ChangeError::IoError { .. })
        ));
    }
}
