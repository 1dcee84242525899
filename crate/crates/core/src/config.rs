//! Run configuration: `depsentry.toml` in the project root, overridden by
//! command-line flags.
//!
//! ```toml
//! make_args = ["-j1", "CC=gcc"]
//! make_program = "make"
//! store = ".depsentry"
//! exclude_globs = ["tests/**"]
//! source_suffixes = ["c", "cc"]
//! header_suffixes = ["h"]
//! replay = "traces"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::change::Suffixes;
use crate::graph::DependencyGraph;
use crate::path::ProjectPath;

pub const CONFIG_FILE: &str = "depsentry.toml";
pub const STORE_ENV: &str = "DEPSENTRY_STORE";
pub const DEFAULT_STORE: &str = ".depsentry";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("project root {0} does not exist")]
    NoProject(PathBuf),
    #[error("{}: {msg}", path.display())]
    Invalid { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TracingMode {
    Live,
    /// Recorded traces are read from this directory instead of running make.
    Replay(PathBuf),
}

/// How the commit under analysis reaches the working tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VcsMode {
    /// Check out this commit; the diff comes from git.
    GitCommit(String),
    /// Apply this diff file unless it is already applied.
    DiffFile(PathBuf),
    /// The tree is already at the commit; the diff comes from stdin.
    PreApplied,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    make_args: Option<Vec<String>>,
    make_program: Option<String>,
    store: Option<PathBuf>,
    exclude_globs: Option<Vec<String>>,
    source_suffixes: Option<Vec<String>>,
    header_suffixes: Option<Vec<String>>,
    replay: Option<PathBuf>,
}

/// Values given on the command line. `None` leaves the file's value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub make_args: Option<Vec<String>>,
    pub store: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    pub vcs_mode: Option<VcsMode>,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub project_root: PathBuf,
    pub make_args: Vec<String>,
    pub make_program: String,
    pub store_dir: PathBuf,
    pub exclude_globs: Vec<glob::Pattern>,
    pub suffixes: Suffixes,
    pub tracing_mode: TracingMode,
    pub vcs_mode: VcsMode,
}

fn strip_dots(v: Vec<String>) -> Vec<String> {
    v.into_iter().map(|s| s.trim_start_matches('.').to_string()).collect()
}

impl Config {
    /// Defaults for `project_root` with no configuration file.
    pub fn new(project_root: &Path) -> Config {
        Config {
            project_root: project_root.to_path_buf(),
            make_args: Vec::new(),
            make_program: "make".to_string(),
            store_dir: project_root.join(DEFAULT_STORE),
            exclude_globs: Vec::new(),
            suffixes: Suffixes::default(),
            tracing_mode: TracingMode::Live,
            vcs_mode: VcsMode::PreApplied,
        }
    }

    /// Reads `depsentry.toml` if present and applies `overrides`. The store
    /// comes from the flag, then `DEPSENTRY_STORE`, then the file.
    pub fn load(project_root: &Path, overrides: Overrides) -> Result<Config, ConfigError> {
        let root = project_root.canonicalize().map_err(|_| ConfigError::NoProject(project_root.to_path_buf()))?;
        let path = root.join(CONFIG_FILE);
        let file: FileConfig = match std::fs::read_to_string(&path) {
            Ok(text) => toml::from_str(&text).map_err(|e| ConfigError::Invalid { path: path.clone(), msg: e.to_string() })?,
            Err(_) => FileConfig::default(),
        };
        Config::from_parts(&root, file, overrides, std::env::var_os(STORE_ENV).map(PathBuf::from), &path)
    }

    fn from_parts(root: &Path, file: FileConfig, o: Overrides, env_store: Option<PathBuf>, path: &Path) -> Result<Config, ConfigError> {
        let mut c = Config::new(root);
        let rel = |p: PathBuf| if p.is_absolute() { p } else { root.join(p) };
        c.make_args = o.make_args.or(file.make_args).unwrap_or_default();
        if let Some(m) = file.make_program {
            c.make_program = m;
        }
        if let Some(s) = o.store.or(env_store).or(file.store) {
            c.store_dir = rel(s);
        }
        for g in file.exclude_globs.unwrap_or_default() {
            let pat = glob::Pattern::new(&g).map_err(|e| ConfigError::Invalid { path: path.to_path_buf(), msg: format!("glob {g:?}: {e}") })?;
            c.exclude_globs.push(pat);
        }
        if let Some(s) = file.source_suffixes {
            c.suffixes.source = strip_dots(s);
        }
        if let Some(h) = file.header_suffixes {
            c.suffixes.header = strip_dots(h);
        }
        if let Some(r) = o.replay.or(file.replay) {
            c.tracing_mode = TracingMode::Replay(rel(r));
        }
        if let Some(v) = o.vcs_mode {
            c.vcs_mode = v;
        }
        Ok(c)
    }

    pub fn is_excluded(&self, p: &ProjectPath) -> bool {
        self.exclude_globs.iter().any(|g| g.matches(p.as_str()))
    }

    /// Drops excluded targets and excluded dependencies.
    pub fn filter_graph(&self, g: &DependencyGraph) -> DependencyGraph {
        let mut out = g.clone();
        if self.exclude_globs.is_empty() {
            return out;
        }
        out.retain(|n| !self.is_excluded(&n.target));
        let targets: Vec<ProjectPath> = out.targets().cloned().collect();
        for t in targets {
            if let Some(n) = out.node_mut(&t) {
                n.deps.retain(|d| !self.is_excluded(d));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> FileConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn file_values_and_flag_precedence() {
        let root = Path::new("/proj");
        let file = parse("make_args = [\"-j1\"]\nstore = \"state\"\nsource_suffixes = [\".c\"]\nexclude_globs = [\"tests/**\"]\n");
        let c = Config::from_parts(root, file, Overrides::default(), None, Path::new("x")).unwrap();
        assert_eq!(c.make_args, vec!["-j1"]);
        assert_eq!(c.store_dir, PathBuf::from("/proj/state"));
        assert_eq!(c.suffixes.source, vec!["c"]);
        assert!(c.is_excluded(&ProjectPath::new("tests/a/b.o").unwrap()));
        assert!(!c.is_excluded(&ProjectPath::new("src/b.o").unwrap()));

        let file = parse("store = \"state\"\nmake_args = [\"-j1\"]\n");
        let o = Overrides { make_args: Some(vec!["V=1".into()]), ..Default::default() };
        let c = Config::from_parts(root, file, o, Some("/env".into()), Path::new("x")).unwrap();
        assert_eq!(c.make_args, vec!["V=1"]);
        assert_eq!(c.store_dir, PathBuf::from("/env"));
    }

    #[test]
    fn defaults_and_errors() {
        let c = Config::from_parts(Path::new("/p"), FileConfig::default(), Overrides::default(), None, Path::new("x")).unwrap();
        assert_eq!(c.store_dir, PathBuf::from("/p/.depsentry"));
        assert_eq!(c.tracing_mode, TracingMode::Live);
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
        let bad = parse("exclude_globs = [\"[\"]");
        assert!(Config::from_parts(Path::new("/p"), bad, Overrides::default(), None, Path::new("x")).is_err());
    }
}
