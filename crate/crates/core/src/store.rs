//! The on-disk state kept between commits.
//!
//! Layout of a store directory:
//!
//! ```text
//! actual-graph.v1   the merged actual graph
//! recipes.v1        recipe snapshot of the last analyzed commit
//! meta.v1           key=value lines: project_root, root_commit, tool_version
//! pending.v1        unresolved include expectations
//! report.v1         machine report of the last run
//! report-human.v1   the same report, human format
//! notes.v1          warnings and counters of the last run
//! traces/           persisted traces
//! lock              advisory lock, held for the duration of a command
//! txn               present only while a multi-file update is being installed
//! ```
//!
//! A full update writes every file as `<name>.next`, then writes `txn`
//! listing them, then renames them into place and removes `txn`. Opening a
//! locked store finishes an update whose `txn` exists and discards stray
//! `.next` files otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};

use nix::fcntl::{Flock, FlockArg};
use thiserror::Error;

use crate::graph::{DependencyGraph, GraphKind, Provenance, TargetNode};
use crate::infer::PendingInclude;
use crate::make::RecipeSnapshot;
use crate::path::ProjectPath;
use crate::util::{atomic_write, escape_field, unescape_field};

pub const GRAPH_FILE: &str = "actual-graph.v1";
pub const RECIPES_FILE: &str = "recipes.v1";
pub const META_FILE: &str = "meta.v1";
pub const PENDING_FILE: &str = "pending.v1";
pub const REPORT_FILE: &str = "report.v1";
pub const REPORT_HUMAN_FILE: &str = "report-human.v1";
pub const NOTES_FILE: &str = "notes.v1";
pub const TRACES_DIR: &str = "traces";

const GRAPH_HEADER: &str = "#depsentry-graph v1";
const TXN_FILE: &str = "txn";
const NEXT_SUFFIX: &str = ".next";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no state at {0}; run `depsentry init` first")]
    StateMissing(PathBuf),
    #[error("{}:{line}: corrupt state: {msg}", path.display())]
    StateCorrupt { path: PathBuf, line: usize, msg: String },
    #[error("store {0} is in use by another depsentry process")]
    Locked(PathBuf),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl StoreError {
    fn io(context: impl Into<String>, source: io::Error) -> StoreError {
        StoreError::Io { context: context.into(), source }
    }

    fn corrupt(path: &Path, line: usize, msg: impl Into<String>) -> StoreError {
        StoreError::StateCorrupt { path: path.to_path_buf(), line, msg: msg.into() }
    }
}

fn read_state(path: &Path) -> Result<String, StoreError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::StateMissing(path.to_path_buf())),
        Err(e) if e.kind() == io::ErrorKind::InvalidData => Err(StoreError::corrupt(path, 0, "not UTF-8")),
        Err(e) => Err(StoreError::io(format!("reading {}", path.display()), e)),
    }
}

fn write_state(path: &Path, text: &str) -> Result<(), StoreError> {
    atomic_write(path, text.as_bytes()).map_err(|e| StoreError::io(format!("writing {}", path.display()), e))
}

pub fn graph_to_text(graph: &DependencyGraph) -> String {
    let mut out = format!("{} kind={} root_commit={}\n", GRAPH_HEADER, graph.kind.as_str(), escape_field(&graph.root_commit));
    for node in graph.nodes() {
        out.push_str(&escape_field(node.target.as_str()));
        out.push('\t');
        out.push_str(node.provenance.as_str());
        out.push('\t');
        out.push_str(&escape_field(&node.last_updated_commit));
        for d in &node.deps {
            out.push('\t');
            out.push_str(&escape_field(d.as_str()));
        }
        out.push('\n');
    }
    out
}

/// Parses a graph file; `path` is only used in error messages.
pub fn graph_from_text(text: &str, path: &Path) -> Result<DependencyGraph, StoreError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| StoreError::corrupt(path, 1, "empty file"))?;
    let rest = header
        .strip_prefix(GRAPH_HEADER)
        .and_then(|r| r.strip_prefix(" kind="))
        .ok_or_else(|| StoreError::corrupt(path, 1, "bad header"))?;
    let (kind, commit) = rest.split_once(" root_commit=").ok_or_else(|| StoreError::corrupt(path, 1, "bad header"))?;
    let kind = GraphKind::parse(kind).ok_or_else(|| StoreError::corrupt(path, 1, format!("unknown kind {kind}")))?;
    let root_commit = unescape_field(commit).map_err(|m| StoreError::corrupt(path, 1, m))?;

    let mut nodes = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(StoreError::corrupt(path, n, "expected target, provenance and commit"));
        }
        let pp = |f: &str| -> Result<ProjectPath, StoreError> {
            let s = unescape_field(f).map_err(|m| StoreError::corrupt(path, n, m))?;
            ProjectPath::new(&s).map_err(|e| StoreError::corrupt(path, n, e.to_string()))
        };
        let target = pp(fields[0])?;
        if !seen.insert(target.clone()) {
            return Err(StoreError::corrupt(path, n, format!("duplicate node {target}")));
        }
        let prov = Provenance::parse(fields[1]).ok_or_else(|| StoreError::corrupt(path, n, format!("unknown provenance {}", fields[1])))?;
        let commit = unescape_field(fields[2]).map_err(|m| StoreError::corrupt(path, n, m))?;
        let mut node = TargetNode::new(target, prov, &commit);
        for f in &fields[3..] {
            let d = pp(f)?;
            if d == node.target {
                return Err(StoreError::corrupt(path, n, "self edge"));
            }
            node.deps.insert(d);
        }
        nodes.push(node);
    }
    DependencyGraph::from_nodes(kind, &root_commit, nodes).map_err(|e| StoreError::corrupt(path, 0, e.to_string()))
}

/// Saves `graph` as the store's actual graph, replacing any earlier save atomically.
pub fn save(graph: &DependencyGraph, store: &Path) -> Result<(), StoreError> {
    write_state(&store.join(GRAPH_FILE), &graph_to_text(graph))
}

pub fn load(store: &Path) -> Result<DependencyGraph, StoreError> {
    let path = store.join(GRAPH_FILE);
    graph_from_text(&read_state(&path)?, &path)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Meta {
    pub project_root: PathBuf,
    pub root_commit: String,
    pub tool_version: String,
}

/// Warnings and counters of the last run, kept next to the machine report.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Notes {
    pub warnings: Vec<String>,
    pub stats: BTreeMap<String, u64>,
}

/// The last report in both formats.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StoredReport {
    pub machine: String,
    pub human: String,
    pub notes: Notes,
}

/// Everything a command leaves behind, installed as one unit.
#[derive(Debug, Clone, Copy)]
pub struct StateUpdate<'a> {
    pub graph: &'a DependencyGraph,
    pub recipes: &'a RecipeSnapshot,
    pub meta: &'a Meta,
    pub pending: &'a BTreeSet<PendingInclude>,
    pub report: &'a StoredReport,
}

fn meta_to_text(meta: &Meta) -> String {
    format!(
        "project_root={}\nroot_commit={}\ntool_version={}\n",
        escape_field(&meta.project_root.to_string_lossy()),
        escape_field(&meta.root_commit),
        escape_field(&meta.tool_version)
    )
}

fn pending_to_text(pending: &BTreeSet<PendingInclude>) -> String {
    let mut text = String::new();
    for p in pending {
        text.push_str(&format!(
            "{}\t{}\t{}\n",
            escape_field(p.target.as_str()),
            escape_field(p.includer.as_str()),
            escape_field(&p.spec)
        ));
    }
    text
}

fn notes_to_text(notes: &Notes) -> String {
    let mut text = String::new();
    for w in &notes.warnings {
        text.push_str(&format!("warning\t{}\n", escape_field(w)));
    }
    for (k, v) in &notes.stats {
        text.push_str(&format!("stat\t{}\t{}\n", escape_field(k), v));
    }
    text
}

/// Handle on a store directory. Dropping it releases the lock, if taken.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    _lock: Option<Flock<File>>,
}

impl Store {
    /// Opens the store without locking it; suitable for read-only commands.
    pub fn open(dir: &Path) -> Store {
        Store { dir: dir.to_path_buf(), _lock: None }
    }

    /// Creates the directory if needed and takes the advisory lock without waiting.
    pub fn open_locked(dir: &Path) -> Result<Store, StoreError> {
        fs::create_dir_all(dir).map_err(|e| StoreError::io(format!("creating {}", dir.display()), e))?;
        let lock_path = dir.join("lock");
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| StoreError::io(format!("opening {}", lock_path.display()), e))?;
        let lock = Flock::lock(file, FlockArg::LockExclusiveNonblock).map_err(|_| StoreError::Locked(dir.to_path_buf()))?;
        let store = Store { dir: dir.to_path_buf(), _lock: Some(lock) };
        store.recover()?;
        Ok(store)
    }

    fn recover(&self) -> Result<(), StoreError> {
        let txn = self.dir.join(TXN_FILE);
        if let Ok(list) = fs::read_to_string(&txn) {
            self.install(list.lines().filter(|l| !l.is_empty()))?;
        }
        let entries = fs::read_dir(&self.dir).map_err(|e| StoreError::io(format!("listing {}", self.dir.display()), e))?;
        for e in entries.flatten() {
            if e.file_name().to_string_lossy().ends_with(NEXT_SUFFIX) {
                let _ = fs::remove_file(e.path());
            }
        }
        Ok(())
    }

    fn install<'a>(&self, names: impl Iterator<Item = &'a str>) -> Result<(), StoreError> {
        for name in names {
            let next = self.dir.join(format!("{name}{NEXT_SUFFIX}"));
            if next.exists() {
                fs::rename(&next, self.dir.join(name)).map_err(|e| StoreError::io(format!("installing {name}"), e))?;
            }
        }
        match fs::remove_file(self.dir.join(TXN_FILE)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(StoreError::io("removing txn", e)),
            _ => Ok(()),
        }
    }

    /// Replaces all state files together; see the module documentation.
    pub fn save_all(&self, update: &StateUpdate) -> Result<(), StoreError> {
        let mut files: Vec<(&str, String)> = vec![
            (GRAPH_FILE, graph_to_text(update.graph)),
            (RECIPES_FILE, update.recipes.to_text()),
            (PENDING_FILE, pending_to_text(update.pending)),
            (REPORT_FILE, update.report.machine.clone()),
            (REPORT_HUMAN_FILE, update.report.human.clone()),
            (NOTES_FILE, notes_to_text(&update.report.notes)),
        ];
        files.push((META_FILE, meta_to_text(update.meta)));
        for (name, text) in &files {
            write_state(&self.dir.join(format!("{name}{NEXT_SUFFIX}")), text)?;
        }
        let list: String = files.iter().map(|(n, _)| format!("{n}\n")).collect();
        write_state(&self.dir.join(TXN_FILE), &list)?;
        self.install(files.iter().map(|(n, _)| *n))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn traces_dir(&self) -> PathBuf {
        self.dir.join(TRACES_DIR)
    }

    /// True when the store holds a graph and metadata.
    pub fn is_initialized(&self) -> bool {
        self.dir.join(GRAPH_FILE).is_file() && self.dir.join(META_FILE).is_file()
    }

    pub fn save_graph(&self, graph: &DependencyGraph) -> Result<(), StoreError> {
        save(graph, &self.dir)
    }

    pub fn load_graph(&self) -> Result<DependencyGraph, StoreError> {
        load(&self.dir)
    }

    pub fn save_recipes(&self, snap: &RecipeSnapshot) -> Result<(), StoreError> {
        write_state(&self.dir.join(RECIPES_FILE), &snap.to_text())
    }

    pub fn load_recipes(&self) -> Result<RecipeSnapshot, StoreError> {
        let path = self.dir.join(RECIPES_FILE);
        let text = read_state(&path)?;
        RecipeSnapshot::from_text(&text).map_err(|e| StoreError::corrupt(&path, 0, e.to_string()))
    }

    pub fn save_meta(&self, meta: &Meta) -> Result<(), StoreError> {
        write_state(&self.dir.join(META_FILE), &meta_to_text(meta))
    }

    pub fn load_meta(&self) -> Result<Meta, StoreError> {
        let path = self.dir.join(META_FILE);
        let text = read_state(&path)?;
        let mut meta = Meta::default();
        let mut have_root = false;
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| StoreError::corrupt(&path, i + 1, "expected key=value"))?;
            let v = unescape_field(v).map_err(|m| StoreError::corrupt(&path, i + 1, m))?;
            match k {
                "project_root" => {
                    meta.project_root = PathBuf::from(v);
                    have_root = true;
                }
                "root_commit" => meta.root_commit = v,
                "tool_version" => meta.tool_version = v,
                // Unknown keys are tolerated so newer stores stay readable.
                _ => {}
            }
        }
        if !have_root {
            return Err(StoreError::corrupt(&path, 0, "project_root missing"));
        }
        Ok(meta)
    }

    pub fn save_pending(&self, pending: &BTreeSet<PendingInclude>) -> Result<(), StoreError> {
        write_state(&self.dir.join(PENDING_FILE), &pending_to_text(pending))
    }

    /// A missing pending file means there are no expectations.
    pub fn load_pending(&self) -> Result<BTreeSet<PendingInclude>, StoreError> {
        let path = self.dir.join(PENDING_FILE);
        let text = match read_state(&path) {
            Err(StoreError::StateMissing(_)) => return Ok(BTreeSet::new()),
            r => r?,
        };
        let mut out = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(StoreError::corrupt(&path, i + 1, "expected 3 fields"));
            }
            let un = |s: &str| unescape_field(s).map_err(|m| StoreError::corrupt(&path, i + 1, m));
            let pp = |s: &str| -> Result<ProjectPath, StoreError> {
                ProjectPath::new(&un(s)?).map_err(|e| StoreError::corrupt(&path, i + 1, e.to_string()))
            };
            out.insert(PendingInclude { target: pp(f[0])?, includer: pp(f[1])?, spec: un(f[2])? });
        }
        Ok(out)
    }

    pub fn save_report(&self, report: &StoredReport) -> Result<(), StoreError> {
        write_state(&self.dir.join(NOTES_FILE), &notes_to_text(&report.notes))?;
        write_state(&self.dir.join(REPORT_HUMAN_FILE), &report.human)?;
        write_state(&self.dir.join(REPORT_FILE), &report.machine)
    }

    pub fn load_report(&self) -> Result<StoredReport, StoreError> {
        let machine = read_state(&self.dir.join(REPORT_FILE))?;
        let human = read_state(&self.dir.join(REPORT_HUMAN_FILE))?;
        let path = self.dir.join(NOTES_FILE);
        let mut notes = Notes::default();
        let text = match read_state(&path) {
            Err(StoreError::StateMissing(_)) => String::new(),
            r => r?,
        };
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let un = |s: &str| unescape_field(s).map_err(|m| StoreError::corrupt(&path, i + 1, m));
            match f.as_slice() {
                ["warning", w] => notes.warnings.push(un(w)?),
                ["stat", k, v] => {
                    let v = v.parse().map_err(|_| StoreError::corrupt(&path, i + 1, "bad counter"))?;
                    notes.stats.insert(un(k)?, v);
                }
                [""] => {}
                _ => return Err(StoreError::corrupt(&path, i + 1, "unknown record")),
            }
        }
        Ok(StoredReport { machine, human, notes })
    }
}
