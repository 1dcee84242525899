//! Dependency graphs, deltas between them, and delta application.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::path::ProjectPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GraphKind {
    Declared,
    Actual,
}

impl GraphKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphKind::Declared => "declared",
            GraphKind::Actual => "actual",
        }
    }

    pub fn parse(s: &str) -> Option<GraphKind> {
        match s {
            "declared" => Some(GraphKind::Declared),
            "actual" => Some(GraphKind::Actual),
            _ => None,
        }
    }
}

/// Where a node's dependency set came from most recently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    CleanTrace,
    IncrementalTrace,
    Inferred,
    Declared,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::CleanTrace => "clean",
            Provenance::IncrementalTrace => "incremental",
            Provenance::Inferred => "inferred",
            Provenance::Declared => "declared",
        }
    }

    pub fn parse(s: &str) -> Option<Provenance> {
        match s {
            "clean" => Some(Provenance::CleanTrace),
            "incremental" => Some(Provenance::IncrementalTrace),
            "inferred" => Some(Provenance::Inferred),
            "declared" => Some(Provenance::Declared),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetNode {
    pub target: ProjectPath,
    pub deps: BTreeSet<ProjectPath>,
    pub provenance: Provenance,
    pub last_updated_commit: String,
}

impl TargetNode {
    pub fn new(target: ProjectPath, provenance: Provenance, commit: &str) -> TargetNode {
        TargetNode { target, deps: BTreeSet::new(), provenance, last_updated_commit: commit.to_string() }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("dependency cycle: {}", display_cycle(.0))]
    CycleError(Vec<ProjectPath>),
}

fn display_cycle(c: &[ProjectPath]) -> String {
    c.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(" -> ")
}

/// A set of target nodes keyed by target path. Ordering is deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    pub kind: GraphKind,
    pub root_commit: String,
    nodes: BTreeMap<ProjectPath, TargetNode>,
}

impl DependencyGraph {
    pub fn new(kind: GraphKind, root_commit: &str) -> DependencyGraph {
        DependencyGraph { kind, root_commit: root_commit.to_string(), nodes: BTreeMap::new() }
    }

    pub fn from_nodes<I>(kind: GraphKind, root_commit: &str, nodes: I) -> Result<DependencyGraph, GraphError>
    where
        I: IntoIterator<Item = TargetNode>,
    {
        let mut g = DependencyGraph::new(kind, root_commit);
        for n in nodes {
            g.insert(n);
        }
        g.check_acyclic()?;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TargetNode> {
        self.nodes.values()
    }

    pub fn targets(&self) -> impl Iterator<Item = &ProjectPath> {
        self.nodes.keys()
    }

    pub fn node(&self, target: &ProjectPath) -> Option<&TargetNode> {
        self.nodes.get(target)
    }

    pub fn node_mut(&mut self, target: &ProjectPath) -> Option<&mut TargetNode> {
        self.nodes.get_mut(target)
    }

    pub fn contains(&self, target: &ProjectPath) -> bool {
        self.nodes.contains_key(target)
    }

    pub fn deps(&self, target: &ProjectPath) -> Option<&BTreeSet<ProjectPath>> {
        self.nodes.get(target).map(|n| &n.deps)
    }

    /// Inserts or replaces a node. Acyclicity is checked by the callers that
    /// publish graphs (`from_nodes`, `apply_delta`, the state store).
    pub fn insert(&mut self, node: TargetNode) {
        self.nodes.insert(node.target.clone(), node);
    }

    pub fn remove(&mut self, target: &ProjectPath) -> Option<TargetNode> {
        self.nodes.remove(target)
    }

    pub fn retain<F: FnMut(&TargetNode) -> bool>(&mut self, mut keep: F) {
        self.nodes.retain(|_, n| keep(n));
    }

    pub fn edges(&self) -> impl Iterator<Item = (&ProjectPath, &ProjectPath)> {
        self.nodes.values().flat_map(|n| n.deps.iter().map(move |d| (&n.target, d)))
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.values().map(|n| n.deps.len()).sum()
    }

    /// Same nodes and same edges, ignoring provenance, commits and kind.
    pub fn same_structure(&self, other: &DependencyGraph) -> bool {
        self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(other.nodes.iter()).all(|((a, na), (b, nb))| a == b && na.deps == nb.deps)
    }

    /// Every file mentioned anywhere in the graph.
    pub fn all_paths(&self) -> BTreeSet<ProjectPath> {
        let mut out = BTreeSet::new();
        for n in self.nodes.values() {
            out.insert(n.target.clone());
            out.extend(n.deps.iter().cloned());
        }
        out
    }

    /// Fails with the first cycle found, listed from its entry node back to itself.
    pub fn check_acyclic(&self) -> Result<(), GraphError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Done,
        }
        let mut mark: BTreeMap<&ProjectPath, Mark> = BTreeMap::new();
        for start in self.nodes.keys() {
            if mark.contains_key(start) {
                continue;
            }
            // Iterative DFS; the stack holds (node, remaining deps).
            let mut stack: Vec<(&ProjectPath, Vec<&ProjectPath>)> = Vec::new();
            mark.insert(start, Mark::Open);
            stack.push((start, self.child_targets(start)));
            while let Some((cur, rest)) = stack.last_mut() {
                let cur = *cur;
                match rest.pop() {
                    None => {
                        mark.insert(cur, Mark::Done);
                        stack.pop();
                    }
                    Some(next) => match mark.get(next) {
                        Some(Mark::Done) => {}
                        Some(Mark::Open) => {
                            let pos = stack.iter().position(|(p, _)| *p == next).unwrap_or(0);
                            let mut cycle: Vec<ProjectPath> = stack[pos..].iter().map(|(p, _)| (*p).clone()).collect();
                            cycle.push(next.clone());
                            return Err(GraphError::CycleError(cycle));
                        }
                        None => {
                            mark.insert(next, Mark::Open);
                            let children = self.child_targets(next);
                            stack.push((next, children));
                        }
                    },
                }
            }
        }
        Ok(())
    }

    fn child_targets(&self, p: &ProjectPath) -> Vec<&ProjectPath> {
        match self.nodes.get(p) {
            Some(n) => n.deps.iter().rev().filter(|d| self.nodes.contains_key(*d)).collect(),
            None => Vec::new(),
        }
    }

    /// Applies `delta`: node removals, then edge removals, then node and edge
    /// additions. Touched nodes are marked `Inferred` at `commit`. Removing
    /// an edge that does not exist is reported as a warning.
    pub fn apply_delta(&self, delta: &GraphDelta, commit: &str) -> Result<(DependencyGraph, Vec<String>), GraphError> {
        let mut g = self.clone();
        let mut warnings = Vec::new();
        for n in &delta.removed_nodes {
            if g.nodes.remove(n).is_none() {
                warnings.push(format!("removed node {n} is not in the graph"));
            }
        }
        let mut touched: BTreeSet<ProjectPath> = BTreeSet::new();
        for (t, d) in &delta.removed_edges {
            if delta.removed_nodes.contains(t) {
                continue;
            }
            let removed = g.nodes.get_mut(t).is_some_and(|node| node.deps.remove(d));
            if removed {
                touched.insert(t.clone());
            } else {
                warnings.push(format!("removed edge {t} -> {d} is not in the graph"));
            }
        }
        for n in &delta.added_nodes {
            if !g.nodes.contains_key(n) {
                g.insert(TargetNode::new(n.clone(), Provenance::Inferred, commit));
            }
            touched.insert(n.clone());
        }
        for (t, d) in &delta.added_edges {
            let node = g
                .nodes
                .entry(t.clone())
                .or_insert_with(|| TargetNode::new(t.clone(), Provenance::Inferred, commit));
            node.deps.insert(d.clone());
            touched.insert(t.clone());
        }
        for t in touched {
            if let Some(node) = g.nodes.get_mut(&t) {
                node.provenance = Provenance::Inferred;
                node.last_updated_commit = commit.to_string();
            }
        }
        g.check_acyclic()?;
        Ok((g, warnings))
    }
}

impl fmt::Display for DependencyGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in self.nodes.values() {
            writeln!(f, "{}:", n.target)?;
            for d in &n.deps {
                writeln!(f, "  {d}")?;
            }
        }
        Ok(())
    }
}

/// Edge and node changes between two graph states.
///
/// The added and removed sets are kept disjoint: recording an edge as added
/// cancels an earlier removal of the same edge and vice versa.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GraphDelta {
    added_edges: BTreeSet<(ProjectPath, ProjectPath)>,
    removed_edges: BTreeSet<(ProjectPath, ProjectPath)>,
    added_nodes: BTreeSet<ProjectPath>,
    removed_nodes: BTreeSet<ProjectPath>,
}

impl GraphDelta {
    pub fn new() -> GraphDelta {
        GraphDelta::default()
    }

    pub fn add_edge(&mut self, target: ProjectPath, dep: ProjectPath) {
        let e = (target, dep);
        self.removed_edges.remove(&e);
        self.added_edges.insert(e);
    }

    pub fn remove_edge(&mut self, target: ProjectPath, dep: ProjectPath) {
        let e = (target, dep);
        self.added_edges.remove(&e);
        self.removed_edges.insert(e);
    }

    pub fn add_node(&mut self, target: ProjectPath) {
        self.removed_nodes.remove(&target);
        self.added_nodes.insert(target);
    }

    pub fn remove_node(&mut self, target: ProjectPath) {
        self.added_nodes.remove(&target);
        self.added_edges.retain(|(t, _)| *t != target);
        self.removed_nodes.insert(target);
    }

    pub fn added_edges(&self) -> &BTreeSet<(ProjectPath, ProjectPath)> {
        &self.added_edges
    }

    pub fn removed_edges(&self) -> &BTreeSet<(ProjectPath, ProjectPath)> {
        &self.removed_edges
    }

    pub fn added_nodes(&self) -> &BTreeSet<ProjectPath> {
        &self.added_nodes
    }

    pub fn removed_nodes(&self) -> &BTreeSet<ProjectPath> {
        &self.removed_nodes
    }

    pub fn is_empty(&self) -> bool {
        self.added_edges.is_empty()
            && self.removed_edges.is_empty()
            && self.added_nodes.is_empty()
            && self.removed_nodes.is_empty()
    }

    /// Targets whose node or edges this delta changes.
    pub fn touched_targets(&self) -> BTreeSet<ProjectPath> {
        let mut out: BTreeSet<ProjectPath> = self.added_nodes.union(&self.removed_nodes).cloned().collect();
        out.extend(self.added_edges.iter().map(|(t, _)| t.clone()));
        out.extend(self.removed_edges.iter().map(|(t, _)| t.clone()));
        out
    }

    /// Folds `later` into `self`; operations in `later` win on conflict.
    pub fn extend(&mut self, later: &GraphDelta) {
        for n in &later.removed_nodes {
            self.remove_node(n.clone());
        }
        for (t, d) in &later.removed_edges {
            self.remove_edge(t.clone(), d.clone());
        }
        for n in &later.added_nodes {
            self.add_node(n.clone());
        }
        for (t, d) in &later.added_edges {
            self.add_edge(t.clone(), d.clone());
        }
    }

    /// Drops every operation on the given targets.
    pub fn without_targets(&self, skip: &BTreeSet<ProjectPath>) -> GraphDelta {
        GraphDelta {
            added_edges: self.added_edges.iter().filter(|(t, _)| !skip.contains(t)).cloned().collect(),
            removed_edges: self.removed_edges.iter().filter(|(t, _)| !skip.contains(t)).cloned().collect(),
            added_nodes: self.added_nodes.iter().filter(|t| !skip.contains(*t)).cloned().collect(),
            removed_nodes: self.removed_nodes.iter().filter(|t| !skip.contains(*t)).cloned().collect(),
        }
    }
}

/// The delta that turns `before` into `after` structurally.
///
/// Edges of nodes that disappear are implied by the node removal and are
/// not listed separately.
pub fn diff_graphs(before: &DependencyGraph, after: &DependencyGraph) -> GraphDelta {
    let mut d = GraphDelta::new();
    for (t, n) in &before.nodes {
        match after.nodes.get(t) {
            None => d.remove_node(t.clone()),
            Some(m) => {
                for dep in n.deps.difference(&m.deps) {
                    d.remove_edge(t.clone(), dep.clone());
                }
            }
        }
    }
    for (t, m) in &after.nodes {
        let old = before.nodes.get(t);
        if old.is_none() {
            d.add_node(t.clone());
        }
        for dep in &m.deps {
            if old.is_none_or(|n| !n.deps.contains(dep)) {
                d.add_edge(t.clone(), dep.clone());
            }
        }
    }
    d
}
