//! Inferring the actual graph of a commit from its incremental build.
//!
//! Trace evidence wins over file-change inference, which wins over
//! directive inference. Nodes that were not rebuilt keep their historical
//! dependencies, adjusted for what the commit did to files and includes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::change::{
    resolve_include, transitive_includes, CommitDelta, DirectiveChange, FileKind, IncludeSpec, Resolution, SearchPaths,
    Suffixes,
};
use crate::graph::{DependencyGraph, GraphDelta, GraphError, GraphKind, Provenance, TargetNode};
use crate::make::{DeclaredGraph, RecipeSnapshot};
use crate::path::{normalize_path, ProjectPath, Resolved};
use crate::trace::{build_actual_graph, BuildMode, TraceError, TraceProvider};

/// An include that resolved to nothing when it was added. It stays pending
/// until the target is traced.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PendingInclude {
    pub target: ProjectPath,
    pub includer: ProjectPath,
    pub spec: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RebuildReason {
    RecipeChanged,
    NewSourceUncovered,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RebuildPlan {
    pub targets: BTreeSet<ProjectPath>,
    pub reason: BTreeMap<ProjectPath, RebuildReason>,
}

impl RebuildPlan {
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn add(&mut self, t: ProjectPath, why: RebuildReason) {
        self.targets.insert(t.clone());
        self.reason.entry(t).or_insert(why);
    }
}

/// Targets whose recipe changed and that the incremental build did not
/// already trace.
pub fn plan_rebuilds(recipe_diff: &BTreeSet<ProjectPath>, incremental: &DependencyGraph) -> RebuildPlan {
    let mut plan = RebuildPlan::default();
    for t in recipe_diff.iter().filter(|t| !incremental.contains(t)) {
        plan.add(t.clone(), RebuildReason::RecipeChanged);
    }
    plan
}

impl RebuildPlan {
    /// Adds objects of new sources that no declared rule accounts for.
    pub fn add_uncovered<'a>(&mut self, uncovered: impl IntoIterator<Item = &'a ProjectPath>, incremental: &DependencyGraph) {
        for t in uncovered {
            if !incremental.contains(t) {
                self.add(t.clone(), RebuildReason::NewSourceUncovered);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RebuildOutcome {
    pub graph: DependencyGraph,
    /// Targets whose single-target build failed, with the reason.
    pub failures: BTreeMap<ProjectPath, String>,
    pub warnings: Vec<String>,
    pub external_dropped: usize,
}

/// Rebuilds every planned target on its own under tracing, one at a time,
/// and unions the resulting graphs. A failing target does not stop the rest.
pub fn execute_rebuilds(
    plan: &RebuildPlan,
    provider: &mut dyn TraceProvider,
    project_root: &Path,
    make_args: &[String],
    commit: &str,
) -> Result<RebuildOutcome, TraceError> {
    let mut nodes: BTreeMap<ProjectPath, TargetNode> = BTreeMap::new();
    let mut outcome = RebuildOutcome {
        graph: DependencyGraph::new(GraphKind::Actual, commit),
        failures: BTreeMap::new(),
        warnings: Vec::new(),
        external_dropped: 0,
    };
    for t in &plan.targets {
        let mode = BuildMode::SingleTarget(t.as_str().to_string());
        let trace = match provider.trace_build(project_root, make_args, &mode, commit) {
            Ok(tr) => tr,
            Err(TraceError::BuildFailed { status, stderr_tail }) => {
                let last = stderr_tail.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string();
                outcome.failures.insert(t.clone(), format!("exit status {status}: {last}"));
                continue;
            }
            Err(e) => return Err(e),
        };
        let built = build_actual_graph(&trace, Provenance::IncrementalTrace, commit)?;
        outcome.warnings.extend(built.warnings);
        outcome.external_dropped += built.external_dropped;
        for n in built.graph.nodes() {
            nodes
                .entry(n.target.clone())
                .and_modify(|e| e.deps.extend(n.deps.iter().cloned()))
                .or_insert_with(|| n.clone());
        }
    }
    outcome.graph = DependencyGraph::from_nodes(GraphKind::Actual, commit, nodes.into_values())?;
    Ok(outcome)
}

/// What inference needs to know about the tree at the analyzed commit.
#[derive(Debug, Clone, Copy)]
pub struct ResolverContext<'a> {
    pub project_root: &'a Path,
    pub suffixes: &'a Suffixes,
    /// Recipe snapshot of the analyzed commit, for per-target `-I` flags.
    pub recipes: &'a RecipeSnapshot,
    pub declared: &'a DeclaredGraph,
}

impl ResolverContext<'_> {
    fn search_for(&self, target: &ProjectPath) -> SearchPaths {
        self.recipes.text_of(target.as_str()).map(SearchPaths::from_recipe).unwrap_or_default()
    }

    fn closure(&self, file: &ProjectPath, search: &SearchPaths) -> BTreeSet<ProjectPath> {
        transitive_includes(file, search, self.project_root).map(|c| c.files).unwrap_or_default()
    }

    fn exists(&self, p: &ProjectPath) -> bool {
        p.to_abs(self.project_root).exists()
    }

    /// The object a new source compiles into: a declared target that lists
    /// the source and shares its stem, or any declared target listing it.
    fn declared_object(&self, src: &ProjectPath) -> Option<ProjectPath> {
        let listing: Vec<&TargetNode> = self.declared.graph.nodes().filter(|n| n.deps.contains(src)).collect();
        listing
            .iter()
            .find(|n| n.target.stem() == src.stem() && n.target.parent() == src.parent())
            .or_else(|| listing.iter().find(|n| n.target.stem() == src.stem()))
            .or_else(|| listing.first())
            .map(|n| n.target.clone())
    }
}

#[derive(Debug, Clone, Default)]
pub struct FileUpdates {
    pub delta: GraphDelta,
    /// Expected objects of added sources with no declared rule.
    pub uncovered: BTreeSet<ProjectPath>,
    pub warnings: Vec<String>,
}

/// Graph changes implied by added, deleted and renamed files.
pub fn infer_file_updates(historical: &DependencyGraph, delta: &CommitDelta, ctx: &ResolverContext) -> FileUpdates {
    let mut out = FileUpdates::default();
    let mut deleted: Vec<ProjectPath> = delta.deleted_files.clone();
    let mut added: Vec<ProjectPath> = delta.added_files.clone();
    for r in &delta.renamed {
        let from_src = ctx.suffixes.kind(&r.from) == FileKind::Source;
        let to_src = ctx.suffixes.kind(&r.to) == FileKind::Source;
        if from_src || to_src {
            // A renamed source compiles into a differently named object.
            deleted.push(r.from.clone());
            added.push(r.to.clone());
            continue;
        }
        if let Some(n) = historical.node(&r.from) {
            out.delta.remove_node(r.from.clone());
            out.delta.add_node(r.to.clone());
            for d in &n.deps {
                out.delta.add_edge(r.to.clone(), d.clone());
            }
        }
        for n in historical.nodes().filter(|n| n.deps.contains(&r.from)) {
            let t = if n.target == r.from { r.to.clone() } else { n.target.clone() };
            out.delta.remove_edge(n.target.clone(), r.from.clone());
            out.delta.add_edge(t, r.to.clone());
        }
    }

    for s in &deleted {
        let mut gone: BTreeSet<ProjectPath> = BTreeSet::new();
        if ctx.suffixes.kind(s) == FileKind::Source {
            for n in historical.nodes().filter(|n| n.deps.contains(s)) {
                let sources: Vec<&ProjectPath> =
                    n.deps.iter().filter(|d| ctx.suffixes.kind(d) == FileKind::Source).collect();
                if n.target.stem() == s.stem() || sources.len() == 1 {
                    gone.insert(n.target.clone());
                }
            }
        }
        for g in &gone {
            out.delta.remove_node(g.clone());
        }
        for n in historical.nodes().filter(|n| !gone.contains(&n.target)) {
            if n.deps.contains(s) {
                out.delta.remove_edge(n.target.clone(), s.clone());
            }
            for g in gone.iter().filter(|g| n.deps.contains(*g)) {
                out.delta.remove_edge(n.target.clone(), g.clone());
            }
        }
    }

    for s in &added {
        if ctx.suffixes.kind(s) != FileKind::Source {
            continue;
        }
        let object = match ctx.declared_object(s) {
            Some(o) => o,
            None => {
                let guess = s.with_extension("o");
                out.warnings.push(format!("no declared rule builds new source {s}; expected object {guess}"));
                out.uncovered.insert(guess);
                continue;
            }
        };
        let search = ctx.search_for(&object);
        out.delta.add_node(object.clone());
        out.delta.add_edge(object.clone(), s.clone());
        for h in ctx.closure(s, &search) {
            if h != object {
                out.delta.add_edge(object.clone(), h);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct DirectiveUpdates {
    pub delta: GraphDelta,
    pub pending: BTreeSet<PendingInclude>,
}

fn spec_text(s: &IncludeSpec) -> String {
    s.to_string()
}

/// Graph changes implied by added and removed `#include` directives, for
/// every node that depends on a changed file.
pub fn infer_directive_updates(historical: &DependencyGraph, changes: &[DirectiveChange], ctx: &ResolverContext) -> DirectiveUpdates {
    let mut out = DirectiveUpdates::default();
    let mut removal_candidates: BTreeMap<ProjectPath, BTreeSet<ProjectPath>> = BTreeMap::new();
    for ch in changes {
        for node in historical.nodes().filter(|n| n.deps.contains(&ch.file)) {
            let t = &node.target;
            let search = ctx.search_for(t);
            for spec in &ch.added_includes {
                match resolve_include(spec, &ch.file, &search, ctx.project_root) {
                    Resolution::Project(h) => {
                        let mut all = ctx.closure(&h, &search);
                        all.insert(h);
                        for d in all.into_iter().filter(|d| d != t) {
                            out.delta.add_edge(t.clone(), d);
                        }
                    }
                    Resolution::External(_) => {}
                    Resolution::Unresolved => {
                        out.pending.insert(PendingInclude {
                            target: t.clone(),
                            includer: ch.file.clone(),
                            spec: spec_text(spec),
                        });
                    }
                }
            }
            for spec in &ch.removed_includes {
                let cand = removal_candidates.entry(t.clone()).or_default();
                if let Resolution::Project(h) = resolve_include(spec, &ch.file, &search, ctx.project_root) {
                    cand.extend(ctx.closure(&h, &search));
                    cand.insert(h);
                }
                // A header deleted in the same commit cannot be resolved any
                // more; fall back to matching the spelled name.
                if let IncludeSpec::Quoted(name) | IncludeSpec::Angled(name) = spec {
                    for d in node.deps.iter().filter(|d| d.as_str() == name || d.as_str().ends_with(&format!("/{name}"))) {
                        cand.insert(d.clone());
                    }
                }
            }
        }
    }
    for (t, cand) in removal_candidates {
        let node = historical.node(&t).expect("candidate targets come from the graph");
        let search = ctx.search_for(&t);
        let added: BTreeSet<ProjectPath> =
            out.delta.added_edges().iter().filter(|(a, _)| *a == t).map(|(_, d)| d.clone()).collect();
        let sources: Vec<&ProjectPath> = node.deps.iter().filter(|d| ctx.suffixes.kind(d) == FileKind::Source).collect();
        let reachable: Option<BTreeSet<ProjectPath>> = if sources.is_empty() {
            None
        } else {
            let mut r = BTreeSet::new();
            for s in sources {
                r.extend(ctx.closure(s, &search));
            }
            Some(r)
        };
        for c in cand {
            if !node.deps.contains(&c) || added.contains(&c) {
                continue;
            }
            let still_needed = reachable.as_ref().is_some_and(|r| r.contains(&c));
            if !still_needed {
                out.delta.remove_edge(t.clone(), c);
            }
        }
    }
    out
}

/// Everything merge consumes besides the resolver context.
#[derive(Debug, Clone, Copy)]
pub struct InferenceInputs<'a> {
    pub historical: &'a DependencyGraph,
    pub incremental: &'a DependencyGraph,
    pub directive_changes: &'a [DirectiveChange],
    pub delta: &'a CommitDelta,
    /// Recipe snapshot of the parent commit, when there is one.
    pub previous_recipes: Option<&'a RecipeSnapshot>,
    pub pending: &'a BTreeSet<PendingInclude>,
}

#[derive(Debug, Clone)]
pub struct MergeResult {
    pub graph: DependencyGraph,
    pub pending: BTreeSet<PendingInclude>,
    pub uncovered: BTreeSet<ProjectPath>,
    pub pruned: BTreeSet<ProjectPath>,
    pub warnings: Vec<String>,
}

fn in_snapshot(snap: &RecipeSnapshot, t: &ProjectPath, root: &Path) -> bool {
    snap.commands.keys().any(|k| match normalize_path(k, root) {
        Ok(Resolved::Project(p)) => p == *t,
        _ => false,
    })
}

/// Merges trace evidence and inferences into the graph of the analyzed commit.
///
/// A traced node takes its traced inputs. When nothing it depended on or
/// now depends on was deleted, renamed or had its includes edited, the
/// historical source and header dependencies that still exist are kept as
/// well, since an incremental trace may miss files make did not reopen.
pub fn merge(
    inputs: &InferenceInputs,
    rebuild: &DependencyGraph,
    ctx: &ResolverContext,
    commit: &str,
) -> Result<MergeResult, GraphError> {
    let hist = inputs.historical;
    let mut warnings = Vec::new();

    let mut traced: BTreeMap<ProjectPath, BTreeSet<ProjectPath>> = BTreeMap::new();
    for n in inputs.incremental.nodes().chain(rebuild.nodes()) {
        traced.entry(n.target.clone()).or_default().extend(n.deps.iter().cloned());
    }

    let file_updates = infer_file_updates(hist, inputs.delta, ctx);
    warnings.extend(file_updates.warnings.iter().cloned());

    let mut touched: BTreeSet<ProjectPath> = inputs.directive_changes.iter().map(|c| c.file.clone()).collect();
    touched.extend(inputs.delta.deleted_files.iter().cloned());
    for r in &inputs.delta.renamed {
        touched.insert(r.from.clone());
    }
    touched.extend(file_updates.delta.removed_nodes().iter().cloned());

    let mut graph = hist.clone();
    graph.root_commit = commit.to_string();
    let root = ctx.project_root;
    for (t, deps) in &traced {
        let mut node = TargetNode::new(t.clone(), Provenance::IncrementalTrace, commit);
        node.deps = deps.clone();
        if let Some(old) = hist.node(t) {
            let contrary = old.deps.iter().chain(deps.iter()).any(|d| touched.contains(d));
            if !contrary {
                node.deps.extend(old.deps.iter().filter(|d| ctx.suffixes.is_code(d) && ctx.exists(d)).cloned());
            }
        }
        node.deps.remove(t);
        graph.insert(node);
    }
    let traced_set: BTreeSet<ProjectPath> = traced.keys().cloned().collect();

    let (g, w) = graph.apply_delta(&file_updates.delta.without_targets(&traced_set), commit)?;
    graph = g;
    warnings.extend(w);

    let directive = infer_directive_updates(&graph, inputs.directive_changes, ctx);
    let (g, w) = graph.apply_delta(&directive.delta.without_targets(&traced_set), commit)?;
    graph = g;
    warnings.extend(w);

    // Nodes nobody produces any more.
    let mut pruned = BTreeSet::new();
    let mut pruned_missing = BTreeSet::new();
    for n in graph.nodes() {
        let t = &n.target;
        if traced_set.contains(t) || ctx.declared.with_recipe.contains(t) {
            continue;
        }
        let missing = !ctx.exists(t);
        let dropped = inputs
            .previous_recipes
            .is_some_and(|prev| in_snapshot(prev, t, root) && !in_snapshot(ctx.recipes, t, root));
        if missing || dropped {
            pruned.insert(t.clone());
            if missing {
                pruned_missing.insert(t.clone());
            }
        }
    }
    for t in &pruned {
        graph.remove(t);
    }
    let stale_edges: Vec<(ProjectPath, ProjectPath)> = graph
        .edges()
        .filter(|(_, d)| pruned_missing.contains(*d))
        .map(|(t, d)| (t.clone(), d.clone()))
        .collect();
    for (t, d) in stale_edges {
        if let Some(n) = graph.node_mut(&t) {
            n.deps.remove(&d);
        }
    }

    let mut pending: BTreeSet<PendingInclude> =
        inputs.pending.iter().chain(directive.pending.iter()).filter(|p| !traced_set.contains(&p.target)).cloned().collect();
    pending.retain(|p| graph.contains(&p.target));

    graph.check_acyclic()?;
    Ok(MergeResult { graph, pending, uncovered: file_updates.uncovered, pruned, warnings })
}
