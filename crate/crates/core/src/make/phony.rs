//! Declared graph construction with phony targets elided.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{DeclaredRule, MakeError};
use crate::graph::{DependencyGraph, GraphError, GraphKind, Provenance, TargetNode};
use crate::path::{normalize_path, ProjectPath, Resolved};

#[derive(Debug, Clone)]
pub struct DeclaredGraph {
    pub graph: DependencyGraph,
    /// Prerequisites that are neither in the project tree nor phony.
    pub external_dropped: usize,
    /// Edges that came from order-only prerequisites.
    pub order_only: BTreeSet<(ProjectPath, ProjectPath)>,
    pub phony: BTreeSet<ProjectPath>,
    /// Targets that have a recipe of their own.
    pub with_recipe: BTreeSet<ProjectPath>,
}

/// Builds the declared graph. A phony prerequisite is replaced by what the
/// phony target itself depends on, transitively, so no phony node remains.
pub fn expand_phony(rules: &[DeclaredRule], project_root: &Path, commit: &str) -> Result<DeclaredGraph, MakeError> {
    let by_name: BTreeMap<&str, &DeclaredRule> = rules.iter().map(|r| (r.target.as_str(), r)).collect();
    let phony: BTreeSet<&str> = rules.iter().filter(|r| r.is_phony).map(|r| r.target.as_str()).collect();
    let mut memo: BTreeMap<String, Vec<(String, bool)>> = BTreeMap::new();
    for p in &phony {
        expand(p, &by_name, &phony, &mut memo, &mut Vec::new())?;
    }

    let mut external = 0usize;
    let mut norm = |raw: &str| -> Option<ProjectPath> {
        match normalize_path(raw, project_root) {
            Ok(Resolved::Project(p)) => Some(p),
            Ok(Resolved::External) => {
                external += 1;
                None
            }
            Err(_) => None,
        }
    };
    let mut nodes: BTreeMap<ProjectPath, TargetNode> = BTreeMap::new();
    let mut order_only = BTreeSet::new();
    let mut with_recipe = BTreeSet::new();
    for r in rules.iter().filter(|r| !r.is_phony) {
        let Some(target) = norm(&r.target) else { continue };
        let mut deps = Vec::new();
        let listed = r.prerequisites.iter().map(|p| (p, false)).chain(r.order_only.iter().map(|p| (p, true)));
        for (q, oo) in listed {
            if phony.contains(q.as_str()) {
                deps.extend(memo[q.as_str()].iter().map(|(d, o)| (d.clone(), *o || oo)));
            } else {
                deps.push((q.clone(), oo));
            }
        }
        let node = nodes
            .entry(target.clone())
            .or_insert_with(|| TargetNode::new(target.clone(), Provenance::Declared, commit));
        for (d, oo) in deps {
            if let Some(dp) = norm(&d) {
                if oo && !node.deps.contains(&dp) {
                    order_only.insert((target.clone(), dp.clone()));
                } else if !oo {
                    order_only.remove(&(target.clone(), dp.clone()));
                }
                node.deps.insert(dp);
            }
        }
        if !r.recipe_lines.is_empty() {
            with_recipe.insert(target);
        }
    }
    let phony_paths: BTreeSet<ProjectPath> = phony.iter().filter_map(|p| ProjectPath::new(p).ok()).collect();
    let graph = DependencyGraph::from_nodes(GraphKind::Declared, commit, nodes.into_values())?;
    Ok(DeclaredGraph { graph, external_dropped: external, order_only, phony: phony_paths, with_recipe })
}

fn expand(
    name: &str,
    rules: &BTreeMap<&str, &DeclaredRule>,
    phony: &BTreeSet<&str>,
    memo: &mut BTreeMap<String, Vec<(String, bool)>>,
    stack: &mut Vec<String>,
) -> Result<Vec<(String, bool)>, MakeError> {
    if let Some(v) = memo.get(name) {
        return Ok(v.clone());
    }
    if let Some(pos) = stack.iter().position(|s| s == name) {
        let mut cycle: Vec<ProjectPath> = stack[pos..].iter().filter_map(|s| ProjectPath::new(s).ok()).collect();
        cycle.extend(ProjectPath::new(name).ok());
        return Err(MakeError::Cycle(GraphError::CycleError(cycle)));
    }
    stack.push(name.to_string());
    let mut out = Vec::new();
    if let Some(r) = rules.get(name) {
        let listed = r.prerequisites.iter().map(|p| (p, false)).chain(r.order_only.iter().map(|p| (p, true)));
        for (q, oo) in listed {
            if phony.contains(q.as_str()) {
                for (d, o) in expand(q, rules, phony, memo, stack)? {
                    out.push((d, o || oo));
                }
            } else {
                out.push((q.clone(), oo));
            }
        }
    }
    stack.pop();
    memo.insert(name.to_string(), out.clone());
    Ok(out)
}
