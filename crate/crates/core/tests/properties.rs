use std::collections::BTreeSet;

use depsentry::detect::{detect, FindingKind};
use depsentry::graph::diff_graphs;
use depsentry::make::DeclaredGraph;
use depsentry::store::Store;
use depsentry::{DependencyGraph, GraphKind, ProjectPath, Provenance, TargetNode};
use proptest::prelude::*;

fn p(s: &str) -> ProjectPath {
    ProjectPath::new(s).unwrap()
}

/// Targets t0..t5 over files f0..f4 and higher-numbered targets, so every
/// graph is acyclic.
fn graph() -> impl Strategy<Value = DependencyGraph> {
    proptest::collection::btree_map(0usize..6, proptest::collection::btree_set(0usize..11, 0..5), 0..6).prop_map(|m| {
        let nodes = m.into_iter().map(|(t, deps)| {
            let mut n = TargetNode::new(p(&format!("t{t}")), Provenance::CleanTrace, "c");
            for d in deps {
                if d < 5 {
                    n.deps.insert(p(&format!("f{d}")));
                } else if d - 5 > t {
                    n.deps.insert(p(&format!("t{}", d - 5)));
                }
            }
            n
        });
        DependencyGraph::from_nodes(GraphKind::Actual, "c", nodes).unwrap()
    })
}

fn declared(g: &DependencyGraph, phony: BTreeSet<ProjectPath>) -> DeclaredGraph {
    let mut d = g.clone();
    d.kind = GraphKind::Declared;
    DeclaredGraph {
        with_recipe: g.targets().cloned().collect(),
        graph: d,
        external_dropped: 0,
        order_only: BTreeSet::new(),
        phony,
    }
}

type Edge = (ProjectPath, ProjectPath);

fn found(g: &DependencyGraph, d: &DeclaredGraph, kind: FindingKind) -> BTreeSet<Edge> {
    detect(g, d, "c")
        .findings
        .into_iter()
        .filter(|f| f.kind == kind)
        .map(|f| (f.target, f.dependency))
        .collect()
}

proptest! {
    #[test]
    fn findings_are_the_two_set_differences(a in graph(), b in graph(), phony in proptest::collection::btree_set(0usize..6, 0..2)) {
        let phony: BTreeSet<ProjectPath> = phony.into_iter().map(|i| p(&format!("t{i}"))).collect();
        let d = declared(&b, phony.clone());
        let mut want_md = BTreeSet::new();
        let mut want_rd = BTreeSet::new();
        for n in a.nodes().filter(|n| !phony.contains(&n.target)) {
            let decl = b.deps(&n.target).cloned().unwrap_or_default();
            want_md.extend(n.deps.difference(&decl).map(|x| (n.target.clone(), x.clone())));
            want_rd.extend(decl.difference(&n.deps).map(|x| (n.target.clone(), x.clone())));
        }
        prop_assert_eq!(found(&a, &d, FindingKind::MissingDependency), want_md);
        prop_assert_eq!(found(&a, &d, FindingKind::RedundantDependency), want_rd);
    }

    #[test]
    fn accurate_declarations_give_no_findings(g in graph()) {
        prop_assert!(detect(&g, &declared(&g, BTreeSet::new()), "c").findings.is_empty());
    }

    #[test]
    fn deltas_compose(a in graph(), b in graph(), c in graph()) {
        let (ab, _) = a.apply_delta(&diff_graphs(&a, &b), "c2").unwrap();
        let (abc, _) = ab.apply_delta(&diff_graphs(&ab, &c), "c3").unwrap();
        prop_assert!(abc.same_structure(&c));
        prop_assert!(diff_graphs(&c, &c).is_empty());
    }

    #[test]
    fn stored_graph_loads_back(g in graph()) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path());
        store.save_graph(&g).unwrap();
        prop_assert_eq!(store.load_graph().unwrap(), g);
    }
}
