//! Turning a trace into an actual dependency graph.
//!
//! Each recipe is the process subtree rooted at a direct child of a make
//! process. The merged events of a subtree are classified as one unit and
//! every output it leaves behind becomes a node depending on the subtree's
//! inputs.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{BuildTrace, Op, TraceError, TraceEvent};
use crate::graph::{DependencyGraph, GraphKind, Provenance, TargetNode};
use crate::path::{normalize_path, ProjectPath, Resolved};

/// Files a process (or recipe subtree) consumed and produced. Paths are raw
/// absolute strings as recorded; `inputs` and `outputs` are disjoint.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProcessFileSummary {
    pub pid: i32,
    pub inputs: BTreeSet<String>,
    pub outputs: BTreeSet<String>,
    /// Paths the process removed and did not recreate, or removed before recreating.
    pub deleted: BTreeSet<String>,
    pub command: Option<String>,
}

/// Classifies the file operations of one process, given in sequence order.
pub fn classify_process(pid: i32, events: &[&TraceEvent]) -> ProcessFileSummary {
    let mut s = ProcessFileSummary { pid, ..Default::default() };
    let mut written: BTreeSet<String> = BTreeSet::new();
    let mut read_first: BTreeSet<String> = BTreeSet::new();
    for e in events {
        match e.op {
            Op::Read => {
                if !written.contains(&e.path) {
                    read_first.insert(e.path.clone());
                }
            }
            Op::Write | Op::Create => {
                written.insert(e.path.clone());
                s.outputs.insert(e.path.clone());
            }
            Op::Delete => {
                s.outputs.remove(&e.path);
                s.deleted.insert(e.path.clone());
            }
            Op::Rename => {
                let Some(to) = &e.path2 else { continue };
                if !written.contains(&e.path) {
                    read_first.insert(e.path.clone());
                }
                s.outputs.remove(&e.path);
                s.deleted.insert(e.path.clone());
                written.insert(to.clone());
                s.outputs.insert(to.clone());
            }
            Op::Exec => {
                if s.command.is_none() {
                    s.command = Some(e.path.clone());
                }
            }
            Op::Spawn | Op::Exit => {}
        }
    }
    s.inputs = read_first.difference(&s.outputs).cloned().collect();
    s
}

/// The graph reconstructed from a trace plus what was noticed on the way.
#[derive(Debug, Clone)]
pub struct ActualBuild {
    pub graph: DependencyGraph,
    pub warnings: Vec<String>,
    /// Accesses outside the project tree that were left out of the graph.
    pub external_dropped: usize,
    /// Recipe subtrees that produced more than one output.
    pub multi_output: Vec<(Option<String>, Vec<ProjectPath>)>,
    /// Every target written during the build.
    pub traced_targets: BTreeSet<ProjectPath>,
}

fn is_make(cmd: &str) -> bool {
    let argv0 = cmd.split(' ').next().unwrap_or("");
    let base = argv0.rsplit('/').next().unwrap_or(argv0);
    matches!(base, "make" | "gmake" | "gnumake")
}

pub fn build_actual_graph(trace: &BuildTrace, provenance: Provenance, commit: &str) -> Result<ActualBuild, TraceError> {
    let root = match trace.root_pid() {
        Some(r) => r,
        None => {
            return Ok(ActualBuild {
                graph: DependencyGraph::new(GraphKind::Actual, commit),
                warnings: Vec::new(),
                external_dropped: 0,
                multi_output: Vec::new(),
                traced_targets: BTreeSet::new(),
            })
        }
    };
    let mut parent: HashMap<i32, i32> = HashMap::new();
    let mut makes: BTreeSet<i32> = [root].into_iter().collect();
    for e in &trace.events {
        if e.pid != root {
            parent.entry(e.pid).or_insert(e.ppid);
        }
        if e.op == Op::Exec && is_make(&e.path) {
            makes.insert(e.pid);
        }
    }
    // Recipe root of every non-make pid: the ancestor whose parent is a make.
    let mut group_of: HashMap<i32, i32> = HashMap::new();
    for &pid in parent.keys() {
        if makes.contains(&pid) {
            continue;
        }
        let mut cur = pid;
        let mut guard = 0;
        loop {
            match parent.get(&cur) {
                Some(pp) if makes.contains(pp) => break,
                Some(pp) if guard < 100_000 => {
                    cur = *pp;
                    guard += 1;
                }
                _ => break,
            }
        }
        group_of.insert(pid, cur);
    }
    let mut grouped: BTreeMap<i32, Vec<&TraceEvent>> = BTreeMap::new();
    let mut first_seq: HashMap<i32, u64> = HashMap::new();
    for e in &trace.events {
        if let Some(g) = group_of.get(&e.pid) {
            grouped.entry(*g).or_default().push(e);
            first_seq.entry(*g).or_insert(e.seq);
        }
    }
    let mut order: Vec<i32> = grouped.keys().copied().collect();
    order.sort_by_key(|g| first_seq[g]);

    let mut external = 0usize;
    let mut norm = |raw: &str| -> Option<ProjectPath> {
        match normalize_path(raw, &trace.project_root) {
            Ok(Resolved::Project(p)) => Some(p),
            Ok(Resolved::External) => {
                external += 1;
                None
            }
            Err(_) => None,
        }
    };

    let mut warnings = Vec::new();
    let mut multi_output = Vec::new();
    let mut nodes: BTreeMap<ProjectPath, BTreeSet<ProjectPath>> = BTreeMap::new();
    let mut traced_targets = BTreeSet::new();
    for g in order {
        let summary = classify_process(g, &grouped[&g]);
        let inputs: BTreeSet<ProjectPath> = summary.inputs.iter().filter_map(|p| norm(p)).collect();
        let outputs: BTreeSet<ProjectPath> = summary.outputs.iter().filter_map(|p| norm(p)).collect();
        let deleted: BTreeSet<ProjectPath> = summary.deleted.iter().filter_map(|p| norm(p)).collect();
        for d in &deleted {
            if !outputs.contains(d) && nodes.remove(d).is_some() {
                warnings.push(format!("{d} was written by one recipe and deleted by a later one; keeping the deletion"));
                traced_targets.remove(d);
            }
        }
        if outputs.len() > 1 {
            multi_output.push((summary.command.clone(), outputs.iter().cloned().collect::<Vec<ProjectPath>>()));
        }
        for o in &outputs {
            let deps: BTreeSet<ProjectPath> = inputs.iter().filter(|i| *i != o).cloned().collect();
            traced_targets.insert(o.clone());
            match nodes.get_mut(o) {
                Some(existing) if deleted.contains(o) => {
                    warnings.push(format!("{o} was deleted and recreated by a later recipe; keeping the later inputs"));
                    *existing = deps;
                }
                Some(existing) => existing.extend(deps),
                None => {
                    nodes.insert(o.clone(), deps);
                }
            }
        }
    }
    for (cmd, outs) in &multi_output {
        let list: Vec<&str> = outs.iter().map(|p| p.as_str()).collect();
        warnings.push(format!(
            "recipe {} produced {} outputs: {}",
            cmd.as_deref().map(|c: &str| format!("`{c}`")).unwrap_or_else(|| "(unknown command)".into()),
            outs.len(),
            list.join(" ")
        ));
    }
    let graph = DependencyGraph::from_nodes(
        GraphKind::Actual,
        commit,
        nodes.into_iter().map(|(t, deps)| TargetNode { target: t, deps, provenance, last_updated_commit: commit.to_string() }),
    )?;
    Ok(ActualBuild { graph, warnings, external_dropped: external, multi_output, traced_targets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse_trace;
    use proptest::prelude::*;

    fn ev(seq: u64, op: Op, path: &str) -> TraceEvent {
        TraceEvent { seq, pid: 5, ppid: 1, op, path: path.into(), path2: None }
    }

    fn p(s: &str) -> ProjectPath {
        ProjectPath::new(s).unwrap()
    }

    #[test]
    fn classification_examples() {
        let e = [ev(1, Op::Read, "/p/a.c"), ev(2, Op::Read, "/p/b.h"), ev(3, Op::Create, "/p/a.o")];
        let s = classify_process(5, &e.iter().collect::<Vec<_>>());
        assert_eq!(s.inputs, ["/p/a.c".to_string(), "/p/b.h".into()].into_iter().collect());
        assert_eq!(s.outputs, ["/p/a.o".to_string()].into_iter().collect());

        let e = [ev(1, Op::Create, "/p/t.tmp"), ev(2, Op::Read, "/p/t.tmp"), ev(3, Op::Delete, "/p/t.tmp")];
        let s = classify_process(5, &e.iter().collect::<Vec<_>>());
        assert!(s.inputs.is_empty() && s.outputs.is_empty());

        let e = [ev(1, Op::Read, "/p/x"), ev(2, Op::Write, "/p/x")];
        let s = classify_process(5, &e.iter().collect::<Vec<_>>());
        assert!(s.inputs.is_empty());
        assert_eq!(s.outputs.len(), 1);

        let mut r = ev(2, Op::Rename, "/p/o.tmp");
        r.path2 = Some("/p/o".into());
        let e = [ev(1, Op::Create, "/p/o.tmp"), r];
        let s = classify_process(5, &e.iter().collect::<Vec<_>>());
        assert_eq!(s.outputs, ["/p/o".to_string()].into_iter().collect());
    }

    // Mirrors a compile of src/fzy.c: the shell spawns the compiler proper
    // and the assembler; everything between make's fork and the recipe's
    // exit counts for the one output.
    const RECIPE_TREE: &str = "#depsentry-trace v1 root=/fzy
1\t100\t1\tX\tmake
2\t174\t100\tS
3\t174\t100\tX\t/bin/sh -c cc -c -o src/fzy.o src/fzy.c
4\t175\t174\tS
5\t175\t174\tX\tcc1 src/fzy.c
6\t175\t174\tR\t/fzy/src/fzy.c
7\t175\t174\tR\t/usr/include/stdio.h
8\t175\t174\tR\t/fzy/src/fzy.h
9\t175\t174\tC\t/tmp/cc1.s
10\t176\t174\tS
11\t176\t174\tR\t/tmp/cc1.s
12\t176\t174\tC\t/fzy/src/fzy.o
13\t100\t1\tR\t/fzy/Makefile
14\t177\t100\tS
15\t177\t100\tR\t/fzy/src/fzy.o
16\t177\t100\tC\t/fzy/fzy
";

    #[test]
    fn recipe_subtrees_become_nodes() {
        let t = parse_trace(RECIPE_TREE).unwrap();
        let b = build_actual_graph(&t, Provenance::CleanTrace, "c0").unwrap();
        assert_eq!(b.graph.len(), 2);
        assert_eq!(b.graph.deps(&p("src/fzy.o")).unwrap(), &[p("src/fzy.c"), p("src/fzy.h")].into_iter().collect());
        assert_eq!(b.graph.deps(&p("fzy")).unwrap(), &[p("src/fzy.o")].into_iter().collect());
        assert_eq!(b.external_dropped, 2);
        assert!(b.multi_output.is_empty());
    }

    #[test]
    fn multiple_outputs_share_inputs() {
        let t = parse_trace(
            "#depsentry-trace v1 root=/p\n1\t1\t0\tX\tmake\n2\t2\t1\tS\n3\t2\t1\tR\t/p/g.y\n4\t2\t1\tC\t/p/g.c\n5\t2\t1\tC\t/p/g.h\n",
        )
        .unwrap();
        let b = build_actual_graph(&t, Provenance::CleanTrace, "c0").unwrap();
        assert_eq!(b.graph.len(), 2);
        assert_eq!(b.multi_output.len(), 1);
        assert_eq!(b.graph.deps(&p("g.h")), b.graph.deps(&p("g.c")));
    }

    #[test]
    fn submake_children_are_their_own_recipes() {
        let t = parse_trace(
            "#depsentry-trace v1 root=/p
1\t1\t0\tX\tmake
2\t2\t1\tS
3\t2\t1\tX\t/usr/bin/make -C lib
4\t3\t2\tS
5\t3\t2\tR\t/p/lib/l.c
6\t3\t2\tC\t/p/lib/l.o
7\t4\t2\tS
8\t4\t2\tR\t/p/lib/l.o
9\t4\t2\tC\t/p/lib/l.a
",
        )
        .unwrap();
        let b = build_actual_graph(&t, Provenance::CleanTrace, "c0").unwrap();
        assert_eq!(b.graph.deps(&p("lib/l.a")).unwrap(), &[p("lib/l.o")].into_iter().collect());
        assert_eq!(b.graph.deps(&p("lib/l.o")).unwrap(), &[p("lib/l.c")].into_iter().collect());
    }

    #[test]
    fn writers_union_and_delete_recreate_replaces() {
        let t = parse_trace(
            "#depsentry-trace v1 root=/p
1\t1\t0\tX\tmake
2\t2\t1\tS
3\t2\t1\tR\t/p/a
4\t2\t1\tC\t/p/out
5\t3\t1\tS
6\t3\t1\tR\t/p/b
7\t3\t1\tW\t/p/out
8\t4\t1\tS
9\t4\t1\tD\t/p/out
10\t4\t1\tR\t/p/c
11\t4\t1\tC\t/p/out
",
        )
        .unwrap();
        let b = build_actual_graph(&t, Provenance::CleanTrace, "c0").unwrap();
        assert_eq!(b.graph.deps(&p("out")).unwrap(), &[p("c")].into_iter().collect());
        assert_eq!(b.warnings.len(), 1);
    }

    fn arb_events() -> impl Strategy<Value = Vec<TraceEvent>> {
        let path = prop_oneof![Just("/p/a"), Just("/p/b"), Just("/p/c"), Just("/q/x")];
        proptest::collection::vec((0u8..5, path, prop_oneof![Just("/p/a"), Just("/p/d")]), 0..40).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (k, pa, pb))| {
                    let op = [Op::Read, Op::Write, Op::Create, Op::Delete, Op::Rename][k as usize];
                    TraceEvent {
                        seq: i as u64 + 1,
                        pid: 5,
                        ppid: 1,
                        op,
                        path: pa.to_string(),
                        path2: (op == Op::Rename).then(|| pb.to_string()),
                    }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn inputs_and_outputs_are_disjoint(events in arb_events()) {
            let refs: Vec<&TraceEvent> = events.iter().collect();
            let s = classify_process(5, &refs);
            prop_assert!(s.inputs.is_disjoint(&s.outputs));
        }
    }
}
