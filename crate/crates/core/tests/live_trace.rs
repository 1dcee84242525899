use std::fs;
use std::path::Path;

use depsentry::change::compiler_dependencies;
use depsentry::trace::{build_actual_graph, parse_trace, run_traced_build, write_trace, BuildMode, ReplayTracer, TraceError, TraceProvider};
use depsentry::{ProjectPath, Provenance};
use depsentry_fixtures::scenarios::fzy;
use depsentry_fixtures::tree::write_all;
use depsentry_fixtures::GenProject;

fn p(s: &str) -> ProjectPath {
    ProjectPath::new(s).unwrap()
}

fn write(root: &Path, rel: &str, body: &str) {
    let f = root.join(rel);
    fs::create_dir_all(f.parent().unwrap()).unwrap();
    fs::write(f, body).unwrap();
}

fn small_project(root: &Path) {
    write(root, "include/a.h", "#include \"b.h\"\n#define A B\n");
    write(root, "include/b.h", "#define B 2\n");
    write(root, "src/main.c", "#include <stdio.h>\n#include \"a.h\"\nint main(void){printf(\"%d\\n\", A);return 0;}\n");
    write(root, "gen.sh", "echo '#define G 1'\n");
    write(
        root,
        "Makefile",
        "CFLAGS = -Iinclude\n\
all: app gen.h lnk\n\
app: src/main.o\n\t$(CC) -o $@ $^\n\
src/main.o: src/main.c include/a.h\n\t$(CC) $(CFLAGS) -c -o $@ $<\n\
gen.h: gen.sh\n\tsh gen.sh > gen.h.tmp && mv gen.h.tmp gen.h\n\
lnk: gen.h\n\tln -sf gen.h lnk\n\
.PHONY: all\n",
    );
}

fn check_graph(mode_env: &str) {
    let dir = tempfile::tempdir().unwrap();
    small_project(dir.path());
    std::env::set_var("DEPSENTRY_TRACE_MODE", mode_env);
    let trace = match run_traced_build(dir.path(), &[], &BuildMode::Clean) {
        Err(TraceError::TracerUnavailable(why)) => {
            eprintln!("skipping: {why}");
            return;
        }
        other => other.unwrap(),
    };
    let b = build_actual_graph(&trace, Provenance::CleanTrace, "c0").unwrap();
    let expect_obj = [p("src/main.c"), p("include/a.h"), p("include/b.h")].into_iter().collect();
    assert_eq!(b.graph.deps(&p("src/main.o")), Some(&expect_obj), "{}", b.graph);
    assert_eq!(b.graph.deps(&p("app")), Some(&[p("src/main.o")].into_iter().collect()));
    assert_eq!(b.graph.deps(&p("gen.h")), Some(&[p("gen.sh")].into_iter().collect()));
    assert_eq!(b.graph.deps(&p("lnk")), Some(&[p("gen.h")].into_iter().collect()));
    assert!(!b.graph.contains(&p("gen.h.tmp")));
    assert!(b.external_dropped > 0);
}

#[test]
fn live_trace_both_modes() {
    // One test so the mode switch through the environment is not racy.
    check_graph("seccomp");
    check_graph("syscall");
}

#[test]
fn failing_build_reports_status() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "Makefile", "all:\n\t@echo broken >&2; exit 3\n");
    match run_traced_build(dir.path(), &[], &BuildMode::Clean) {
        Err(TraceError::BuildFailed { status, stderr_tail }) => {
            assert_ne!(status, 0);
            assert!(stderr_tail.contains("broken"), "{stderr_tail}");
        }
        Err(TraceError::TracerUnavailable(_)) => {}
        other => panic!("expected failure, got {other:?}"),
    }
}

fn traced(root: &Path, args: &[String]) -> Option<depsentry::trace::BuildTrace> {
    match run_traced_build(root, args, &BuildMode::Clean) {
        Err(TraceError::TracerUnavailable(why)) => {
            eprintln!("skipping: {why}");
            None
        }
        other => Some(other.unwrap()),
    }
}

#[test]
fn three_file_project_matches_compiler_rules() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write(root, "h.h", "#define H 1\n");
    write(root, "a.c", "int a(void) { return 0; }\n");
    write(root, "b.c", "#include \"h.h\"\nint main(void) { return H - 1; }\n");
    write(root, "Makefile", "app: a.o b.o\n\t$(CC) -o $@ a.o b.o\na.o: a.c\n\t$(CC) -c -o $@ a.c\nb.o: b.c h.h\n\t$(CC) -c -o $@ b.c\n");
    let Some(trace) = traced(root, &[]) else { return };
    let g = build_actual_graph(&trace, Provenance::CleanTrace, "c").unwrap().graph;
    let set = |v: &[&str]| v.iter().map(|s| p(s)).collect::<std::collections::BTreeSet<_>>();
    assert_eq!(g.deps(&p("a.o")), Some(&set(&["a.c"])));
    assert_eq!(g.deps(&p("b.o")), Some(&set(&["b.c", "h.h"])));
    assert_eq!(g.deps(&p("app")), Some(&set(&["a.o", "b.o"])));
    assert_eq!(g.len(), 3);
    // The compiler's own dependency output agrees on headers.
    for (obj, src) in [("a.o", "a.c"), ("b.o", "b.c")] {
        let mut mm = compiler_dependencies(&p(src), &[], root).expect("cc -MM");
        mm.insert(p(src));
        assert_eq!(g.deps(&p(obj)), Some(&mm));
    }
}

#[test]
fn parallel_build_gives_the_same_graph() {
    let gen = GenProject::clean(12, 21);
    let one = tempfile::tempdir().unwrap();
    let many = tempfile::tempdir().unwrap();
    write_all(one.path(), &gen.files()).unwrap();
    write_all(many.path(), &gen.files()).unwrap();
    let Some(t1) = traced(one.path(), &["-j1".to_string()]) else { return };
    let t4 = traced(many.path(), &["-j4".to_string()]).unwrap();
    let g1 = build_actual_graph(&t1, Provenance::CleanTrace, "c").unwrap().graph;
    let g4 = build_actual_graph(&t4, Provenance::CleanTrace, "c").unwrap().graph;
    assert!(g1.same_structure(&g4), "-j1:\n{g1}\n-j4:\n{g4}");
    for (obj, files) in gen.include_manifest() {
        let want: std::collections::BTreeSet<_> = files.iter().map(|f| p(f)).collect();
        assert_eq!(g1.deps(&p(&obj)), Some(&want), "{obj}");
    }
}

#[test]
fn replay_of_a_recorded_trace_gives_the_same_graph() {
    let dir = tempfile::tempdir().unwrap();
    small_project(dir.path());
    let Some(trace) = traced(dir.path(), &[]) else { return };
    let store = tempfile::tempdir().unwrap();
    let file = store.path().join("clean.trace");
    write_trace(&trace, &file).unwrap();
    let mut replay = ReplayTracer { dir: store.path().to_path_buf() };
    let back = replay.trace_build(dir.path(), &[], &BuildMode::Clean, "c0").unwrap();
    assert_eq!(back, trace);
    let a = build_actual_graph(&trace, Provenance::CleanTrace, "c0").unwrap().graph;
    let b = build_actual_graph(&back, Provenance::CleanTrace, "c0").unwrap().graph;
    assert_eq!(a, b);
}

#[test]
fn golden_fzy_incremental_trace() {
    let t = parse_trace(&fzy::incremental_trace()).unwrap();
    let g = build_actual_graph(&t, Provenance::IncrementalTrace, fzy::HEAD).unwrap();
    let two = [p("src/fzy.c"), p("src/fzy.h")].into_iter().collect();
    assert_eq!(g.graph.deps(&p("src/fzy.o")), Some(&two));
    assert!(g.external_dropped > 0);
    let empty = parse_trace("#depsentry-trace v1 root=/fzy\n").unwrap();
    assert!(build_actual_graph(&empty, Provenance::CleanTrace, "c").unwrap().graph.is_empty());
}
