use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use depsentry::change::{compiler_dependencies, transitive_includes, SearchPaths};
use depsentry::infer::{execute_rebuilds, plan_rebuilds};
use depsentry::trace::{LiveTracer, TraceError};
use depsentry::{DependencyGraph, GraphKind, ProjectPath};
use depsentry_fixtures::tree::{write_all, Files};
use depsentry_fixtures::GenProject;

fn p(s: &str) -> ProjectPath {
    ProjectPath::new(s).unwrap()
}

fn make(root: &Path) {
    let st = Command::new("make").arg("-s").current_dir(root).status().unwrap();
    assert!(st.success());
}

#[test]
fn closures_agree_with_the_compiler_and_the_generator() {
    let g = GenProject::new(15, 4);
    let dir = tempfile::tempdir().unwrap();
    write_all(dir.path(), &g.files()).unwrap();
    // The generated header has to exist for the compiler to follow it.
    make(dir.path());
    let flags = vec!["-Iinclude".to_string(), "-Igen".to_string()];
    let search = SearchPaths::from_recipe(&flags.join(" "));
    for (obj, manifest) in g.include_manifest() {
        let src = p(&obj.replace(".o", ".c"));
        let closure = transitive_includes(&src, &search, dir.path()).unwrap();
        let cc = compiler_dependencies(&src, &flags, dir.path()).expect("cc -MM");
        assert_eq!(closure.files, cc, "{src}");
        let mut with_src = closure.files.clone();
        with_src.insert(src.clone());
        let want: BTreeSet<ProjectPath> = manifest.iter().map(|f| p(f)).collect();
        assert_eq!(with_src, want, "{src}");
        assert!(closure.unresolved.is_empty());
    }
}

fn rebuild_fixture(extra_prereq: bool) -> Files {
    let mut f = Files::new();
    f.insert("a.h".into(), "#define A 1\n".into());
    f.insert("a.c".into(), "#include \"a.h\"\nstatic int a = A;\n".into());
    f.insert("b.c".into(), "int b(void) { return 2; }\n".into());
    let rule = if extra_prereq {
        "$(OUT)/b.o: b.c a.c\n\t$(CC) -include a.c -c -o $@ b.c\n"
    } else {
        "$(OUT)/b.o: b.c\n\t$(CC) -c -o $@ b.c\n"
    };
    f.insert(
        "Makefile".into(),
        format!("OUT = build\nall: $(OUT)/b.o\n$(OUT):\n\tmkdir -p $(OUT)\n{rule}$(OUT)/b.o: | $(OUT)\nbroken.o:\n\tfalse\n.PHONY: all\n"),
    );
    f
}

#[test]
fn rebuilt_target_picks_up_the_new_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    write_all(dir.path(), &rebuild_fixture(false)).unwrap();
    make(dir.path());
    write_all(dir.path(), &rebuild_fixture(true)).unwrap();
    let incremental = DependencyGraph::new(GraphKind::Actual, "c1");
    let diff: BTreeSet<ProjectPath> = [p("build/b.o")].into_iter().collect();
    let plan = plan_rebuilds(&diff, &incremental);
    assert_eq!(plan.targets, diff);
    let mut tracer = LiveTracer::default();
    let out = match execute_rebuilds(&plan, &mut tracer, dir.path(), &[], "c1") {
        Err(TraceError::TracerUnavailable(why)) => {
            eprintln!("skipping: {why}");
            return;
        }
        other => other.unwrap(),
    };
    let want: BTreeSet<ProjectPath> = [p("b.c"), p("a.c"), p("a.h")].into_iter().collect();
    assert_eq!(out.graph.deps(&p("build/b.o")), Some(&want), "{}", out.graph);
    assert!(out.failures.is_empty());

    let broken: BTreeSet<ProjectPath> = [p("broken.o")].into_iter().collect();
    let out = execute_rebuilds(&plan_rebuilds(&broken, &incremental), &mut tracer, dir.path(), &[], "c1").unwrap();
    assert!(out.failures.contains_key(&p("broken.o")));
    assert!(!out.graph.contains(&p("broken.o")));

    let none = execute_rebuilds(&plan_rebuilds(&BTreeSet::new(), &incremental), &mut tracer, dir.path(), &[], "c1").unwrap();
    assert!(none.graph.is_empty());
}
