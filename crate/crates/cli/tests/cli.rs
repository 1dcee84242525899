use std::path::Path;
use std::process::{Command, Output};

use depsentry_fixtures::scenarios::fzy;
use depsentry_fixtures::tree;

fn depsentry(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depsentry")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_bad_flags() {
    let o = depsentry(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("check"));
    assert_eq!(code(&depsentry(&["check", "--no-such-flag"])), 3);
    assert_eq!(code(&depsentry(&["frobnicate"])), 3);
}

#[test]
fn report_without_a_store_fails() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let o = depsentry(&["report", "--project", s(dir.path()), "--store", s(&store)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("depsentry: "));
}

#[test]
fn replayed_fzy_session() {
    let repo = tempfile::tempdir().unwrap();
    let root = repo.path();
    tree::write_all(root, &fzy::base()).unwrap();
    tree::init_repo(root);
    let base = tree::commit_all(root, "base");
    tree::sync(root, &fzy::base(), &fzy::head()).unwrap();
    let head = tree::commit_all(root, "head");
    tree::git(root, &["checkout", "-q", &base]);

    let aux = tempfile::tempdir().unwrap();
    let traces = aux.path().join("traces");
    tree::write_all(&traces, &fzy::golden_traces()).unwrap();
    let diff = aux.path().join("head.diff");
    std::fs::write(&diff, tree::git(root, &["diff", "-M", &base, &head])).unwrap();
    let store = aux.path().join("store");
    let common = ["--project", s(root), "--store", s(&store), "--replay", s(&traces)];

    let mut args = vec!["init"];
    args.extend(common);
    args.extend(["--commit", fzy::BASE, "--format", "machine"]);
    let o = depsentry(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let init_report = String::from_utf8(o.stdout).unwrap();
    assert_eq!(init_report.lines().count(), 3);

    assert_eq!(code(&depsentry(&args)), 3);

    let mut args = vec!["check"];
    args.extend(common);
    args.extend(["--diff", s(&diff), "--commit", fzy::HEAD, "--format", "machine"]);
    let o = depsentry(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let machine = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<Vec<&str>> = machine.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    let pairs: Vec<(&str, &str, &str)> = rows.iter().map(|r| (r[0], r[1], r[2])).collect();
    assert_eq!(pairs, [("MD", "src/fzy.o", "src/match.h"), ("MD", "src/fzy.o", "src/tty.h")]);

    let o = depsentry(&["report", "--project", s(root), "--store", s(&store), "--format", "machine"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), machine);
    let o = depsentry(&["report", "--project", s(root), "--store", s(&store)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("src/match.h"));

    // A declared prerequisite cannot be a missing dependency.
    let fake = aux.path().join("fake.report");
    std::fs::write(&fake, "#depsentry-report v1\nMD\tsrc/fzy.o\tsrc/fzy.c\ttrace\tx\n").unwrap();
    let o = depsentry(&["verify", "--project", s(root), "--store", s(&store), "--report", s(&fake)]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("MD\tsrc/fzy.o\tsrc/fzy.c\tfalse\t"));
}
