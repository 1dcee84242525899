use std::collections::BTreeSet;
use std::io;
use std::path::{Path, PathBuf};

use depsentry::config::{Config, Overrides, VcsMode};
use depsentry::detect::{parse_machine, Finding, FindingKind, Format};
use depsentry::pipeline::{check, cmd_report, cmd_verify, init, CheckOptions, InitOptions, RunResult};
use depsentry::store::Store;
use depsentry::trace::{run_traced_build, BuildMode, TraceError};
use depsentry_fixtures::scenarios::{clib, fzy};
use depsentry_fixtures::tree::{self, Files};
use depsentry_fixtures::{GenProject, SCRIPT};

type Key = (FindingKind, String, String);

fn keys(findings: &[Finding]) -> BTreeSet<Key> {
    findings.iter().map(|f| (f.kind, f.target.to_string(), f.dependency.to_string())).collect()
}

fn md(t: &str, d: &str) -> Key {
    (FindingKind::MissingDependency, t.into(), d.into())
}

fn config(root: &Path, store: &Path, replay: Option<PathBuf>, vcs: VcsMode) -> Config {
    let o = Overrides { store: Some(store.to_path_buf()), replay, vcs_mode: Some(vcs), make_args: None };
    Config::load(root, o).unwrap()
}

fn tracer_works() -> bool {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("Makefile"), "all:\n\t@true\n").unwrap();
    match run_traced_build(dir.path(), &[], &BuildMode::Clean) {
        Err(TraceError::TracerUnavailable(why)) => {
            eprintln!("skipping: {why}");
            false
        }
        _ => true,
    }
}

fn repo(files: &Files) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    tree::write_all(dir.path(), files).unwrap();
    tree::init_repo(dir.path());
    dir
}

fn live_init(root: &Path, store: &Path) -> RunResult {
    init(&config(root, store, None, VcsMode::PreApplied), &InitOptions { commit: None, force: false }).unwrap()
}

fn check_rev(root: &Path, store: &Path, rev: &str, skip_irrelevant: bool) -> RunResult {
    let c = config(root, store, None, VcsMode::GitCommit(rev.into()));
    check(&c, &CheckOptions { commit: None, skip_irrelevant }, &mut io::empty()).unwrap()
}

fn tick() {
    std::thread::sleep(std::time::Duration::from_millis(20));
}

fn fzy_want() -> BTreeSet<Key> {
    [md("src/fzy.o", "src/match.h"), md("src/fzy.o", "src/tty.h")].into_iter().collect()
}

#[test]
fn fzy_replay_init_and_check() {
    let r = repo(&fzy::base());
    let root = r.path();
    let aux = tempfile::tempdir().unwrap();
    let traces = aux.path().join("traces");
    tree::write_all(&traces, &fzy::golden_traces()).unwrap();
    let store = aux.path().join("store");

    let base = tree::commit_all(root, "base");
    tree::sync(root, &fzy::base(), &fzy::head()).unwrap();
    let head = tree::commit_all(root, "head");
    tree::git(root, &["checkout", "-q", &base]);
    let diff = aux.path().join("head.diff");
    std::fs::write(&diff, tree::git(root, &["diff", "-M", &base, &head])).unwrap();

    let c = config(root, &store, Some(traces.clone()), VcsMode::PreApplied);
    let first = init(&c, &InitOptions { commit: Some(fzy::BASE.into()), force: true }).unwrap();
    assert_eq!(keys(&first.report.findings), fzy_want());

    let again = init(&c, &InitOptions { commit: Some(fzy::BASE.into()), force: false }).unwrap_err();
    assert_eq!(again.exit_code(), 3);

    let c = config(root, &store, Some(traces), VcsMode::DiffFile(diff));
    let second = check(&c, &CheckOptions { commit: Some(fzy::HEAD.into()), skip_irrelevant: false }, &mut io::empty()).unwrap();
    assert_eq!(keys(&second.report.findings), fzy_want());
    assert_eq!(second.graph.deps(&depsentry::ProjectPath::new("src/fzy.o").unwrap()).map(|d| d.len()), Some(6));
    assert_eq!(Store::open(&store).load_meta().unwrap().root_commit, fzy::HEAD);

    let mut out = Vec::new();
    assert_eq!(cmd_report(&c, Format::Machine, &mut out).unwrap(), 0);
    assert_eq!(String::from_utf8(out).unwrap(), second.stored.machine);
    assert_eq!(keys(&parse_machine(&second.stored.machine).unwrap()), fzy_want());
}

#[test]
fn check_without_init_fails() {
    let r = repo(&fzy::base());
    let store = tempfile::tempdir().unwrap();
    let c = config(r.path(), &store.path().join("none"), None, VcsMode::PreApplied);
    let e = check(&c, &CheckOptions::default(), &mut io::empty()).unwrap_err();
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn whitespace_commit_keeps_findings_and_irrelevant_commit_is_skipped() {
    if !tracer_works() {
        return;
    }
    let files = clib::files();
    let r = repo(&files);
    let root = r.path();
    tree::commit_all(root, "clib");
    let store = tempfile::tempdir().unwrap();
    let first = live_init(root, store.path());
    assert_eq!(first.report.findings.len(), 9);

    tick();
    let mut next = files.clone();
    next.get_mut("src/clib-search.c").unwrap().push('\n');
    tree::sync(root, &files, &next).unwrap();
    let rev = tree::commit_all(root, "whitespace");
    let second = check_rev(root, store.path(), &rev, false);
    assert_eq!(keys(&second.report.findings), keys(&first.report.findings));
    assert!(first.graph.same_structure(&second.graph));

    let mut docs = next.clone();
    docs.insert("README".into(), "clib\n".into());
    tree::sync(root, &next, &docs).unwrap();
    let rev = tree::commit_all(root, "readme");
    let third = check_rev(root, store.path(), &rev, true);
    assert!(third.skipped);
    assert_eq!(keys(&third.report.findings), keys(&first.report.findings));
    assert_eq!(Store::open(store.path()).load_meta().unwrap().root_commit, rev);
}

#[test]
fn scripted_commits_report_exactly_the_injected_errors() {
    if !tracer_works() {
        return;
    }
    let mut model = GenProject::new(5, 2);
    let mut files = model.files();
    let r = repo(&files);
    let root = r.path();
    tree::commit_all(root, "initial");
    let store = tempfile::tempdir().unwrap();
    let expected = |m: &GenProject| {
        let (mds, rds) = m.expected_errors();
        let mut out: BTreeSet<Key> = mds.into_iter().map(|(t, d)| md(&t, &d)).collect();
        out.extend(rds.into_iter().map(|(t, d)| (FindingKind::RedundantDependency, t, d)));
        out
    };
    assert_eq!(keys(&live_init(root, store.path()).report.findings), expected(&model));
    for step in SCRIPT.iter().take(6) {
        tick();
        let msg = model.apply(*step);
        let next = model.files();
        tree::sync(root, &files, &next).unwrap();
        files = next;
        let rev = tree::commit_all(root, &msg);
        let got = check_rev(root, store.path(), &rev, false);
        assert_eq!(keys(&got.report.findings), expected(&model), "after {msg}");
    }
}

#[test]
fn verify_accepts_real_findings_and_rejects_a_fake_one() {
    if !tracer_works() {
        return;
    }
    let r = repo(&clib::files());
    let root = r.path();
    tree::commit_all(root, "clib");
    let store = tempfile::tempdir().unwrap();
    live_init(root, store.path());
    let c = config(root, store.path(), None, VcsMode::PreApplied);
    let mut out = Vec::new();
    assert_eq!(cmd_verify(&c, None, &mut out).unwrap(), 0);
    let lines = String::from_utf8(out).unwrap();
    assert_eq!(lines.lines().count(), 9);
    assert!(lines.lines().all(|l| l.contains("\ttrue\t")), "{lines}");

    let aux = tempfile::tempdir().unwrap();
    let fake = aux.path().join("fake.report");
    std::fs::write(&fake, "#depsentry-report v1\nMD\tsrc/clib.o\tsrc/clib.c\ttrace\tc\n").unwrap();
    let mut out = Vec::new();
    assert_eq!(cmd_verify(&c, Some(&fake), &mut out).unwrap(), 1);
    assert!(String::from_utf8(out).unwrap().contains("\tfalse\t"));
}
