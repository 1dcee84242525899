//! The commands: `init`, `check`, `report` and `verify`.
//!
//! Exit codes: 0 the command ran (findings or not), 1 verification rejected
//! a finding, 2 a build or trace failed, 3 usage or state errors.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use thiserror::Error;

use crate::change::{extract_directive_changes, parse_diff, ChangeError, CommitDelta};
use crate::config::{Config, ConfigError, TracingMode, VcsMode};
use crate::detect::{detect, parse_machine, render, ErrorReport, Format, ReportParseError};
use crate::graph::{DependencyGraph, GraphError, Provenance};
use crate::infer::{execute_rebuilds, infer_file_updates, merge, plan_rebuilds, InferenceInputs, ResolverContext};
use crate::make::{diff_recipes, expand_phony, parse_database, snapshot_recipes, DeclaredGraph, MakeError, MakeRunner, RecipeSnapshot};
use crate::oracle::{verify, Method, OracleError, ProbeScope, Verdict};
use crate::path::{normalize_path, ProjectPath, Resolved};
use crate::store::{Meta, StateUpdate, Store, StoreError, StoredReport};
use crate::trace::{build_actual_graph, BuildMode, LiveTracer, ReplayTracer, TraceError, TraceProvider};
use crate::util::sha256_hex;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Make(#[from] MakeError),
    #[error(transparent)]
    Change(#[from] ChangeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Report(#[from] ReportParseError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Trace(_) | PipelineError::Make(_) | PipelineError::Graph(_) => 2,
            _ => 3,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Io { context, source }
}

/// What a traced command produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub commit: String,
    pub graph: DependencyGraph,
    pub report: ErrorReport,
    pub stored: StoredReport,
    /// Set when `--skip-irrelevant` skipped the build.
    pub skipped: bool,
}

fn provider_for(config: &Config, store: &Store) -> Box<dyn TraceProvider> {
    match &config.tracing_mode {
        TracingMode::Live => Box::new(LiveTracer {
            make_program: Some(config.make_program.clone()),
            persist_dir: Some(store.traces_dir()),
        }),
        TracingMode::Replay(dir) => Box::new(ReplayTracer { dir: dir.clone() }),
    }
}

fn runner_for(config: &Config) -> MakeRunner {
    MakeRunner::new(&config.make_program, &config.make_args)
}

fn git(root: &Path, args: &[&str]) -> Result<String, PipelineError> {
    let out = Command::new("git")
        .current_dir(root)
        .args(args)
        .output()
        .map_err(io_err("running git"))?;
    if !out.status.success() {
        return Err(PipelineError::Usage(format!(
            "git {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn head_commit(root: &Path) -> Option<String> {
    git(root, &["rev-parse", "HEAD"]).ok().map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
}

struct Declared {
    declared: DeclaredGraph,
    recipes: RecipeSnapshot,
}

fn declared_state(config: &Config, commit: &str) -> Result<Declared, PipelineError> {
    let runner = runner_for(config);
    let root = &config.project_root;
    let db = parse_database(&runner.database(root)?)?;
    let declared = expand_phony(&db.rules, root, commit)?;
    let recipes = snapshot_recipes(&runner.dry_run(root)?, commit, Some(root))?;
    Ok(Declared { declared, recipes })
}

fn split_commands(text: &str) -> Vec<&str> {
    text.split(['\n', ';', '&', '|']).map(str::trim).filter(|c| !c.is_empty()).collect()
}

/// Recipes that create soft links without replacing an existing one.
pub fn soft_link_warnings(recipes: &RecipeSnapshot) -> Vec<String> {
    let mut out = Vec::new();
    for (target, recipe) in &recipes.commands {
        let Some(text) = &recipe.text else { continue };
        for cmd in split_commands(text) {
            let mut words = cmd.trim_start_matches(['@', '-', '+']).split_whitespace();
            if words.next().map(|w| w.rsplit('/').next().unwrap_or(w)) != Some("ln") {
                continue;
            }
            let flags: Vec<&str> = words.take_while(|w| w.starts_with('-')).collect();
            let short: String = flags.iter().filter(|f| !f.starts_with("--")).map(|f| &f[1..]).collect();
            let symbolic = short.contains('s') || flags.contains(&"--symbolic");
            let force = short.contains('f') || flags.contains(&"--force");
            if symbolic && !force {
                out.push(format!(
                    "recipe of {target} runs `{cmd}`: without -f an existing link is kept, so the traced dependencies can be stale"
                ));
            }
        }
    }
    out
}

fn finish(
    config: &Config,
    commit: &str,
    graph: &DependencyGraph,
    declared: &Declared,
    mut warnings: Vec<String>,
    externals: usize,
    failed_rebuilds: usize,
    unresolved: usize,
) -> (ErrorReport, StoredReport) {
    let mut decl = declared.declared.clone();
    decl.graph = config.filter_graph(&decl.graph);
    let mut report = detect(&config.filter_graph(graph), &decl, commit);
    warnings.extend(soft_link_warnings(&declared.recipes));
    warnings.append(&mut report.warnings);
    let mut seen = BTreeSet::new();
    warnings.retain(|w| seen.insert(w.clone()));
    report.warnings = warnings;
    report.stats.externals_dropped = (externals + declared.declared.external_dropped) as u64;
    report.stats.failed_rebuilds = failed_rebuilds as u64;
    report.stats.unresolved_includes = unresolved as u64;
    let mut notes = crate::store::Notes { warnings: report.warnings.clone(), ..Default::default() };
    for (k, v) in report.stats.entries() {
        notes.stats.insert(k.to_string(), v);
    }
    let stored = StoredReport { machine: render(&report, Format::Machine), human: render(&report, Format::Human), notes };
    (report, stored)
}

#[derive(Debug, Clone, Default)]
pub struct InitOptions {
    /// Label of the current tree; defaults to the git HEAD.
    pub commit: Option<String>,
    pub force: bool,
}

/// Traced clean build, declared graph, recipe snapshot, first detection.
pub fn init(config: &Config, opts: &InitOptions) -> Result<RunResult, PipelineError> {
    let store = Store::open_locked(&config.store_dir)?;
    if store.is_initialized() && !opts.force {
        return Err(PipelineError::Usage(format!(
            "store {} is already initialized; pass --force to start over",
            config.store_dir.display()
        )));
    }
    let root = &config.project_root;
    let commit = opts.commit.clone().or_else(|| head_commit(root)).unwrap_or_else(|| "worktree".to_string());
    let mut provider = provider_for(config, &store);
    let trace = provider.trace_build(root, &config.make_args, &BuildMode::Clean, &commit)?;
    let built = build_actual_graph(&trace, Provenance::CleanTrace, &commit)?;
    let declared = declared_state(config, &commit)?;
    let (report, stored) = finish(config, &commit, &built.graph, &declared, built.warnings, built.external_dropped, 0, 0);
    let meta = Meta { project_root: root.clone(), root_commit: commit.clone(), tool_version: TOOL_VERSION.to_string() };
    store.save_all(&StateUpdate {
        graph: &built.graph,
        recipes: &declared.recipes,
        meta: &meta,
        pending: &BTreeSet::new(),
        report: &stored,
    })?;
    Ok(RunResult { commit, graph: built.graph, report, stored, skipped: false })
}

#[derive(Debug, Clone, Default)]
pub struct CheckOptions {
    /// Commit to analyze (git mode) or label for the diff.
    pub commit: Option<String>,
    pub skip_irrelevant: bool,
}

fn apply_diff(root: &Path, diff: &Path) -> Result<(), PipelineError> {
    let path = diff.to_string_lossy();
    if git(root, &["apply", "-R", "--check", &path]).is_ok() {
        log::info!("{} is already applied", diff.display());
        return Ok(());
    }
    git(root, &["apply", &path]).map(|_| ())
}

fn diff_label(text: &str) -> String {
    format!("diff-{}", &sha256_hex(text.as_bytes())[..12])
}

/// Gets the commit's diff and brings the working tree to the commit.
fn obtain_delta(config: &Config, opts: &CheckOptions, parent: &str, stdin: &mut dyn Read) -> Result<(String, String), PipelineError> {
    let root = &config.project_root;
    match &config.vcs_mode {
        VcsMode::GitCommit(c) => {
            // Symbolic names move; the stored base must not.
            let id = git(root, &["rev-parse", "--verify", &format!("{c}^{{commit}}")])?.trim().to_string();
            let text = git(root, &["diff", "-M", "--relative", parent, &id])?;
            git(root, &["checkout", "-q", &id])?;
            Ok((id, text))
        }
        VcsMode::DiffFile(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| PipelineError::Usage(format!("reading {}: {e}", p.display())))?;
            apply_diff(root, p)?;
            Ok((opts.commit.clone().unwrap_or_else(|| diff_label(&text)), text))
        }
        VcsMode::PreApplied => {
            let mut text = String::new();
            stdin.read_to_string(&mut text).map_err(io_err("reading the diff from stdin"))?;
            Ok((opts.commit.clone().unwrap_or_else(|| diff_label(&text)), text))
        }
    }
}

fn build_relevant(delta: &CommitDelta, config: &Config) -> bool {
    delta.makefile_changed || delta.touched().iter().any(|p| config.suffixes.is_code(p))
}

fn to_project(keys: impl IntoIterator<Item = String>, root: &Path) -> BTreeSet<ProjectPath> {
    keys.into_iter()
        .filter_map(|k| match normalize_path(&k, root) {
            Ok(Resolved::Project(p)) => Some(p),
            _ => None,
        })
        .collect()
}

/// Analyzes one commit on top of the stored state. On a failed build the
/// store is left at the parent commit.
pub fn check(config: &Config, opts: &CheckOptions, stdin: &mut dyn Read) -> Result<RunResult, PipelineError> {
    let store = Store::open_locked(&config.store_dir)?;
    let meta = store.load_meta()?;
    let historical = store.load_graph()?;
    let old_recipes = store.load_recipes()?;
    let pending = store.load_pending()?;
    let root = &config.project_root;

    let (commit, diff_text) = obtain_delta(config, opts, &meta.root_commit, stdin)?;
    let delta = parse_diff(&diff_text, &config.suffixes, &commit)?;

    if opts.skip_irrelevant && !build_relevant(&delta, config) {
        log::info!("commit {commit} changes nothing the build reads; skipping");
        let stored = store.load_report()?;
        let findings = parse_machine(&stored.machine)?;
        let report = ErrorReport { commit: commit.clone(), findings, warnings: stored.notes.warnings.clone(), ..Default::default() };
        let meta = Meta { root_commit: commit.clone(), ..meta };
        store.save_all(&StateUpdate { graph: &historical, recipes: &old_recipes, meta: &meta, pending: &pending, report: &stored })?;
        return Ok(RunResult { commit, graph: historical, report, stored, skipped: true });
    }

    let mut provider = provider_for(config, &store);
    let trace = provider.trace_build(root, &config.make_args, &BuildMode::Incremental, &commit)?;
    let incremental = build_actual_graph(&trace, Provenance::IncrementalTrace, &commit)?;
    let declared = declared_state(config, &commit)?;
    let directive_changes = extract_directive_changes(&delta, &config.suffixes);

    let now_built = to_project(declared.recipes.commands.keys().cloned(), root);
    let recipe_diff: BTreeSet<ProjectPath> = to_project(diff_recipes(&old_recipes, &declared.recipes), root)
        .into_iter()
        .filter(|t| !declared.declared.phony.contains(t) && now_built.contains(t))
        .collect();
    let ctx = ResolverContext {
        project_root: root,
        suffixes: &config.suffixes,
        recipes: &declared.recipes,
        declared: &declared.declared,
    };
    let mut plan = plan_rebuilds(&recipe_diff, &incremental.graph);
    let uncovered = infer_file_updates(&historical, &delta, &ctx).uncovered;
    plan.add_uncovered(&uncovered, &incremental.graph);
    let rebuild = execute_rebuilds(&plan, provider.as_mut(), root, &config.make_args, &commit)?;

    let inputs = InferenceInputs {
        historical: &historical,
        incremental: &incremental.graph,
        directive_changes: &directive_changes,
        delta: &delta,
        previous_recipes: Some(&old_recipes),
        pending: &pending,
    };
    let merged = merge(&inputs, &rebuild.graph, &ctx, &commit)?;

    let mut warnings = incremental.warnings.clone();
    warnings.extend(rebuild.warnings.iter().cloned());
    for (t, why) in &rebuild.failures {
        warnings.push(format!("single-target rebuild of {t} failed: {why}"));
    }
    warnings.extend(merged.warnings.iter().cloned());
    for p in &merged.pending {
        warnings.push(format!("{} includes {} which resolves to no file; {} may miss it", p.includer, p.spec, p.target));
    }
    let (report, stored) = finish(
        config,
        &commit,
        &merged.graph,
        &declared,
        warnings,
        incremental.external_dropped + rebuild.external_dropped,
        rebuild.failures.len(),
        merged.pending.len(),
    );
    let meta = Meta { root_commit: commit.clone(), tool_version: TOOL_VERSION.to_string(), ..meta };
    store.save_all(&StateUpdate {
        graph: &merged.graph,
        recipes: &declared.recipes,
        meta: &meta,
        pending: &merged.pending,
        report: &stored,
    })?;
    Ok(RunResult { commit, graph: merged.graph, report, stored, skipped: false })
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), PipelineError> {
    out.write_all(text.as_bytes()).map_err(io_err("writing output"))
}

fn print_result(r: &RunResult, format: Format, out: &mut dyn Write) -> Result<(), PipelineError> {
    let text = match format {
        Format::Machine => &r.stored.machine,
        Format::Human => &r.stored.human,
    };
    if format == Format::Machine {
        for w in &r.report.warnings {
            log::warn!("{w}");
        }
    }
    write_out(out, text)
}

pub fn cmd_init(config: &Config, opts: &InitOptions, format: Format, out: &mut dyn Write) -> Result<i32, PipelineError> {
    let r = init(config, opts)?;
    print_result(&r, format, out)?;
    Ok(0)
}

pub fn cmd_check(config: &Config, opts: &CheckOptions, format: Format, stdin: &mut dyn Read, out: &mut dyn Write) -> Result<i32, PipelineError> {
    let r = check(config, opts, stdin)?;
    print_result(&r, format, out)?;
    Ok(0)
}

/// Prints the last stored report again.
pub fn cmd_report(config: &Config, format: Format, out: &mut dyn Write) -> Result<i32, PipelineError> {
    let stored = Store::open(&config.store_dir).load_report()?;
    write_out(out, if format == Format::Machine { &stored.machine } else { &stored.human })?;
    Ok(0)
}

/// Checks every finding of a machine report; 0 only when all are confirmed.
pub fn cmd_verify(config: &Config, report: Option<&Path>, out: &mut dyn Write) -> Result<i32, PipelineError> {
    let path: PathBuf = report.map(Path::to_path_buf).unwrap_or_else(|| config.store_dir.join(crate::store::REPORT_FILE));
    let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Usage(format!("reading report {}: {e}", path.display())))?;
    let findings = parse_machine(&text)?;
    let _lock = if config.store_dir.is_dir() { Some(Store::open_locked(&config.store_dir)?) } else { None };
    let runner = runner_for(config);
    let scope = ProbeScope::new(&config.project_root, Some(&config.store_dir));
    let mut all = true;
    for f in &findings {
        let verdict = match verify(f, &config.project_root, &runner, &scope) {
            Ok(v) => v,
            Err(e @ (OracleError::ProbeFailed(_) | OracleError::RewriteFailed { .. })) => {
                log::warn!("{} {} {}: {e}", f.kind.as_str(), f.target, f.dependency);
                Verdict { finding: f.clone(), confirmed: false, method: Method::for_kind(f.kind), detail: e.to_string() }
            }
            Err(e) => return Err(PipelineError::Usage(e.to_string())),
        };
        log::info!("{}", verdict.detail);
        all &= verdict.confirmed;
        write_out(out, &format!("{}\n", verdict.line()))?;
    }
    Ok(if all { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::make::CanonicalRecipe;

    #[test]
    fn soft_links_without_force_are_flagged() {
        let mut snap = RecipeSnapshot { commit: "c".into(), commands: Default::default() };
        snap.commands.insert("libx.so.1".into(), CanonicalRecipe::from_text("ln -s libx.so.1.7.10 libx.so.1".into()));
        snap.commands.insert("liby.so.1".into(), CanonicalRecipe::from_text("rm -f a; ln -sf liby.so.2 liby.so.1".into()));
        snap.commands.insert("hard".into(), CanonicalRecipe::from_text("ln a hard".into()));
        let w = soft_link_warnings(&snap);
        assert_eq!(w.len(), 1);
        assert!(w[0].starts_with("recipe of libx.so.1"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Usage("x".into()).exit_code(), 3);
        assert_eq!(PipelineError::Store(StoreError::StateMissing("/s".into())).exit_code(), 3);
        let bf = TraceError::BuildFailed { status: 2, stderr_tail: String::new() };
        assert_eq!(PipelineError::Trace(bf).exit_code(), 2);
    }
}
