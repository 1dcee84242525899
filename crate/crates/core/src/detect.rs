//! Comparing the actual graph with the declared graph.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::{DependencyGraph, Provenance, TargetNode};
use crate::make::DeclaredGraph;
use crate::path::ProjectPath;
use crate::util::{escape_field, unescape_field};

pub const REPORT_HEADER: &str = "#depsentry-report v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FindingKind {
    MissingDependency,
    RedundantDependency,
}

impl FindingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingKind::MissingDependency => "MD",
            FindingKind::RedundantDependency => "RD",
        }
    }

    pub fn parse(s: &str) -> Option<FindingKind> {
        match s {
            "MD" => Some(FindingKind::MissingDependency),
            "RD" => Some(FindingKind::RedundantDependency),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Evidence {
    Trace,
    Inferred,
    Historical,
}

impl Evidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Evidence::Trace => "trace",
            Evidence::Inferred => "inferred",
            Evidence::Historical => "historical",
        }
    }

    pub fn parse(s: &str) -> Option<Evidence> {
        match s {
            "trace" => Some(Evidence::Trace),
            "inferred" => Some(Evidence::Inferred),
            "historical" => Some(Evidence::Historical),
            _ => None,
        }
    }

    fn of(node: Option<&TargetNode>, commit: &str) -> Evidence {
        match node {
            Some(n) if n.last_updated_commit == commit => match n.provenance {
                Provenance::CleanTrace | Provenance::IncrementalTrace => Evidence::Trace,
                Provenance::Inferred | Provenance::Declared => Evidence::Inferred,
            },
            _ => Evidence::Historical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub kind: FindingKind,
    pub target: ProjectPath,
    pub dependency: ProjectPath,
    pub evidence: Evidence,
    pub commit: String,
    /// Shown in the human format only.
    pub note: Option<String>,
}

impl Finding {
    fn sort_key(&self) -> (&ProjectPath, FindingKind, &ProjectPath) {
        (&self.target, self.kind, &self.dependency)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportStats {
    pub targets_compared: u64,
    pub externals_dropped: u64,
    pub unresolved_includes: u64,
    pub failed_rebuilds: u64,
}

impl ReportStats {
    pub fn entries(&self) -> [(&'static str, u64); 4] {
        [
            ("targets_compared", self.targets_compared),
            ("externals_dropped", self.externals_dropped),
            ("unresolved_includes", self.unresolved_includes),
            ("failed_rebuilds", self.failed_rebuilds),
        ]
    }

    pub fn set(&mut self, name: &str, value: u64) {
        match name {
            "targets_compared" => self.targets_compared = value,
            "externals_dropped" => self.externals_dropped = value,
            "unresolved_includes" => self.unresolved_includes = value,
            "failed_rebuilds" => self.failed_rebuilds = value,
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ErrorReport {
    pub commit: String,
    pub findings: Vec<Finding>,
    pub warnings: Vec<String>,
    pub stats: ReportStats,
}

impl ErrorReport {
    pub fn count(&self, kind: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }

    pub fn sort(&mut self) {
        self.findings.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    }
}

/// Missing dependencies are actual but undeclared; redundant ones are
/// declared but not actual. Targets only the declared graph knows about
/// were not built here and only produce a warning.
pub fn detect(actual: &DependencyGraph, declared: &DeclaredGraph, commit: &str) -> ErrorReport {
    let mut report = ErrorReport { commit: commit.to_string(), ..Default::default() };
    let empty = BTreeSet::new();
    let mut undeclared = Vec::new();
    for node in actual.nodes() {
        let t = &node.target;
        if declared.phony.contains(t) {
            continue;
        }
        let evidence = Evidence::of(Some(node), commit);
        let decl = match declared.graph.deps(t) {
            Some(d) => d,
            None => {
                undeclared.push(t.clone());
                &empty
            }
        };
        report.stats.targets_compared += 1;
        for d in node.deps.difference(decl) {
            report.findings.push(Finding {
                kind: FindingKind::MissingDependency,
                target: t.clone(),
                dependency: d.clone(),
                evidence,
                commit: commit.to_string(),
                note: None,
            });
        }
        for d in decl.difference(&node.deps) {
            let order_only = declared.order_only.contains(&(t.clone(), d.clone()));
            report.findings.push(Finding {
                kind: FindingKind::RedundantDependency,
                target: t.clone(),
                dependency: d.clone(),
                evidence,
                commit: commit.to_string(),
                note: order_only.then(|| "order-only prerequisite".to_string()),
            });
        }
    }
    for t in undeclared {
        report.warnings.push(format!("{t} is built but no rule declares it; all its dependencies are reported missing"));
    }
    let unbuilt: Vec<&ProjectPath> = declared.with_recipe.iter().filter(|t| !actual.contains(t)).collect();
    if !unbuilt.is_empty() {
        let names: Vec<&str> = unbuilt.iter().map(|t| t.as_str()).collect();
        report.warnings.push(format!("declared targets not built in this configuration: {}", names.join(" ")));
    }
    report.sort();
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Human,
    Machine,
}

pub fn render(report: &ErrorReport, format: Format) -> String {
    match format {
        Format::Machine => render_machine(&report.findings),
        Format::Human => render_human(report),
    }
}

pub fn render_machine(findings: &[Finding]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for f in findings {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            f.kind.as_str(),
            escape_field(f.target.as_str()),
            escape_field(f.dependency.as_str()),
            f.evidence.as_str(),
            escape_field(&f.commit)
        );
    }
    out
}

fn render_human(report: &ErrorReport) -> String {
    let mut out = format!("depsentry report for commit {}\n", report.commit);
    let n = report.findings.len();
    if n == 0 {
        out.push_str("0 findings\n");
    } else {
        let md = report.count(FindingKind::MissingDependency);
        let _ = writeln!(out, "{n} finding{} ({md} MD, {} RD)", if n == 1 { "" } else { "s" }, n - md);
        let mut current: Option<&ProjectPath> = None;
        for f in &report.findings {
            if current != Some(&f.target) {
                let _ = writeln!(out, "{}", f.target);
                current = Some(&f.target);
            }
            let label = match f.kind {
                FindingKind::MissingDependency => "missing  ",
                FindingKind::RedundantDependency => "redundant",
            };
            let _ = write!(out, "  {} {} {}  [{}]", f.kind.as_str(), label, f.dependency, f.evidence.as_str());
            if let Some(note) = &f.note {
                let _ = write!(out, " ({note})");
            }
            out.push('\n');
        }
    }
    if !report.warnings.is_empty() {
        out.push_str("warnings:\n");
        for w in &report.warnings {
            let _ = writeln!(out, "  - {w}");
        }
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("report line {line}: {msg}")]
pub struct ReportParseError {
    pub line: usize,
    pub msg: String,
}

/// Reads the machine format back.
pub fn parse_machine(text: &str) -> Result<Vec<Finding>, ReportParseError> {
    let err = |line: usize, msg: &str| ReportParseError { line, msg: msg.to_string() };
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(err(1, "missing report header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(err(n, "expected 5 fields"));
        }
        let kind = FindingKind::parse(f[0]).ok_or_else(|| err(n, "unknown kind"))?;
        let pp = |s: &str| {
            let s = unescape_field(s).map_err(|m| err(n, &m))?;
            ProjectPath::new(&s).map_err(|e| err(n, &e.to_string()))
        };
        out.push(Finding {
            kind,
            target: pp(f[1])?,
            dependency: pp(f[2])?,
            evidence: Evidence::parse(f[3]).ok_or_else(|| err(n, "unknown evidence"))?,
            commit: unescape_field(f[4]).map_err(|m| err(n, &m))?,
            note: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphKind;

    fn p(s: &str) -> ProjectPath {
        ProjectPath::new(s).unwrap()
    }

    fn graph(edges: &[(&str, &[&str])], prov: Provenance, commit: &str) -> DependencyGraph {
        DependencyGraph::from_nodes(
            GraphKind::Actual,
            commit,
            edges.iter().map(|(t, ds)| {
                let mut n = TargetNode::new(p(t), prov, commit);
                n.deps = ds.iter().map(|d| p(d)).collect();
                n
            }),
        )
        .unwrap()
    }

    fn declared(edges: &[(&str, &[&str])]) -> DeclaredGraph {
        let mut g = graph(edges, Provenance::Declared, "c");
        g.kind = GraphKind::Declared;
        DeclaredGraph {
            with_recipe: g.targets().cloned().collect(),
            graph: g,
            external_dropped: 0,
            order_only: BTreeSet::new(),
            phony: BTreeSet::new(),
        }
    }

    const SIX: &[&str] = &["src/fzy.c", "src/fzy.h", "src/match.h", "src/tty.h", "src/choices.h", "src/options.h"];
    const FOUR: &[&str] = &["src/fzy.c", "src/fzy.h", "src/choices.h", "src/options.h"];

    #[test]
    fn fzy_missing_dependencies() {
        let actual = graph(&[("src/fzy.o", SIX)], Provenance::IncrementalTrace, "f061893");
        let r = detect(&actual, &declared(&[("src/fzy.o", FOUR)]), "f061893");
        let got: Vec<(&str, &str)> = r.findings.iter().map(|f| (f.kind.as_str(), f.dependency.as_str())).collect();
        assert_eq!(got, vec![("MD", "src/match.h"), ("MD", "src/tty.h")]);
        assert!(r.findings.iter().all(|f| f.evidence == Evidence::Trace));
        assert_eq!(
            render(&r, Format::Machine),
            "#depsentry-report v1\nMD\tsrc/fzy.o\tsrc/match.h\ttrace\tf061893\nMD\tsrc/fzy.o\tsrc/tty.h\ttrace\tf061893\n"
        );
    }

    #[test]
    fn identical_graphs_have_no_findings() {
        let actual = graph(&[("src/fzy.o", FOUR)], Provenance::CleanTrace, "c");
        let r = detect(&actual, &declared(&[("src/fzy.o", FOUR)]), "c");
        assert!(r.findings.is_empty());
        assert_eq!(render(&r, Format::Human), "depsentry report for commit c\n0 findings\n");
    }

    #[test]
    fn extra_declared_dep_is_redundant() {
        let actual = graph(&[("src/fzy.o", FOUR)], Provenance::CleanTrace, "c0");
        let mut decl: Vec<&str> = FOUR.to_vec();
        decl.push("src/x.h");
        let r = detect(&actual, &declared(&[("src/fzy.o", &decl)]), "c1");
        assert_eq!(r.findings.len(), 1);
        assert_eq!(r.findings[0].kind, FindingKind::RedundantDependency);
        assert_eq!(r.findings[0].dependency, p("src/x.h"));
        assert_eq!(r.findings[0].evidence, Evidence::Historical);
    }

    #[test]
    fn order_only_and_declared_only() {
        let actual = graph(&[("a.o", &["a.c"]), ("gen.c", &["gen.sh"])], Provenance::CleanTrace, "c");
        let mut d = declared(&[("a.o", &["a.c", "objdir"]), ("unbuilt", &["a.o"])]);
        d.order_only.insert((p("a.o"), p("objdir")));
        let r = detect(&actual, &d, "c");
        let rd = r.findings.iter().find(|f| f.kind == FindingKind::RedundantDependency).unwrap();
        assert_eq!(rd.note.as_deref(), Some("order-only prerequisite"));
        assert!(r.findings.iter().any(|f| f.target == p("gen.c") && f.kind == FindingKind::MissingDependency));
        assert!(r.warnings.iter().any(|w| w.contains("unbuilt")));
        assert!(r.warnings.iter().any(|w| w.starts_with("gen.c is built")));
        assert!(render(&r, Format::Human).contains("(order-only prerequisite)"));
    }

    #[test]
    fn machine_round_trip() {
        let actual = graph(&[("a.o", &["a.c", "b h"])], Provenance::CleanTrace, "c");
        let r = detect(&actual, &declared(&[("a.o", &["a.c", "z.h"])]), "c");
        let text = render(&r, Format::Machine);
        assert_eq!(parse_machine(&text).unwrap(), r.findings);
        assert!(parse_machine("MD\ta\tb\ttrace\tc\n").is_err());
    }
}
