//! Parser for the database GNU Make prints with `make -pn`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;

use super::MakeError;

/// One explicit file rule as Make resolved it (pattern rules already
/// instantiated for the targets the dry run considered).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeclaredRule {
    pub target: String,
    pub prerequisites: Vec<String>,
    pub order_only: Vec<String>,
    pub is_phony: bool,
    pub recipe_lines: Vec<String>,
    pub double_colon: bool,
    /// Target-specific variable assignments, verbatim (`x.o: CFLAGS += -DX`).
    pub target_vars: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MakeVariable {
    pub name: String,
    /// The assignment exactly as printed, e.g. `CFLAGS = -O2` or a `define` block.
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MakeDb {
    pub rules: Vec<DeclaredRule>,
    /// Variables defined in makefiles (not defaults, environment or automatics).
    pub variables: Vec<MakeVariable>,
    pub phony: BTreeSet<String>,
}

impl MakeDb {
    pub fn rule(&self, target: &str) -> Option<&DeclaredRule> {
        self.rules.iter().find(|r| r.target == target)
    }
}

/// Set by make itself even though the database lists them as makefile
/// variables. Copying `MAKEFLAGS` from a `-pn` run would turn later runs
/// into dry runs.
const MAKE_MAINTAINED: &[&str] = &["MAKEFLAGS", "MFLAGS", "CURDIR", "MAKEFILE_LIST", "MAKECMDGOALS", "MAKELEVEL", "MAKE_RESTARTS", "MAKEOVERRIDES"];

const SECTIONS: [&str; 6] = [
    "Variables",
    "Pattern-specific Variable Values",
    "Directories",
    "Implicit Rules",
    "Files",
    "VPATH Search Paths",
];

const SPECIAL_TARGETS: [&str; 17] = [
    ".PHONY",
    ".SUFFIXES",
    ".DEFAULT",
    ".PRECIOUS",
    ".INTERMEDIATE",
    ".NOTINTERMEDIATE",
    ".SECONDARY",
    ".SECONDEXPANSION",
    ".DELETE_ON_ERROR",
    ".IGNORE",
    ".LOW_RESOLUTION_TIME",
    ".SILENT",
    ".EXPORT_ALL_VARIABLES",
    ".NOTPARALLEL",
    ".ONESHELL",
    ".POSIX",
    ".NOEXPORT",
];

static HEADER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^# ([A-Z][A-Za-z-]*)( [A-Z][A-Za-z-]*)*$").unwrap());
static TARGET_VAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[^\s:#=]+(\s+[^\s:#=]+)*\s*:\s*[A-Za-z_.][A-Za-z0-9_.-]*\s*(\+|\?|!|:{1,3})?=").unwrap());
static ASSIGN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^([^\s=:+?!]+)\s*(:{1,3}|\+|\?|!)?=").unwrap());

/// Declared file rules and phony membership from `make -pn` output.
pub fn parse_internal_db(text: &str) -> Result<Vec<DeclaredRule>, MakeError> {
    Ok(parse_database(text)?.rules)
}

#[derive(PartialEq)]
enum Section {
    Preamble,
    Variables,
    Files,
    Other,
}

pub fn parse_database(text: &str) -> Result<MakeDb, MakeError> {
    if text.trim().is_empty() {
        return Err(MakeError::ParseError { line: 1, msg: "empty make database".into() });
    }
    let lines: Vec<&str> = text.lines().collect();
    let mut section = Section::Preamble;
    let mut saw_files = false;
    let mut in_db = false;
    let mut variables = Vec::new();
    let mut raw: Vec<DeclaredRule> = Vec::new();
    let mut phony: BTreeSet<String> = BTreeSet::new();
    let mut tvars: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if line.starts_with("# Make data base") {
            in_db = true;
            i += 1;
            continue;
        }
        if !in_db {
            i += 1;
            continue;
        }
        // Headers follow a blank line or, for `# Files`, the rule-count comment.
        let after_break = i == 0 || lines[i - 1].is_empty() || lines[i - 1].starts_with("# ");
        if after_break && HEADER.is_match(line) {
            let name = &line[2..];
            if !SECTIONS.contains(&name) {
                return Err(MakeError::ParseError { line: i + 1, msg: format!("unrecognized database section {name:?}") });
            }
            section = match name {
                "Variables" => Section::Variables,
                "Files" => {
                    saw_files = true;
                    Section::Files
                }
                _ => Section::Other,
            };
            i += 1;
            continue;
        }
        match section {
            Section::Variables => {
                if let Some(origin) = line.strip_prefix("# ") {
                    let from_makefile = origin.starts_with("makefile") || origin.starts_with("override");
                    if i + 1 < lines.len() && !lines[i + 1].starts_with('#') && !lines[i + 1].is_empty() {
                        let (text, next) = take_assignment(&lines, i + 1);
                        if from_makefile {
                            if let Some(name) = variable_name(&text).filter(|n| !MAKE_MAINTAINED.contains(&n.as_str())) {
                                variables.push(MakeVariable { name, text });
                            }
                        }
                        i = next;
                        continue;
                    }
                }
                i += 1;
            }
            Section::Files => {
                if line.is_empty() || line.starts_with('\t') {
                    i += 1;
                    continue;
                }
                if line.starts_with("# Not a target:") {
                    i = skip_entry(&lines, i + 1);
                    continue;
                }
                if line.starts_with('#') {
                    i += 1;
                    continue;
                }
                if TARGET_VAR.is_match(line) {
                    if let Some((t, _)) = line.split_once(':') {
                        for t in t.split_whitespace() {
                            tvars.entry(t.to_string()).or_default().push(format!("{}:{}", t, line.split_once(':').unwrap().1));
                        }
                    }
                    i += 1;
                    continue;
                }
                let (rule, next) = parse_entry(&lines, i)?;
                if let Some(rule) = rule {
                    if rule.target == ".PHONY" {
                        phony.extend(rule.prerequisites.iter().cloned());
                    } else if !SPECIAL_TARGETS.contains(&rule.target.as_str()) {
                        raw.push(rule);
                    }
                }
                i = next;
            }
            Section::Preamble | Section::Other => i += 1,
        }
    }
    if !saw_files {
        return Err(MakeError::ParseError { line: lines.len(), msg: "no `# Files` section; is this `make -pn` output?".into() });
    }
    // Merge double-colon entries and attach phony flags and target variables.
    let mut merged: Vec<DeclaredRule> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for mut r in raw {
        if let Some(&k) = index.get(&r.target) {
            let m = &mut merged[k];
            for p in r.prerequisites {
                if !m.prerequisites.contains(&p) {
                    m.prerequisites.push(p);
                }
            }
            for p in r.order_only {
                if !m.order_only.contains(&p) {
                    m.order_only.push(p);
                }
            }
            m.recipe_lines.extend(r.recipe_lines);
            m.double_colon |= r.double_colon;
            m.is_phony |= r.is_phony;
            continue;
        }
        r.is_phony |= phony.contains(&r.target);
        index.insert(r.target.clone(), merged.len());
        merged.push(r);
    }
    for r in &mut merged {
        if phony.contains(&r.target) {
            r.is_phony = true;
        }
        if let Some(v) = tvars.remove(&r.target) {
            r.target_vars = v;
        }
    }
    for r in &merged {
        if r.is_phony {
            phony.insert(r.target.clone());
        }
    }
    // Entries with neither prerequisites nor a recipe are files Make merely looked at.
    merged.retain(|r| r.is_phony || !r.prerequisites.is_empty() || !r.order_only.is_empty() || !r.recipe_lines.is_empty());
    Ok(MakeDb { rules: merged, variables, phony })
}

fn variable_name(text: &str) -> Option<String> {
    if let Some(rest) = text.strip_prefix("define ") {
        return rest.split_whitespace().next().map(str::to_string);
    }
    ASSIGN.captures(text).map(|c| c[1].to_string())
}

fn take_assignment(lines: &[&str], start: usize) -> (String, usize) {
    if lines[start].starts_with("define ") {
        let mut j = start;
        let mut out = Vec::new();
        while j < lines.len() {
            out.push(lines[j]);
            j += 1;
            if lines[j - 1] == "endef" {
                break;
            }
        }
        return (out.join("\n"), j);
    }
    (lines[start].to_string(), start + 1)
}

fn skip_entry(lines: &[&str], mut i: usize) -> usize {
    while i < lines.len() && !lines[i].is_empty() {
        i += 1;
    }
    i
}

fn parse_entry(lines: &[&str], start: usize) -> Result<(Option<DeclaredRule>, usize), MakeError> {
    let head = lines[start];
    let (target, rest, double_colon) = match split_rule(head) {
        Some(x) => x,
        None => return Ok((None, skip_entry(lines, start + 1))),
    };
    let (normal, order) = match rest.split_once('|') {
        Some((a, b)) => (a, b),
        None => (rest, ""),
    };
    let mut rule = DeclaredRule {
        target: target.to_string(),
        prerequisites: normal.split_whitespace().map(str::to_string).collect(),
        order_only: order.split_whitespace().map(str::to_string).collect(),
        is_phony: false,
        recipe_lines: Vec::new(),
        double_colon,
        target_vars: Vec::new(),
    };
    let mut i = start + 1;
    let mut builtin = false;
    let mut in_recipe = false;
    while i < lines.len() && !lines[i].is_empty() {
        let l = lines[i];
        if l.starts_with("#  Phony target") {
            rule.is_phony = true;
        } else if l.starts_with("#  Builtin rule") {
            builtin = true;
        } else if l.starts_with("#  recipe to execute") {
            in_recipe = true;
        } else if let Some(cmd) = l.strip_prefix('\t') {
            if in_recipe {
                rule.recipe_lines.push(cmd.to_string());
            }
        }
        i += 1;
    }
    if rule.target.is_empty() || builtin {
        return Ok((None, i));
    }
    Ok((Some(rule), i))
}

/// Splits `target: prereqs` / `target:: prereqs` at the rule colon.
fn split_rule(line: &str) -> Option<(&str, &str, bool)> {
    let bytes = line.as_bytes();
    let mut k = 0;
    while k < bytes.len() {
        match bytes[k] {
            b'\\' => k += 2,
            b':' => {
                let target = line[..k].trim_end();
                if bytes.get(k + 1) == Some(&b':') {
                    return Some((target, &line[k + 2..], true));
                }
                return Some((target, &line[k + 1..], false));
            }
            _ => k += 1,
        }
    }
    None
}
