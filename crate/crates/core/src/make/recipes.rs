//! Per-target recipe text from `make -n -B --debug=basic`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;

use super::MakeError;
use crate::util::{escape_field, sha256_hex, unescape_field};

/// A canonical recipe. Only the hash survives persistence; the text is
/// available for the snapshot taken in the current run.
#[derive(Debug, Clone, Eq)]
pub struct CanonicalRecipe {
    pub hash: String,
    pub text: Option<String>,
}

impl PartialEq for CanonicalRecipe {
    fn eq(&self, other: &Self) -> bool {
        self.hash == other.hash
    }
}

impl CanonicalRecipe {
    pub fn from_text(text: String) -> CanonicalRecipe {
        CanonicalRecipe { hash: sha256_hex(text.as_bytes()), text: Some(text) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecipeSnapshot {
    pub commit: String,
    pub commands: BTreeMap<String, CanonicalRecipe>,
}

const HEADER: &str = "#depsentry-recipes v1";

static MUST: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*Must remake target '(.*)'\.$").unwrap());
static DONE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*Successfully remade target file '(.*)'\.$").unwrap());
static DEBUG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^\s*(File '.*' does not exist\.|Prerequisite '.*' is (newer|older) than target '.*'\.|No need to remake target '.*'\.|Target '.*' is double-colon and has no prerequisites\.|Failed to remake target file '.*'\.|Cannot remake target '.*'\.|Reading makefiles\.\.\.|Updating makefiles\.\.\.\.|Updating goal targets\.\.\.\.)$",
    )
    .unwrap()
});
static MAKE_MSG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\S*make(\[\d+\])?: ").unwrap());
static ENTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\S*make\[\d+\]: Entering directory '(.*)'$").unwrap());
static LEAVE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\S*make\[\d+\]: Leaving directory '(.*)'$").unwrap());

/// Strips trailing whitespace and, on the first line of a command, the
/// `@`, `-` and `+` recipe prefixes.
pub fn canonical_line(line: &str, first: bool) -> &str {
    let l = line.trim_end();
    if first {
        l.trim_start_matches(|c: char| c == '@' || c == '-' || c == '+' || c.is_whitespace())
    } else {
        l.trim_start()
    }
}

/// Associates each `Must remake target` marker with the commands echoed
/// until the matching `Successfully remade` marker. Targets of sub-makes are
/// named relative to `project_root` when the output says where they ran.
pub fn snapshot_recipes(text: &str, commit: &str, project_root: Option<&std::path::Path>) -> Result<RecipeSnapshot, MakeError> {
    let mut commands: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut open: Vec<String> = Vec::new();
    let mut dirs: Vec<String> = Vec::new();
    let mut saw_marker = false;
    let mut continued = false;
    for line in text.lines() {
        if let Some(c) = ENTER.captures(line) {
            dirs.push(relative_dir(&c[1], project_root));
            continue;
        }
        if LEAVE.is_match(line) {
            dirs.pop();
            continue;
        }
        let prefix = dirs.last().filter(|d| !d.is_empty()).map(|d| format!("{d}/")).unwrap_or_default();
        if let Some(c) = MUST.captures(line) {
            saw_marker = true;
            let t = format!("{prefix}{}", &c[1]);
            commands.entry(t.clone()).or_default();
            open.push(t);
            continue;
        }
        if let Some(c) = DONE.captures(line) {
            let t = format!("{prefix}{}", &c[1]);
            if let Some(pos) = open.iter().rposition(|o| *o == t) {
                open.truncate(pos);
            }
            continue;
        }
        if DEBUG.is_match(line) {
            saw_marker |= line.trim() == "Updating goal targets....";
            continue;
        }
        if MAKE_MSG.is_match(line) {
            continue;
        }
        if let Some(t) = open.last() {
            let c = canonical_line(line, !continued);
            continued = line.trim_end().ends_with('\\');
            if !c.is_empty() {
                commands.get_mut(t).expect("open target has an entry").push(c.to_string());
            }
        }
    }
    if !saw_marker {
        return Err(MakeError::ParseError {
            line: 1,
            msg: "no `Must remake target` markers; run make with -n -B --debug=basic".into(),
        });
    }
    Ok(RecipeSnapshot {
        commit: commit.to_string(),
        // Targets make "remakes" without running anything (phony
        // aggregates, plain files) have no recipe to compare.
        commands: commands
            .into_iter()
            .filter(|(_, lines)| !lines.is_empty())
            .map(|(t, lines)| (t, CanonicalRecipe::from_text(lines.join("\n"))))
            .collect(),
    })
}

fn relative_dir(abs: &str, root: Option<&std::path::Path>) -> String {
    match root.map(|r| crate::path::normalize_path(abs, r)) {
        Some(Ok(crate::path::Resolved::Project(p))) => p.as_str().to_string(),
        _ => String::new(),
    }
}

/// Targets whose canonical recipe differs, plus targets in only one snapshot.
pub fn diff_recipes(old: &RecipeSnapshot, new: &RecipeSnapshot) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (t, r) in &old.commands {
        if new.commands.get(t) != Some(r) {
            out.insert(t.clone());
        }
    }
    for t in new.commands.keys() {
        if !old.commands.contains_key(t) {
            out.insert(t.clone());
        }
    }
    out
}

impl RecipeSnapshot {
    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER} commit={}\n", self.commit);
        for (t, r) in &self.commands {
            s.push_str(&escape_field(t));
            s.push('\t');
            s.push_str(&r.hash);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<RecipeSnapshot, MakeError> {
        let bad = |line: usize, msg: &str| MakeError::ParseError { line, msg: msg.to_string() };
        let mut lines = text.lines();
        let commit = lines
            .next()
            .and_then(|h| h.strip_prefix(HEADER))
            .and_then(|r| r.trim().strip_prefix("commit="))
            .ok_or_else(|| bad(1, "missing recipe snapshot header"))?
            .to_string();
        let mut commands = BTreeMap::new();
        for (i, l) in lines.enumerate() {
            if l.is_empty() {
                continue;
            }
            let (t, h) = l.split_once('\t').ok_or_else(|| bad(i + 2, "expected target and hash"))?;
            if h.len() != 64 || !h.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(bad(i + 2, "malformed hash"));
            }
            let t = unescape_field(t).map_err(|m| bad(i + 2, &m))?;
            commands.insert(t, CanonicalRecipe { hash: h.to_string(), text: None });
        }
        Ok(RecipeSnapshot { commit, commands })
    }

    pub fn text_of(&self, target: &str) -> Option<&str> {
        self.commands.get(target).and_then(|r| r.text.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DRY: &str = "GNU Make 4.3
Built for x86_64-pc-linux-gnu
Reading makefiles...
Updating makefiles....
Updating goal targets....
 File 'x.o' does not exist.
   File 'outdir' does not exist.
  Must remake target 'outdir'.
mkdir -p outdir
  Successfully remade target file 'outdir'.
Must remake target 'x.o'.
gcc -DX -c x.c -o x.o \\
  -Wall   
echo done
Successfully remade target file 'x.o'.
 File 'log' does not exist.
Must remake target 'log'.
echo a >> log
Successfully remade target file 'log'.
Must remake target 'log'.
echo b >> log
Successfully remade target file 'log'.
Must remake target 'all'.
Successfully remade target file 'all'.
";

    #[test]
    fn associates_commands() {
        let s = snapshot_recipes(DRY, "c1", None).unwrap();
        assert_eq!(s.commands.len(), 3);
        assert_eq!(s.text_of("outdir"), Some("mkdir -p outdir"));
        assert_eq!(s.text_of("x.o"), Some("gcc -DX -c x.c -o x.o \\\n-Wall\necho done"));
        assert_eq!(s.text_of("log"), Some("echo a >> log\necho b >> log"));
        assert_eq!(s.text_of("all"), None);
    }

    #[test]
    fn fzy_flag_change_differs_only_there() {
        let before = "Updating goal targets....\nMust remake target 'src/fzy.o'.\ncc -c -o src/fzy.o src/fzy.c\nSuccessfully remade target file 'src/fzy.o'.\nMust remake target 'src/match.o'.\ncc -c -o src/match.o src/match.c\nSuccessfully remade target file 'src/match.o'.\n";
        let after = before.replace("cc -c -o src/fzy.o", "cc -std=c99 -c -o src/fzy.o");
        let a = snapshot_recipes(before, "c0", None).unwrap();
        let b = snapshot_recipes(&after, "c1", None).unwrap();
        assert_eq!(diff_recipes(&a, &b), ["src/fzy.o".to_string()].into_iter().collect());
        assert_eq!(diff_recipes(&b, &a), diff_recipes(&a, &b));
        assert!(diff_recipes(&a, &a).is_empty());
    }

    #[test]
    fn prefixes_and_whitespace_are_ignored() {
        let a = snapshot_recipes("Must remake target 't'.\n@echo hi  \nSuccessfully remade target file 't'.\n", "a", None).unwrap();
        let b = snapshot_recipes("Must remake target 't'.\n-echo hi\nSuccessfully remade target file 't'.\n", "b", None).unwrap();
        assert!(diff_recipes(&a, &b).is_empty());
    }

    #[test]
    fn added_target_is_reported() {
        let a = snapshot_recipes("Updating goal targets....\n", "a", None).unwrap();
        let b = snapshot_recipes("Must remake target 'n'.\ntouch n\nSuccessfully remade target file 'n'.\n", "b", None).unwrap();
        assert_eq!(diff_recipes(&a, &b), ["n".to_string()].into_iter().collect());
    }

    #[test]
    fn submake_targets_are_prefixed() {
        let text = "Must remake target 'sub'.\nmake -C lib\nmake[1]: Entering directory '/p/lib'\nMust remake target 'l.o'.\ncc -c l.c\nSuccessfully remade target file 'l.o'.\nmake[1]: Leaving directory '/p/lib'\nSuccessfully remade target file 'sub'.\n";
        let s = snapshot_recipes(text, "c", Some(std::path::Path::new("/p"))).unwrap();
        assert_eq!(s.text_of("lib/l.o"), Some("cc -c l.c"));
        assert_eq!(s.text_of("sub"), Some("make -C lib"));
    }

    #[test]
    fn missing_markers() {
        assert!(snapshot_recipes("gcc -c a.c\n", "c", None).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let s = snapshot_recipes(DRY, "c1", None).unwrap();
        let back = RecipeSnapshot::from_text(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert!(back.text_of("x.o").is_none());
    }
}
