//! Hand-built fixture projects for specific build patterns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::tree::Files;

fn file_map(entries: &[(&str, &str)]) -> Files {
    entries.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// A small fuzzy-finder project where `src/fzy.o` reads six files but its
/// rule names four.
pub mod fzy {
    use super::*;

    pub const BASE: &str = "28195b3";
    pub const HEAD: &str = "f061893";
    pub const HEADERS: &[&str] = &["src/fzy.h", "src/match.h", "src/tty.h", "src/choices.h", "src/options.h"];
    pub const UNITS: &[&str] = &["match", "tty", "choices", "options"];

    fn makefile(fzy_flags: &str) -> String {
        let mut m = String::from(
            "CC = cc\nCFLAGS = -std=c99 -O1 -w\nOBJECTS = src/fzy.o src/match.o src/tty.o src/choices.o src/options.o\n\n\
all: fzy\n\n\
fzy: $(OBJECTS)\n\t$(CC) $(CFLAGS) -o $@ $(OBJECTS)\n\n",
        );
        let _ = writeln!(
            m,
            "src/fzy.o: src/fzy.c src/fzy.h src/choices.h src/options.h\n\t$(CC) $(CFLAGS){fzy_flags} -c -o $@ src/fzy.c\n"
        );
        for u in UNITS {
            let _ = writeln!(m, "src/{u}.o: src/{u}.c src/{u}.h\n\t$(CC) $(CFLAGS) -c -o $@ src/{u}.c\n");
        }
        m.push_str(".PHONY: all\n");
        m
    }

    fn fzy_c(body: &str) -> String {
        let mut s = String::from("#include <stdio.h>\n");
        for h in HEADERS {
            let _ = writeln!(s, "#include \"{}\"", h.trim_start_matches("src/"));
        }
        s.push_str(body);
        s
    }

    /// Tree at the parent commit.
    pub fn base() -> Files {
        let mut f = file_map(&[(".gitignore", "*.o\n/fzy\n/.depsentry/\n")]);
        f.insert("Makefile".into(), makefile(""));
        f.insert("src/fzy.c".into(), fzy_c("int main(void) { return match_score() + tty_width(); }\n"));
        f.insert("src/fzy.h".into(), "#pragma once\n#define FZY_VERSION \"0.9\"\n".into());
        for u in UNITS {
            let func = match *u {
                "match" => "match_score",
                "tty" => "tty_width",
                other => other,
            };
            f.insert(format!("src/{u}.h"), format!("#pragma once\nint {func}(void);\n"));
            f.insert(format!("src/{u}.c"), format!("#include \"{u}.h\"\nint {func}(void) {{ return 1; }}\n"));
        }
        f
    }

    /// Tree after the commit: `src/fzy.c` changes without touching its
    /// includes and the compile command for `src/fzy.o` gains a flag.
    pub fn head() -> Files {
        let mut f = base();
        f.insert("Makefile".into(), makefile(" -DFZY_TTY_RESET=1"));
        f.insert(
            "src/fzy.c".into(),
            fzy_c("int main(void) { int w = tty_width(); return match_score() + w; }\n"),
        );
        f
    }

    struct TraceWriter {
        root: String,
        out: String,
        seq: u64,
    }

    impl TraceWriter {
        fn new(root: &str) -> TraceWriter {
            TraceWriter { root: root.to_string(), out: format!("#depsentry-trace v1 root={root}\n"), seq: 0 }
        }
        fn ev(&mut self, pid: i32, ppid: i32, op: char, path: Option<&str>) {
            self.seq += 1;
            let _ = write!(self.out, "{}\t{pid}\t{ppid}\t{op}", self.seq);
            if let Some(p) = path {
                let _ = write!(self.out, "\t{p}");
            }
            self.out.push('\n');
        }
        fn abs(&self, rel: &str) -> String {
            format!("{}/{rel}", self.root)
        }
        /// One recipe process: reads `inputs`, creates `output`.
        fn job(&mut self, pid: i32, cmd: &str, inputs: &[&str], output: &str) {
            self.ev(pid, 100, 'S', None);
            self.ev(pid, 100, 'X', Some(cmd));
            self.ev(pid, 100, 'R', Some("/usr/include/stdio.h"));
            for i in inputs {
                let p = self.abs(i);
                self.ev(pid, 100, 'R', Some(&p));
            }
            let o = self.abs(output);
            self.ev(pid, 100, 'C', Some(&o));
            self.ev(pid, 100, 'E', Some("0"));
        }
    }

    const ROOT: &str = "/fzy";

    /// Recorded clean build of the parent commit.
    pub fn clean_trace() -> String {
        let mut t = TraceWriter::new(ROOT);
        t.ev(100, 1, 'X', Some("make -B"));
        t.ev(100, 1, 'R', Some("/fzy/Makefile"));
        let mut inputs = vec!["src/fzy.c"];
        inputs.extend_from_slice(HEADERS);
        t.job(101, "cc -std=c99 -O1 -w -c -o src/fzy.o src/fzy.c", &inputs, "src/fzy.o");
        let mut pid = 102;
        for u in UNITS {
            let (c, h, o) = (format!("src/{u}.c"), format!("src/{u}.h"), format!("src/{u}.o"));
            t.job(pid, &format!("cc -std=c99 -O1 -w -c -o {o} {c}"), &[&c, &h], &o);
            pid += 1;
        }
        t.job(pid, "cc -std=c99 -O1 -w -o fzy src/fzy.o src/match.o src/tty.o src/choices.o src/options.o", &objects(), "fzy");
        t.ev(100, 1, 'E', Some("0"));
        t.out
    }

    fn objects() -> Vec<&'static str> {
        vec!["src/fzy.o", "src/match.o", "src/tty.o", "src/choices.o", "src/options.o"]
    }

    /// Recorded incremental build of the commit: the compile of `src/fzy.o`
    /// is seen reading only `src/fzy.c` and `src/fzy.h`.
    pub fn incremental_trace() -> String {
        let mut t = TraceWriter::new(ROOT);
        t.ev(100, 1, 'X', Some("make"));
        t.ev(100, 1, 'R', Some("/fzy/Makefile"));
        t.job(101, "cc -std=c99 -O1 -w -DFZY_TTY_RESET=1 -c -o src/fzy.o src/fzy.c", &["src/fzy.c", "src/fzy.h"], "src/fzy.o");
        t.job(102, "cc -std=c99 -O1 -w -o fzy src/fzy.o src/match.o src/tty.o src/choices.o src/options.o", &objects(), "fzy");
        t.ev(100, 1, 'E', Some("0"));
        t.out
    }

    /// Trace files named the way replay mode looks them up.
    pub fn golden_traces() -> Files {
        let mut f = Files::new();
        f.insert("clean.trace".into(), clean_trace());
        f.insert(format!("{HEAD}.incremental.trace"), incremental_trace());
        f
    }
}

/// Objects built by a pattern rule from `src/*.c` with no header
/// prerequisites, as in command-line package managers of that style.
pub mod clib {
    use super::*;

    /// Resolved includes per project header (project-internal only).
    fn header_edges() -> BTreeMap<&'static str, Vec<&'static str>> {
        BTreeMap::from([
            ("src/common.h", vec!["deps/strdup/strdup.h"]),
            ("deps/strdup/strdup.h", vec![]),
            ("deps/list/list.h", vec!["deps/list/list_node.h"]),
            ("deps/list/list_node.h", vec![]),
            ("src/version.h", vec![]),
        ])
    }

    fn source_edges() -> BTreeMap<&'static str, Vec<&'static str>> {
        BTreeMap::from([
            ("src/clib.c", vec!["src/common.h", "deps/list/list.h", "src/version.h"]),
            ("src/clib-search.c", vec!["src/common.h"]),
            ("src/clib-install.c", vec!["deps/list/list.h"]),
            ("src/util.c", vec![]),
        ])
    }

    pub fn files() -> Files {
        let f = file_map(&[
            (".gitignore", "*.o\n/clib\n/.depsentry/\n"),
            (
                "Makefile",
                "CC = cc\nCFLAGS = -std=c99 -w -Ideps\nSRC = $(wildcard src/*.c)\nOBJS = $(SRC:.c=.o)\n\n\
all: clib\n\n\
clib: $(OBJS)\n\t$(CC) -o $@ $(OBJS)\n\n\
src/%.o: src/%.c\n\t$(CC) $(CFLAGS) -c -o $@ $<\n\n\
.PHONY: all\n",
            ),
            ("src/common.h", "#pragma once\n#include \"strdup/strdup.h\"\n#define CLIB_COMMON 1\n"),
            ("deps/strdup/strdup.h", "#pragma once\n#include <stddef.h>\nchar *strdup_copy(const char *s);\n"),
            ("deps/list/list.h", "#pragma once\n#include \"list_node.h\"\ntypedef struct { list_node_t *head; } list_t;\n"),
            ("deps/list/list_node.h", "#pragma once\ntypedef struct list_node { struct list_node *next; } list_node_t;\n"),
            ("src/version.h", "#pragma once\n#define CLIB_VERSION \"1.8.0\"\n"),
            ("src/clib.c", "#include <stdio.h>\n#include \"common.h\"\n#include \"list/list.h\"\n#include \"version.h\"\nint main(void) { return 0; }\n"),
            ("src/clib-search.c", "#include \"common.h\"\nint clib_search(void) { return CLIB_COMMON; }\n"),
            ("src/clib-install.c", "#include <string.h>\n#include \"list/list.h\"\nint clib_install(void) { return 0; }\n"),
            ("src/util.c", "#include <string.h>\nint clib_util(void) { return (int)strlen(\"x\"); }\n"),
        ]);
        f
    }

    /// Object → project headers its compile reads.
    pub fn include_manifest() -> BTreeMap<String, BTreeSet<String>> {
        let edges = header_edges();
        let mut out = BTreeMap::new();
        for (src, incs) in source_edges() {
            let mut seen = BTreeSet::new();
            let mut stack: Vec<&str> = incs.clone();
            while let Some(h) = stack.pop() {
                if seen.insert(h.to_string()) {
                    stack.extend(edges[h].iter().copied());
                }
            }
            out.insert(src.replace(".c", ".o"), seen);
        }
        out
    }
}

/// A versioned shared library whose unversioned link is made by `ln`.
pub mod libx {
    use super::*;

    pub const OLD: &str = "1.7.9";
    pub const NEW: &str = "1.7.10";

    /// `force` selects `ln -sf` over an error-ignored `ln -s`.
    pub fn files(version: &str, force: bool) -> Files {
        let ln = if force { "ln -sf" } else { "-ln -s" };
        let make = format!(
            "CC = cc\nLIBVERSION = {version}\nSHARED = libx.so\n\n\
all: $(SHARED).1\n\n\
x.o: x.c x.h\n\t$(CC) -fPIC -w -c -o $@ x.c\n\n\
$(SHARED).$(LIBVERSION): x.o\n\t$(CC) -shared -o $@ x.o\n\n\
$(SHARED).1: $(SHARED).$(LIBVERSION)\n\t{ln} $(SHARED).$(LIBVERSION) $@\n\n\
.PHONY: all\n"
        );
        let mut f = file_map(&[
            (".gitignore", "*.o\nlibx.so*\n/.depsentry/\n"),
            ("x.h", "#pragma once\nint x_value(void);\n"),
            ("x.c", "#include \"x.h\"\nint x_value(void) { return 7; }\n"),
        ]);
        f.insert("Makefile".into(), make);
        f
    }
}

/// Phony targets chained in front of the real one: all → build → app.
pub mod phony_chain {
    use super::*;

    pub const PHONY: &[&str] = &["all", "build", "install", "clean"];

    pub fn files() -> Files {
        file_map(&[
            (".gitignore", "*.o\n/app\n/stage/\n/.depsentry/\n"),
            (
                "Makefile",
                "CC = cc\n\n\
all: build\n\n\
build: app\n\t@echo built app\n\n\
install: build\n\tmkdir -p stage && cp app stage/app\n\n\
app: main.o util.o\n\t$(CC) -o $@ main.o util.o\n\n\
main.o: main.c\n\t$(CC) -w -c -o $@ main.c\n\n\
util.o: util.c util.h\n\t$(CC) -w -c -o $@ util.c\n\n\
clean:\n\trm -f app *.o\n\n\
.PHONY: all build install clean\n",
            ),
            ("main.h", "#pragma once\n#define MAIN_RET 0\n"),
            ("util.h", "#pragma once\nint util(void);\n"),
            ("main.c", "#include \"main.h\"\n#include \"util.h\"\nint main(void) { return MAIN_RET + util() - 1; }\n"),
            ("util.c", "#include \"util.h\"\nint util(void) { return 1; }\n"),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fzy_head_differs_only_where_intended() {
        let (b, h) = (fzy::base(), fzy::head());
        let changed: Vec<&String> = b.keys().filter(|k| b[*k] != h[*k]).collect();
        assert_eq!(changed, ["Makefile", "src/fzy.c"]);
    }

    #[test]
    fn clib_manifest() {
        let m = clib::include_manifest();
        assert_eq!(m["src/clib.o"].len(), 5);
        assert!(m["src/util.o"].is_empty());
    }

    #[test]
    fn fzy_traces_have_headers() {
        let t = fzy::clean_trace();
        assert!(t.starts_with("#depsentry-trace v1 root=/fzy\n"));
        assert_eq!(t.matches("/fzy/src/tty.h").count(), 2);
    }
}
