//! Seeded synthetic C projects with known include structure and injected
//! dependency errors, plus scripted commit sequences over them.
//!
//! Layout: `src/*.c` compiled to `src/*.o` and linked into `app`; headers in
//! `include/`; one generated header `gen/config.h` written by
//! `gen/config.sh`. `src/main.c` always includes the generated header and
//! declares it, so a serial build generates it first. Other sources may
//! include it without declaring it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tree::Files;

pub const GENERATED: &str = "config.h";
pub const APP: &str = "app";

#[derive(Debug, Clone)]
pub struct Header {
    /// Edges only go to headers of strictly higher rank, so includes are acyclic.
    pub rank: u32,
    pub id: u32,
    pub includes: Vec<String>,
    pub value: u32,
}

#[derive(Debug, Clone)]
pub struct Source {
    pub stem: String,
    pub id: u32,
    pub includes: Vec<String>,
    /// Headers named as prerequisites of the object.
    pub declared: BTreeSet<String>,
    pub flag: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    AddInclude,
    AddHeaderInclude,
    RemoveInclude,
    AddSource,
    DeleteSource,
    RenameHeader,
    RenameSource,
    RecipeEdit,
    HeaderEdit,
    GeneratorEdit,
    AddHeader,
    NoOp,
}

/// The commit script every generated fixture runs: each kind at least once.
pub const SCRIPT: &[Step] = &[
    Step::AddInclude,
    Step::RecipeEdit,
    Step::NoOp,
    Step::AddSource,
    Step::RemoveInclude,
    Step::RenameHeader,
    Step::HeaderEdit,
    Step::AddHeaderInclude,
    Step::DeleteSource,
    Step::RenameSource,
    Step::GeneratorEdit,
    Step::AddHeader,
    Step::RecipeEdit,
];

#[derive(Debug, Clone)]
pub struct GenProject {
    pub headers: BTreeMap<String, Header>,
    /// `sources[0]` is `main`.
    pub sources: Vec<Source>,
    pub generated: bool,
    pub gen_value: u32,
    readme: u32,
    next_id: u32,
    rng: ChaCha8Rng,
}

impl GenProject {
    /// `n_sources` compiled sources including `main.c`.
    pub fn new(n_sources: usize, seed: u64) -> GenProject {
        GenProject::build(n_sources, seed, true, true)
    }

    /// Every declared list is exact: no injected errors, no generated header.
    pub fn clean(n_sources: usize, seed: u64) -> GenProject {
        GenProject::build(n_sources, seed, false, false)
    }

    fn build(n_sources: usize, seed: u64, errors: bool, generated: bool) -> GenProject {
        assert!(n_sources >= 1);
        let mut g = GenProject {
            headers: BTreeMap::new(),
            sources: Vec::new(),
            generated,
            gen_value: 1,
            readme: 0,
            next_id: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let n_headers = (n_sources * 2 / 3).max(3);
        for i in 0..n_headers {
            let id = g.fresh();
            g.headers.insert(format!("h{id}.h"), Header { rank: (i as u32 + 1) * 10, id, includes: Vec::new(), value: id });
        }
        let names: Vec<String> = g.headers.keys().cloned().collect();
        for name in &names {
            let rank = g.headers[name].rank;
            let higher: Vec<String> = names.iter().filter(|n| g.headers[*n].rank > rank).cloned().collect();
            let k = g.rng.gen_range(0..=2usize).min(higher.len());
            let picks: Vec<String> = higher.choose_multiple(&mut g.rng, k).cloned().collect();
            g.headers.get_mut(name).unwrap().includes = picks;
        }
        for i in 0..n_sources {
            let stem = if i == 0 { "main".to_string() } else { format!("u{}", g.next_id) };
            let s = g.new_source(stem, errors);
            g.sources.push(s);
        }
        g
    }

    fn fresh(&mut self) -> u32 {
        self.next_id += 1;
        self.next_id
    }

    fn new_source(&mut self, stem: String, errors: bool) -> Source {
        let id = self.fresh();
        let names: Vec<String> = self.headers.keys().cloned().collect();
        let k = self.rng.gen_range(1..=3usize).min(names.len());
        let mut includes: Vec<String> = names.choose_multiple(&mut self.rng, k).cloned().collect();
        includes.sort();
        let is_main = stem == "main";
        if self.generated && (is_main || self.rng.gen_bool(0.3)) {
            includes.push(GENERATED.to_string());
        }
        let mut s = Source { stem, id, includes, declared: BTreeSet::new(), flag: 0 };
        let mut declared = self.closure(&s);
        if !is_main {
            declared.remove(GENERATED);
        }
        if errors {
            let candidates: Vec<String> = declared.iter().filter(|h| h.as_str() != GENERATED).cloned().collect();
            if !candidates.is_empty() && self.rng.gen_bool(0.4) {
                let drop = candidates.choose(&mut self.rng).unwrap().clone();
                declared.remove(&drop);
            }
            let unused: Vec<String> = names.iter().filter(|h| !self.closure(&s).contains(*h)).cloned().collect();
            if !unused.is_empty() && self.rng.gen_bool(0.3) {
                declared.insert(unused.choose(&mut self.rng).unwrap().clone());
            }
        }
        s.declared = declared;
        s
    }

    pub fn header_path(name: &str) -> String {
        if name == GENERATED {
            format!("gen/{name}")
        } else {
            format!("include/{name}")
        }
    }

    /// Header names reachable from a source through includes.
    pub fn closure(&self, s: &Source) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<String> = s.includes.clone();
        while let Some(h) = stack.pop() {
            if !seen.insert(h.clone()) {
                continue;
            }
            if let Some(hd) = self.headers.get(&h) {
                stack.extend(hd.includes.iter().cloned());
            }
        }
        seen
    }

    pub fn object(s: &Source) -> String {
        format!("src/{}.o", s.stem)
    }

    /// Object → the files its compile reads inside the project.
    pub fn include_manifest(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out = BTreeMap::new();
        for s in &self.sources {
            let mut set: BTreeSet<String> = self.closure(s).iter().map(|h| GenProject::header_path(h)).collect();
            set.insert(format!("src/{}.c", s.stem));
            out.insert(GenProject::object(s), set);
        }
        out
    }

    /// (MD, RD) pairs the declared lists contain by construction.
    pub fn expected_errors(&self) -> (BTreeSet<(String, String)>, BTreeSet<(String, String)>) {
        let mut md = BTreeSet::new();
        let mut rd = BTreeSet::new();
        for s in &self.sources {
            let o = GenProject::object(s);
            let actual: BTreeSet<String> = self.closure(s);
            for h in actual.difference(&s.declared) {
                md.insert((o.clone(), GenProject::header_path(h)));
            }
            for h in s.declared.difference(&actual) {
                rd.insert((o.clone(), GenProject::header_path(h)));
            }
        }
        (md, rd)
    }

    pub fn files(&self) -> Files {
        let mut f = Files::new();
        f.insert(".gitignore".into(), "*.o\n/app\n/gen/*.h\n/.depsentry/\n".into());
        f.insert("README".into(), format!("generated fixture, revision {}\n", self.readme));
        f.insert("Makefile".into(), self.makefile());
        if self.generated {
            f.insert("gen/config.sh".into(), format!("echo '#define CONFIG_VALUE {}'\n", self.gen_value));
        }
        for (name, h) in &self.headers {
            let mut body = String::from("#pragma once\n");
            for i in &h.includes {
                let _ = writeln!(body, "#include \"{i}\"");
            }
            let _ = writeln!(body, "#define H{}_VALUE {}", h.id, h.value);
            f.insert(GenProject::header_path(name), body);
        }
        for s in &self.sources {
            let mut body = String::new();
            for i in &s.includes {
                let _ = writeln!(body, "#include \"{i}\"");
            }
            if s.stem == "main" {
                body.push_str("int main(void) { return 0; }\n");
            } else {
                let _ = writeln!(body, "int unit_{}(void) {{ return {}; }}", s.id, s.id);
            }
            f.insert(format!("src/{}.c", s.stem), body);
        }
        f
    }

    pub fn makefile(&self) -> String {
        let mut m = String::new();
        m.push_str("CC = cc\nCFLAGS = -O0 -w\nCPPFLAGS = -Iinclude -Igen\n");
        let objs: Vec<String> = self.sources.iter().map(GenProject::object).collect();
        let _ = writeln!(m, "OBJS = {}\n", objs.join(" "));
        let _ = writeln!(m, "all: {APP}\n");
        let _ = writeln!(m, "{APP}: $(OBJS)\n\t$(CC) -o $@ $(filter %.o,$^)\n");
        if self.generated {
            m.push_str("gen/config.h: gen/config.sh\n\tsh gen/config.sh > $@\n\n");
        }
        for s in &self.sources {
            let mut pre = vec![format!("src/{}.c", s.stem)];
            pre.extend(s.declared.iter().map(|h| GenProject::header_path(h)));
            let _ = writeln!(
                m,
                "{}: {}\n\t$(CC) $(CFLAGS) $(CPPFLAGS) -DUNIT_FLAG={} -c -o $@ $(filter %.c,$^)\n",
                GenProject::object(s),
                pre.join(" "),
                s.flag
            );
        }
        m.push_str("clean:\n\trm -f app $(OBJS) gen/config.h\n\n.PHONY: all clean\n");
        m
    }

    /// Applies one scripted change and returns a commit message. A step that
    /// cannot apply to the current shape falls back to a header edit.
    pub fn apply(&mut self, step: Step) -> String {
        match self.try_apply(step) {
            Some(msg) => msg,
            None => self.try_apply(Step::HeaderEdit).expect("a header to edit"),
        }
    }

    fn plain_headers(&self) -> Vec<String> {
        self.headers.keys().cloned().collect()
    }

    fn try_apply(&mut self, step: Step) -> Option<String> {
        match step {
            Step::AddInclude => {
                let i = self.rng.gen_range(0..self.sources.len());
                let have: BTreeSet<String> = self.sources[i].includes.iter().cloned().collect();
                let cand: Vec<String> = self.plain_headers().into_iter().filter(|h| !have.contains(h)).collect();
                let h = cand.choose(&mut self.rng)?.clone();
                let declare = self.rng.gen_bool(0.5);
                let s = &mut self.sources[i];
                s.includes.push(h.clone());
                if declare {
                    s.declared.insert(h.clone());
                }
                Some(format!("include {h} from {}.c", s.stem))
            }
            Step::AddHeaderInclude => {
                let names = self.plain_headers();
                let mut pairs = Vec::new();
                for a in &names {
                    for b in &names {
                        let (ha, hb) = (&self.headers[a], &self.headers[b]);
                        if ha.rank < hb.rank && !ha.includes.contains(b) {
                            pairs.push((a.clone(), b.clone()));
                        }
                    }
                }
                let (a, b) = pairs.choose(&mut self.rng)?.clone();
                self.headers.get_mut(&a).unwrap().includes.push(b.clone());
                Some(format!("include {b} from {a}"))
            }
            Step::RemoveInclude => {
                let mut options: Vec<(bool, String, usize)> = Vec::new();
                for (si, s) in self.sources.iter().enumerate() {
                    for (k, inc) in s.includes.iter().enumerate() {
                        if inc != GENERATED {
                            options.push((true, si.to_string(), k));
                        }
                    }
                }
                for (name, h) in &self.headers {
                    for k in 0..h.includes.len() {
                        options.push((false, name.clone(), k));
                    }
                }
                let (is_src, key, k) = options.choose(&mut self.rng)?.clone();
                if is_src {
                    let s = &mut self.sources[key.parse::<usize>().unwrap()];
                    let gone = s.includes.remove(k);
                    Some(format!("drop include {gone} from {}.c", s.stem))
                } else {
                    let gone = self.headers.get_mut(&key).unwrap().includes.remove(k);
                    Some(format!("drop include {gone} from {key}"))
                }
            }
            Step::AddSource => {
                let stem = format!("u{}", self.next_id + 1);
                let s = self.new_source(stem, true);
                let msg = format!("add {}.c", s.stem);
                self.sources.push(s);
                Some(msg)
            }
            Step::DeleteSource => {
                if self.sources.len() < 3 {
                    return None;
                }
                let i = self.rng.gen_range(1..self.sources.len());
                let s = self.sources.remove(i);
                Some(format!("delete {}.c", s.stem))
            }
            Step::RenameHeader => {
                let old = self.plain_headers().choose(&mut self.rng)?.clone();
                let new = format!("r{}.h", self.fresh());
                let h = self.headers.remove(&old).unwrap();
                self.headers.insert(new.clone(), h);
                let swap = |v: &mut Vec<String>| {
                    for x in v.iter_mut() {
                        if *x == old {
                            *x = new.clone();
                        }
                    }
                };
                for h in self.headers.values_mut() {
                    swap(&mut h.includes);
                }
                for s in &mut self.sources {
                    swap(&mut s.includes);
                    if s.declared.remove(&old) {
                        s.declared.insert(new.clone());
                    }
                }
                Some(format!("rename {old} to {new}"))
            }
            Step::RenameSource => {
                if self.sources.len() < 2 {
                    return None;
                }
                let i = self.rng.gen_range(1..self.sources.len());
                let new = format!("v{}", self.fresh());
                let old = std::mem::replace(&mut self.sources[i].stem, new.clone());
                Some(format!("rename {old}.c to {new}.c"))
            }
            Step::RecipeEdit => {
                let i = self.rng.gen_range(0..self.sources.len());
                let s = &mut self.sources[i];
                s.flag += 1;
                Some(format!("change flags of {}.o", s.stem))
            }
            Step::HeaderEdit => {
                let name = self.plain_headers().choose(&mut self.rng)?.clone();
                self.headers.get_mut(&name).unwrap().value += 100;
                Some(format!("edit {name}"))
            }
            Step::GeneratorEdit => {
                if !self.generated {
                    return None;
                }
                self.gen_value += 1;
                Some("edit gen/config.sh".to_string())
            }
            Step::AddHeader => {
                let names = self.plain_headers();
                let includer = names.choose(&mut self.rng)?.clone();
                let id = self.fresh();
                let rank = self.headers[&includer].rank + 1;
                let new = format!("h{id}.h");
                self.headers.insert(new.clone(), Header { rank, id, includes: Vec::new(), value: id });
                self.headers.get_mut(&includer).unwrap().includes.push(new.clone());
                Some(format!("add {new} included from {includer}"))
            }
            Step::NoOp => {
                self.readme += 1;
                Some("update README".to_string())
            }
        }
    }
}
