//! Line-oriented trace files.
//!
//! ```text
//! #depsentry-trace v1 root=/abs/project
//! 1	4012	4001	X	make -B
//! 2	4013	4012	S
//! 3	4013	4012	R	/abs/project/src/a.c
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{BuildTrace, Op, TraceError, TraceEvent};
use crate::util::{escape_field, unescape_field};

const MAGIC: &str = "#depsentry-trace v1";

pub fn write_trace(trace: &BuildTrace, path: &Path) -> Result<(), TraceError> {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} root={}", trace.project_root.display());
    for e in &trace.events {
        let _ = write!(out, "{}\t{}\t{}\t{}", e.seq, e.pid, e.ppid, e.op.code());
        if e.op != Op::Spawn {
            out.push('\t');
            out.push_str(&escape_field(&e.path));
        }
        if let Some(p2) = &e.path2 {
            out.push('\t');
            out.push_str(&escape_field(p2));
        }
        out.push('\n');
    }
    crate::util::atomic_write(path, out.as_bytes()).map_err(|e| TraceError::io(format!("writing {}", path.display()), e))
}

pub fn read_trace(path: &Path) -> Result<BuildTrace, TraceError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(TraceError::MissingTrace(path.to_path_buf())),
        Err(e) => return Err(TraceError::io(format!("reading {}", path.display()), e)),
    };
    parse_trace(&text)
}

pub fn parse_trace(text: &str) -> Result<BuildTrace, TraceError> {
    let err = |line: usize, msg: &str| TraceError::TraceParseError { line, msg: msg.to_string() };
    let mut lines = text.lines().enumerate();
    let root = match lines.next() {
        Some((_, h)) => h
            .strip_prefix(MAGIC)
            .and_then(|r| r.trim_start().strip_prefix("root="))
            .map(PathBuf::from)
            .ok_or_else(|| err(1, "missing trace header"))?,
        None => return Err(err(1, "empty trace")),
    };
    let mut events: Vec<TraceEvent> = Vec::new();
    let mut known: std::collections::HashSet<i32> = std::collections::HashSet::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 4 {
            return Err(err(n, "expected at least four fields"));
        }
        let seq: u64 = f[0].parse().map_err(|_| err(n, "bad sequence number"))?;
        let pid: i32 = f[1].parse().map_err(|_| err(n, "bad pid"))?;
        let ppid: i32 = f[2].parse().map_err(|_| err(n, "bad parent pid"))?;
        let op = Op::from_code(f[3]).ok_or_else(|| err(n, "unknown operation"))?;
        let want = match op {
            Op::Spawn => 4,
            Op::Rename => 6,
            _ => 5,
        };
        if f.len() != want {
            return Err(err(n, &format!("operation {} takes {} fields", f[3], want)));
        }
        if let Some(prev) = events.last() {
            if seq <= prev.seq {
                return Err(err(n, "sequence numbers must increase"));
            }
        }
        if events.is_empty() || op == Op::Spawn {
            known.insert(pid);
        } else if !known.contains(&pid) {
            return Err(err(n, &format!("pid {pid} has no spawn event")));
        }
        let path = if op == Op::Spawn { String::new() } else { unescape_field(f[4]).map_err(|m| err(n, &m))? };
        let path2 = if op == Op::Rename { Some(unescape_field(f[5]).map_err(|m| err(n, &m))?) } else { None };
        events.push(TraceEvent { seq, pid, ppid, op, path, path2 });
    }
    Ok(BuildTrace { project_root: root, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "#depsentry-trace v1 root=/p
1\t10\t1\tX\tmake -B
2\t11\t10\tS
3\t11\t10\tX\tgcc -c src/a.c
4\t11\t10\tR\t/p/src/a.c
5\t11\t10\tC\t/p/src/a.o
6\t11\t10\tN\t/p/x.tmp\t/p/x
7\t11\t10\tE\t0
8\t10\t1\tE\t0
";

    #[test]
    fn parses_sample() {
        let t = parse_trace(SAMPLE).unwrap();
        assert_eq!(t.project_root, PathBuf::from("/p"));
        assert_eq!(t.events.len(), 8);
        assert_eq!(t.events[5].path2.as_deref(), Some("/p/x"));
        assert_eq!(t.root_status(), Some(0));
    }

    #[test]
    fn rejects_bad_input() {
        let bad_seq = "#depsentry-trace v1 root=/p\n2\t10\t1\tX\tmake\n1\t10\t1\tE\t0\n";
        assert!(matches!(parse_trace(bad_seq), Err(TraceError::TraceParseError { line: 3, .. })));
        let orphan = "#depsentry-trace v1 root=/p\n1\t10\t1\tX\tmake\n2\t12\t10\tR\t/p/a\n";
        assert!(matches!(parse_trace(orphan), Err(TraceError::TraceParseError { line: 3, .. })));
        assert!(parse_trace("1\t2\t3\tR\tx\n").is_err());
        let bad_op = "#depsentry-trace v1 root=/p\n1\t10\t1\tQ\tx\n";
        assert!(parse_trace(bad_op).is_err());
    }

    fn arb_event_path() -> impl Strategy<Value = String> {
        proptest::string::string_regex("/p/[a-z\t\\\\\n ]{1,12}").unwrap()
    }

    proptest! {
        #[test]
        fn write_read_round_trip(paths in proptest::collection::vec((arb_event_path(), 0u8..6), 1..30)) {
            let mut events = vec![TraceEvent { seq: 1, pid: 10, ppid: 1, op: Op::Exec, path: "make".into(), path2: None }];
            for (i, (p, k)) in paths.into_iter().enumerate() {
                let op = [Op::Read, Op::Write, Op::Create, Op::Delete, Op::Rename, Op::Exit][k as usize];
                let path2 = if op == Op::Rename { Some(format!("{p}.new")) } else { None };
                events.push(TraceEvent { seq: i as u64 + 2, pid: 10, ppid: 1, op, path: p, path2 });
            }
            let t = BuildTrace { project_root: PathBuf::from("/p"), events };
            let dir = tempfile::tempdir().unwrap();
            let f = dir.path().join("t.trace");
            write_trace(&t, &f).unwrap();
            prop_assert_eq!(read_trace(&f).unwrap(), t);
        }
    }
}
